//! Synthetic caption+image data, degradation model, image I/O and metrics.

mod dataset;
mod metrics;
mod ppm;
mod resample;
mod scene;

pub use dataset::{generate_dataset, load_manifest, load_pair, Manifest, ManifestEntry};
pub use metrics::{psnr, region_mean_color, ssim, Bbox};
pub use ppm::{read_ppm, write_ppm};
pub use resample::bicubic_resample;
pub use scene::{gen_scene, interior_mean_color, ColorName, SceneSpec, ShapeKind, PALETTE};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// RGB image with scalars in [0, 1], interleaved rows (height-major).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    /// `height * width * 3` values, pixel-interleaved RGB.
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize) -> Self {
        ImageBuffer {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Channel-planar `[3, h, w]` tensor (non-tracked constant).
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (h, w) = (self.height, self.width);
        let mut data = vec![T::zero(); 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let p = self.pixel(y, x);
                for c in 0..3 {
                    data[(c * h + y) * w + x] = T::from_f64(p[c] as f64);
                }
            }
        }
        Tensor::from_vec(&[3, h, w], data).expect("image tensor shape")
    }

    /// Builds an image from a `[3, h, w]` tensor, clamping to [0, 1].
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        if t.rank() != 3 || t.dims()[0] != 3 {
            return Err(Error::dim(
                "image_from_tensor",
                format!("expected [3,h,w], got {}", t.shape()),
            ));
        }
        let (h, w) = (t.dims()[1], t.dims()[2]);
        let mut img = ImageBuffer::new(h, w);
        let src = t.data();
        for y in 0..h {
            for x in 0..w {
                let rgb = [
                    Scalar::to_f64(src[y * w + x]) as f32,
                    Scalar::to_f64(src[(h + y) * w + x]) as f32,
                    Scalar::to_f64(src[(2 * h + y) * w + x]) as f32,
                ];
                img.set_pixel(y, x, rgb.map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Ok(img)
    }

    /// 8-bit quantization used by the PPM writer.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * 3 {
            return Err(Error::Input(format!(
                "pixel buffer holds {} bytes, {}x{} rgb needs {}",
                bytes.len(),
                width,
                height,
                height * width * 3
            )));
        }
        Ok(ImageBuffer {
            height,
            width,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Prng;

    #[test]
    fn quantization_roundtrip_error_bounded() {
        let mut p = Prng::seed_from(1);
        let mut img = ImageBuffer::new(8, 8);
        for v in &mut img.data {
            *v = p.uniform() as f32;
        }
        let back = ImageBuffer::from_bytes(8, 8, &img.to_bytes()).unwrap();
        for (a, b) in img.data.iter().zip(back.data.iter()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn tensor_roundtrip_is_exact() {
        let mut p = Prng::seed_from(2);
        let mut img = ImageBuffer::new(4, 6);
        for v in &mut img.data {
            *v = p.uniform() as f32;
        }
        let t = img.to_tensor::<f32>();
        let back = ImageBuffer::from_tensor(&t).unwrap();
        assert_eq!(img, back);
    }
}
