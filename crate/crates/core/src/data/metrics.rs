//! Image quality metrics: PSNR on the [0, 1] RGB range and single-scale SSIM
//! on the luminance channel, plus the bounding-box color probe used by the
//! editability checks.

use serde::{Deserialize, Serialize};

use super::ImageBuffer;
use crate::error::{Error, Result};

/// Pixel-space rectangle, half-open on the high edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bbox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Identical images report the 99 dB cap instead of infinity so reports stay
/// serializable.
pub const PSNR_CAP_DB: f64 = 99.0;

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::dim(
            "psnr",
            format!(
                "image sizes differ: {}x{} vs {}x{}",
                a.width, a.height, b.width, b.height
            ),
        ));
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.data.iter().zip(b.data.iter()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    let mse = acc / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// BT.601 luma.
fn luminance(img: &ImageBuffer) -> Vec<f64> {
    (0..img.height * img.width)
        .map(|i| {
            let p = &img.data[i * 3..i * 3 + 3];
            0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
        })
        .collect()
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-region separable Gaussian filter: rows then columns.
fn gauss_filter(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let wo = w - SSIM_WINDOW + 1;
    let ho = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * src[y * w + x + i];
            }
            rows[y * wo + x] = acc;
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * rows[(y + i) * wo + x];
            }
            out[y * wo + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over an 11x11 Gaussian window (sigma 1.5) on
/// the luminance channel. Requires both images to be at least 11x11.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::dim(
            "ssim",
            format!(
                "image sizes differ: {}x{} vs {}x{}",
                a.width, a.height, b.width, b.height
            ),
        ));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let (h, w) = (a.height, a.width);
    let x = luminance(a);
    let y = luminance(b);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y.iter()).map(|(u, v)| u * v).collect();
    let mu_x = gauss_filter(&x, h, w);
    let mu_y = gauss_filter(&y, h, w);
    let e_xx = gauss_filter(&xx, h, w);
    let e_yy = gauss_filter(&yy, h, w);
    let e_xy = gauss_filter(&xy, h, w);
    let c1 = (K1 * 1.0f64).powi(2);
    let c2 = (K2 * 1.0f64).powi(2);
    let mut acc = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        acc += s;
    }
    Ok(acc / mu_x.len() as f64)
}

/// Per-channel mean over a bounding box.
pub fn region_mean_color(img: &ImageBuffer, bbox: &Bbox) -> Result<[f32; 3]> {
    if bbox.x1 > img.width || bbox.y1 > img.height || bbox.x0 >= bbox.x1 || bbox.y0 >= bbox.y1 {
        return Err(Error::Input(format!(
            "bbox ({},{})..({},{}) out of range for {}x{} image",
            bbox.x0, bbox.y0, bbox.x1, bbox.y1, img.width, img.height
        )));
    }
    let mut acc = [0.0f64; 3];
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            let p = img.pixel(y, x);
            for c in 0..3 {
                acc[c] += p[c] as f64;
            }
        }
    }
    let n = ((bbox.x1 - bbox.x0) * (bbox.y1 - bbox.y0)) as f64;
    Ok([
        (acc[0] / n) as f32,
        (acc[1] / n) as f32,
        (acc[2] / n) as f32,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Prng;

    fn constant(h: usize, w: usize, v: f32) -> ImageBuffer {
        let mut img = ImageBuffer::new(h, w);
        for d in &mut img.data {
            *d = v;
        }
        img
    }

    fn random(h: usize, w: usize, seed: u64) -> ImageBuffer {
        let mut p = Prng::seed_from(seed);
        let mut img = ImageBuffer::new(h, w);
        for d in &mut img.data {
            *d = p.uniform() as f32;
        }
        img
    }

    #[test]
    fn psnr_identical_hits_cap() {
        let img = random(12, 12, 1);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_half_gray_closed_form() {
        let a = constant(8, 8, 0.0);
        let b = constant(8, 8, 0.5);
        let got = psnr(&a, &b).unwrap();
        let want = 10.0 * (4.0f64).log10(); // mse = 0.25
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn psnr_symmetric() {
        let a = random(9, 9, 2);
        let b = random(9, 9, 3);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let base = random(16, 16, 4);
        let mut last = f64::INFINITY;
        for (i, amp) in [0.02f32, 0.08, 0.3].iter().enumerate() {
            let mut p = Prng::seed_from(50 + i as u64);
            let mut noisy = base.clone();
            for v in &mut noisy.data {
                *v = (*v + amp * (p.uniform() as f32 - 0.5)).clamp(0.0, 1.0);
            }
            let db = psnr(&base, &noisy).unwrap();
            assert!(db < last, "noise {amp}: {db} !< {last}");
            last = db;
        }
    }

    #[test]
    fn ssim_identical_is_one() {
        let img = random(16, 16, 5);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_symmetric() {
        let a = random(14, 14, 6);
        let b = random(14, 14, 7);
        let d = ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn ssim_too_small_rejected() {
        let a = constant(8, 8, 0.5);
        assert!(matches!(ssim(&a, &a), Err(crate::error::Error::Input(_))));
    }

    /// Naive per-window reference: explicit 2-D Gaussian weights, one window
    /// at a time, no separable filtering.
    fn ssim_reference(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
        let x = luminance(a);
        let y = luminance(b);
        let (h, w) = (a.height, a.width);
        let k1 = gaussian_kernel();
        let mut k2d = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
        for i in 0..SSIM_WINDOW {
            for j in 0..SSIM_WINDOW {
                k2d[i * SSIM_WINDOW + j] = k1[i] * k1[j];
            }
        }
        let c1 = 0.01f64.powi(2);
        let c2 = 0.03f64.powi(2);
        let mut acc = 0.0;
        let mut count = 0;
        for wy in 0..=(h - SSIM_WINDOW) {
            for wx in 0..=(w - SSIM_WINDOW) {
                let (mut mx, mut my) = (0.0, 0.0);
                let (mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let kw = k2d[i * SSIM_WINDOW + j];
                        let xv = x[(wy + i) * w + wx + j];
                        let yv = y[(wy + i) * w + wx + j];
                        mx += kw * xv;
                        my += kw * yv;
                        exx += kw * xv * xv;
                        eyy += kw * yv * yv;
                        exy += kw * xv * yv;
                    }
                }
                let var_x = exx - mx * mx;
                let var_y = eyy - my * my;
                let cov = exy - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_matches_naive_reference() {
        let a = random(16, 16, 8);
        let b = random(16, 16, 9);
        let got = ssim(&a, &b).unwrap();
        let want = ssim_reference(&a, &b);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn region_mean_cases() {
        let mut img = constant(4, 4, 0.0);
        for y in 0..4 {
            for x in 0..2 {
                img.set_pixel(y, x, [1.0, 0.0, 0.0]); // left half red
            }
            for x in 2..4 {
                img.set_pixel(y, x, [0.0, 0.0, 1.0]); // right half blue
            }
        }
        let all = region_mean_color(&img, &Bbox { x0: 0, y0: 0, x1: 4, y1: 4 }).unwrap();
        assert_eq!(all, [0.5, 0.0, 0.5]);
        let one = region_mean_color(&img, &Bbox { x0: 0, y0: 0, x1: 1, y1: 1 }).unwrap();
        assert_eq!(one, [1.0, 0.0, 0.0]);
        let red = region_mean_color(&img, &Bbox { x0: 0, y0: 0, x1: 2, y1: 4 }).unwrap();
        assert_eq!(red, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn region_mean_out_of_range_rejected() {
        let img = constant(4, 4, 0.0);
        assert!(matches!(
            region_mean_color(&img, &Bbox { x0: 2, y0: 0, x1: 6, y1: 2 }),
            Err(crate::error::Error::Input(_))
        ));
    }
}
