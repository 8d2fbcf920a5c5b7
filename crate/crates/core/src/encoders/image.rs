//! Convolutional encoder mapping a low-resolution input to the fixed 8x8
//! feature map the refinement stages operate on. The stride-2 depth is chosen
//! from the input size, so every supported LR size lands on 8x8.

use crate::error::{Error, Result};
use crate::nn::{join, Conv2dLayer, ParamSet};
use crate::prng::Prng;
use crate::tensor::{Scalar, Tensor};

pub const FEATURE_EXTENT: usize = 8;

pub struct LrImageEncoder<T: Scalar> {
    pub stages: Vec<Conv2dLayer<T>>,
    pub input_size: usize,
    pub channels: usize,
}

impl<T: Scalar> LrImageEncoder<T> {
    /// Supported input sizes are powers of two at least 16 (depth 1..=3 maps
    /// 16/32/64 onto the 8x8 grid).
    pub fn new(input_size: usize, channels: usize, prng: &mut Prng) -> Result<Self> {
        if !input_size.is_power_of_two() || input_size < 2 * FEATURE_EXTENT {
            return Err(Error::Config(format!(
                "unsupported LR size {input_size}; expected a power of two >= 16"
            )));
        }
        let depth = (input_size / FEATURE_EXTENT).ilog2() as usize;
        // 4x4 stride-2 convs halve even extents exactly
        let stages = (0..depth)
            .map(|i| {
                let in_ch = if i == 0 { 3 } else { channels };
                Conv2dLayer::new(in_ch, channels, 4, 2, 1, prng)
            })
            .collect();
        Ok(LrImageEncoder {
            stages,
            input_size,
            channels,
        })
    }

    /// `[3, s, s] -> [channels, 8, 8]`
    pub fn forward(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        if img.dims() != [3, self.input_size, self.input_size] {
            return Err(Error::Config(format!(
                "image encoder built for 3x{0}x{0}, got {1}",
                self.input_size,
                img.shape()
            )));
        }
        let mut x = img.clone();
        for stage in &self.stages {
            x = stage.forward(&x)?.relu();
        }
        debug_assert_eq!(x.dims()[1], FEATURE_EXTENT);
        Ok(x)
    }
}

impl<T: Scalar> ParamSet<T> for LrImageEncoder<T> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.for_each_param(&join(prefix, &format!("stage{i}")), f);
        }
    }
}
