//! Text-guided image super-resolution at desk scale.
//!
//! The crate is organized around a small reverse-mode autodiff tensor core
//! ([`tensor`]), CLIP-style text/image encoders trained contrastively on a
//! synthetic caption+image corpus ([`encoders`]), a text-conditioned
//! super-resolution generator built from feature-wise affine fusion blocks
//! ([`generator`]), adversarial and perceptual training objectives
//! ([`losses`]), and the procedural dataset plus image metrics that make the
//! whole pipeline testable end to end ([`data`]).
//!
//! Everything runs single-threaded on CPU and is deterministic given a seed.

pub mod counters;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod prng;
pub mod tensor;
// modules still being brought up:
// pub mod checkpoint;
// pub mod config;
pub mod data;
pub mod encoders;
// pub mod generator;
// pub mod losses;
// pub mod trainer;

pub use error::{Error, Result};
pub use prng::Prng;
pub use tensor::{GradTape, GradientMap, Shape, Tensor};
