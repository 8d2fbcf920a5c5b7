//! Text and image encoders plus the contrastive pretraining that aligns them
//! in a joint embedding space. After pretraining the pair is frozen and serves
//! as the cross-modal backbone for the generator and the discriminator.

mod clip;
mod image;
mod text;
mod vit;
mod vocab;

pub use clip::{contrastive_loss, ClipEncoders};
pub use image::LrImageEncoder;
pub use text::{TextEncoder, TextFeatures};
pub use vit::{MiniVit, VIT_GRID, VIT_INPUT, VIT_PATCH};
pub use vocab::{build_vocab, tokenize, TokenSequence, Vocabulary, EOS_ID, PAD_ID, UNK_ID};
