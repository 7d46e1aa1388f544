//! GAN inversion by autoencoding through a frozen generator.
//!
//! An inverse generator `IG` is trained as the encoder of an autoencoder whose
//! decoder is a pre-trained, frozen generator `G`: images `x = G(z)` are
//! encoded to `z′ = IG(x)`, decoded to `x′ = G(z′)`, and only `IG` is updated
//! to minimize the binary cross-entropy between `x` and `x′`. The crate also
//! carries the pieces around that idea: a small reverse-mode autodiff engine,
//! the DCGAN used as `G`, three baseline inverters, perceptual hashes for
//! evaluation, latent-space search and blur-removal reconstruction.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gan_training;
pub mod gradcheck;
pub mod image_io;
mod kernels;
pub mod inversion;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod rng;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use kernels::{AxisGeometry, ConvGeometry};
pub use tensor::Tensor;
