//! Core models and numerics for stroke-sequence sketch generation.
//!
//! This crate is `#![no_std]` and only needs `alloc`. Everything that touches
//! files, clocks or the command line lives in the companion `strokeforge`
//! crate.
//!
//! Layout:
//!
//! - [`autograd`]: tensors, a define-by-run reverse-mode graph, layers, Adam,
//!   and the `SFCKPT1` parameter checkpoint encoding.
//! - [`stroke`]: the stroke-5 point format, dataset splitting, normalization
//!   and random crops.
//! - [`raster`]: Bresenham rendering of partial sketches into normalized
//!   grayscale rasters.
//! - [`mixture`]: the bivariate Gaussian mixture head, its losses and sampling.
//! - [`vae`]: the recurrent sketch VAE (bidirectional encoder, autoregressive
//!   decoder) and its trainer.
//! - [`refiner`]: the convolutional decoder that looks at the raster of the
//!   partial sketch and is blended into the recurrent decoder's head.
//! - [`discriminator`]: the three-class raster judge and confusion matrices.
//! - [`tsne`]: exact t-SNE and embedding concentration statistics.
//! - [`synthetic`]: seeded cat sketches and shape rasters for tests and demos.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod autograd;
pub mod discriminator;
mod error;
pub(crate) mod math;
pub mod mixture;
pub mod raster;
pub mod refiner;
pub mod stroke;
pub mod synthetic;
pub mod tsne;
pub mod vae;

pub use error::{Error, Result};

/// Seedable generator used for every random draw in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Build the crate's RNG from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
