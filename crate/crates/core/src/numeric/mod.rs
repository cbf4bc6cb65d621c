//! Dense matrices, tape-based reverse-mode differentiation, ADAM, and the
//! small amount of linear algebra the rest of the crate needs.

mod adam;
pub mod gradcheck;
mod linalg;
mod matrix;
mod tape;

pub use adam::AdamState;
pub use linalg::{cholesky, cholesky_solve, least_squares, mvn_sample, Cholesky, LEAST_SQUARES_RIDGE, MAX_JITTER};
pub use matrix::{dot, elu_plus_one, norm, Matrix};
pub use tape::{Gradients, Tape, Var};

pub(crate) use tape::pairwise_distance_matrix;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("loss must be 1x1, got {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },
    #[error("matrix is not positive definite even with jitter {max_jitter}")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Random stream used everywhere in the crate.
///
/// ChaCha8 is portable and its output is fixed by its specification, so any
/// other implementation seeded the same way reproduces the stream.
pub type CasaRng = ChaCha8Rng;

/// Independent stream for `(seed, tags...)`.
///
/// The 64-bit key is `seed` folded with each tag through SplitMix64
/// (`key = splitmix64(key ^ tag)`), and the ChaCha8 key is expanded from it
/// with `SeedableRng::seed_from_u64`.
pub fn substream(seed: u64, tags: &[u64]) -> CasaRng {
    let mut key = splitmix64(seed);
    for &t in tags {
        key = splitmix64(key ^ t);
    }
    ChaCha8Rng::seed_from_u64(key)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
