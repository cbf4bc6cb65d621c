//! Self-supervised alignment of 3D skeleton sequences.
//!
//! A sequence is matched against a space-time augmented copy of itself by a
//! shared linear-attention encoder; the learned per-frame embeddings are then
//! used for nearest-neighbour alignment, phase classification, progress
//! regression and frame retrieval.
//!
//! Modules, bottom-up:
//!
//! - [`numeric`]: matrices, reverse-mode autodiff, ADAM, Cholesky.
//! - [`skeleton`]: sequence types, canonical normalization, flipping, a toy
//!   forward-kinematics chain and its inverse.
//! - [`augment`]: temporal, translation, flip, joint-angle and latent-space
//!   augmentation with exact ground-truth correspondences.
//! - [`encoder`]: MLP, sinusoidal positional encoding, self/cross linear
//!   attention, projection head, checkpoints.
//! - [`training`]: matching probabilities, regression and contrastive losses,
//!   the optimisation loop.
//! - [`evalalign`]: nearest-neighbour alignment (offline and online) and the
//!   evaluation metrics.
//! - [`dataio`]: synthetic labelled motion and dataset manifests.

pub mod augment;
pub mod dataio;
pub mod encoder;
pub mod evalalign;
pub mod numeric;
pub mod skeleton;
pub mod training;

mod error;

pub use error::{Error, Result};
