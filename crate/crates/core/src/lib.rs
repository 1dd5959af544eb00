//! Recursive linear/nonlinear residual decomposition for time series forecasting.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors and a reverse-mode differentiation tape.
//! - [`spectral`]: real FFT and the complex frequency projection.
//! - [`model`]: configuration, parameters and the forward pass of the
//!   forecaster and its comparison variants.
//! - [`training`]: MSE loss, Adam, early stopping and checkpoints.
//! - [`data`]: CSV ingestion, chronological splits, windows, synthetic
//!   series and noise injection.
//! - [`eval`]: metrics, reports, affine probing, decomposition export and
//!   parameter counting.

pub mod data;
pub mod eval;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use model::{Ablation, LiNoConfig, LiNoModel, LiNoParams, Variant};
pub use tensor::{Mode, Tape, Tensor, TensorError, Var};
