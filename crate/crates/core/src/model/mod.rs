//! The forecaster: RevIN, whole-series embedding, stacked linear/nonlinear
//! extraction levels with residual subtraction, and the comparison variants.

mod blocks;
mod config;
mod forward;
mod params;
mod revin;

use crate::tensor::TensorError;

pub use blocks::{fused_features, li_block, mlp, no_block};
pub use config::{Ablation, Fusion, LiNoConfig, Variant};
pub use forward::{forward_graph, Graph, LevelTrace, LevelVars, LiNoModel, Trace};
pub use params::{
    glorot_bound, glorot_linear, init_params, Level, LiNoParams, LiParams, Linear, Mlp, ModelParams, NoParams, Norm,
    ParamGroup, FREQ_INIT_SIGMA,
};
pub use revin::{revin_denormalize, revin_normalize, RevinStats};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid parameter set: {0}")]
    Params(String),
    #[error("dimension mismatch for `{tensor}`: expected {expected:?}, found {found:?}")]
    Dimension {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("input shape {found:?} does not match [.., {channels}, {lookback}]")]
    Input {
        found: Vec<usize>,
        channels: usize,
        lookback: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
