//! Metrics, benchmark reports, affine probing, decomposition export and parameter counts.

mod count;
mod decompose;
mod probe;
mod report;

use crate::data::WindowSet;
use crate::model::{LiNoModel, ModelError};
use crate::tensor::Tensor;

pub use count::{param_count, ParamCount};
pub use decompose::{export_decomposition, Decomposition};
pub use probe::{probe_affine, probe_levels, probe_li_block, probe_model, BlockProbe, ProbedAffineMap};
pub use report::{promote, EvalReport, ReportRow, RowKind};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: prediction {yhat:?} vs target {y:?}")]
    Shape { yhat: Vec<usize>, y: Vec<usize> },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check(yhat: &Tensor, y: &Tensor) -> Result<(), EvalError> {
    if yhat.shape() != y.shape() {
        return Err(EvalError::Shape {
            yhat: yhat.shape().to_vec(),
            y: y.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean squared error over every element.
pub fn mse(yhat: &Tensor, y: &Tensor) -> Result<f64, EvalError> {
    check(yhat, y)?;
    Ok(yhat.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.numel() as f64)
}

/// Mean absolute error over every element.
pub fn mae(yhat: &Tensor, y: &Tensor) -> Result<f64, EvalError> {
    check(yhat, y)?;
    Ok(yhat.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.numel() as f64)
}

/// Metrics of one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMetrics {
    pub index: usize,
    pub mse: f64,
    pub mae: f64,
}

/// Per-window metrics over a split, computed on the standardised scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitEvaluation {
    pub windows: Vec<WindowMetrics>,
    pub mse: f64,
    pub mae: f64,
}

/// Batch size for evaluation passes.
const EVAL_BATCH: usize = 256;

/// Evaluation-mode metrics for the windows `order` of `set` (all windows when `None`).
///
/// Every window has the same number of elements, so the split metrics are
/// plain means of the window metrics and do not depend on the order.
pub fn evaluate_windows(model: &LiNoModel, set: &WindowSet, order: Option<&[usize]>) -> Result<SplitEvaluation, EvalError> {
    if model.config.horizon != set.horizon() || model.config.lookback != set.lookback() {
        return Err(EvalError::Invalid(format!(
            "model expects T={} F={}, split provides T={} F={}",
            model.config.lookback,
            model.config.horizon,
            set.lookback(),
            set.horizon()
        )));
    }
    let all: Vec<usize> = (0..set.len()).collect();
    let order = order.unwrap_or(&all);
    if order.is_empty() {
        return Err(EvalError::Invalid("no windows to evaluate".into()));
    }
    let mut windows = Vec::with_capacity(order.len());
    for chunk in order.chunks(EVAL_BATCH) {
        let (x, y) = set.batch(chunk);
        let yhat = model.predict(&x)?;
        let per = y.numel() / chunk.len();
        for (k, &index) in chunk.iter().enumerate() {
            let (a, b) = (&yhat.data()[k * per..(k + 1) * per], &y.data()[k * per..(k + 1) * per]);
            windows.push(WindowMetrics {
                index,
                mse: a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / per as f64,
                mae: a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() / per as f64,
            });
        }
    }
    windows.sort_by_key(|w| w.index);
    let n = windows.len() as f64;
    Ok(SplitEvaluation {
        mse: windows.iter().map(|w| w.mse).sum::<f64>() / n,
        mae: windows.iter().map(|w| w.mae).sum::<f64>() / n,
        windows,
    })
}

pub fn evaluate(model: &LiNoModel, set: &WindowSet) -> Result<SplitEvaluation, EvalError> {
    evaluate_windows(model, set, None)
}
