//! Series ingestion, chronological splits, standardisation, sliding windows,
//! synthetic structured series and Gaussian noise injection.

mod csv_io;
mod split;
mod synth;
mod window;

use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

pub use csv_io::{load_csv, write_csv};
pub use split::{chrono_split, window_count, SplitSpans, SplitSpec};
pub use synth::{ar2_is_stable, ar2_process, synth_generate, write_synth, SynthSeries, SynthSpec};
pub use window::{Standardizer, WindowSet, WindowedDataset};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv {path}: {detail}")]
    Csv { path: PathBuf, detail: String },
    #[error("{0} contains no data rows")]
    Empty(PathBuf),
    #[error("row {row} has {found} fields, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid data request: {0}")]
    Invalid(String),
    #[error("training statistics of channel {channel} are not finite")]
    NonFiniteStats { channel: usize },
    #[error("AR(2) coefficients ({a1}, {a2}) are not stationary")]
    UnstableAr { a1: f64, a2: f64 },
}

/// A multivariate series, time along the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub names: Vec<String>,
    /// `[time, channels]`
    pub values: Tensor,
    pub timestamps: Option<Vec<String>>,
}

impl RawSeries {
    pub fn new(names: Vec<String>, values: Tensor) -> Result<Self, DataError> {
        if values.rank() != 2 || values.shape()[1] != names.len() {
            return Err(DataError::Invalid(format!(
                "{} names for values of shape {:?}",
                names.len(),
                values.shape()
            )));
        }
        Ok(RawSeries {
            names,
            values,
            timestamps: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    /// Keeps only the last channel (the forecasting target in ETT files).
    pub fn last_channel(&self) -> RawSeries {
        let (t, c) = (self.len(), self.channels());
        RawSeries {
            names: vec![self.names[c - 1].clone()],
            values: Tensor::from_fn([t, 1], |i| self.values.data()[i * c + c - 1]),
            timestamps: self.timestamps.clone(),
        }
    }
}

/// `x + alpha * g` with `g` standard Gaussian, elementwise.
pub fn add_noise<R: Rng + ?Sized>(x: &Tensor, alpha: f64, rng: &mut R) -> Result<Tensor, DataError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DataError::Invalid(format!("noise alpha must be in [0, 1], got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(x.clone());
    }
    let data = x.data().iter().map(|v| v + alpha * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(x.shape().to_vec(), data).map_err(|e| DataError::Invalid(e.to_string()))
}
