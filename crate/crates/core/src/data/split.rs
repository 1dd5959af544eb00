use std::ops::Range;

use super::DataError;

/// How a series is cut into train, validation and test spans.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Fixed lengths from the start of the series; trailing rows are unused.
    Counts { train: usize, val: usize, test: usize },
    /// `train = floor(r_train * len)`, `test = floor(r_test * len)`, validation takes the rest.
    Ratios { train: f64, val: f64, test: f64 },
}

impl SplitSpec {
    /// Twelve, four and four months of hourly records.
    pub fn ett_hourly() -> Self {
        SplitSpec::Counts {
            train: 12 * 30 * 24,
            val: 4 * 30 * 24,
            test: 4 * 30 * 24,
        }
    }

    /// Same calendar split at fifteen-minute resolution.
    pub fn ett_minutely() -> Self {
        SplitSpec::Counts {
            train: 12 * 30 * 24 * 4,
            val: 4 * 30 * 24 * 4,
            test: 4 * 30 * 24 * 4,
        }
    }

    pub fn default_ratios() -> Self {
        SplitSpec::Ratios {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }

    fn lengths(&self, len: usize) -> Result<(usize, usize, usize), DataError> {
        match *self {
            SplitSpec::Counts { train, val, test } => {
                if train + val + test > len {
                    return Err(DataError::Split(format!(
                        "counts {train}+{val}+{test} exceed series length {len}"
                    )));
                }
                Ok((train, val, test))
            }
            SplitSpec::Ratios { train, val, test } => {
                let ratios = [train, val, test];
                if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || ((train + val + test) - 1.0).abs() > 1e-9 {
                    return Err(DataError::Split(format!("ratios {ratios:?} must be in [0, 1] and sum to 1")));
                }
                let n_train = (train * len as f64 + 1e-9).floor() as usize;
                let n_test = (test * len as f64 + 1e-9).floor() as usize;
                Ok((n_train, len - n_train - n_test, n_test))
            }
        }
    }
}

/// Row ranges of each split.
///
/// The `*_ctx` ranges of validation and test start `lookback` rows early so
/// their first window can see a full lookback; statistics never use them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpans {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub val_ctx: Range<usize>,
    pub test_ctx: Range<usize>,
}

impl SplitSpans {
    /// Lookback start positions per split: `span_len - lookback + 1`.
    pub fn lookback_positions(&self, lookback: usize) -> (usize, usize, usize) {
        let n = |r: &Range<usize>| (r.len() + 1).saturating_sub(lookback);
        (n(&self.train), n(&self.val_ctx), n(&self.test_ctx))
    }
}

/// Number of `(lookback, horizon)` windows inside a span of `len` rows.
pub fn window_count(len: usize, lookback: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(lookback + horizon)
}

/// Contiguous chronological spans; every split must hold at least one window.
pub fn chrono_split(len: usize, spec: &SplitSpec, lookback: usize, horizon: usize) -> Result<SplitSpans, DataError> {
    let (n_train, n_val, n_test) = spec.lengths(len)?;
    let train = 0..n_train;
    let val = n_train..n_train + n_val;
    let test = n_train + n_val..n_train + n_val + n_test;
    if n_train < lookback {
        return Err(DataError::Split(format!(
            "train span of {n_train} rows is shorter than the lookback {lookback}"
        )));
    }
    let spans = SplitSpans {
        val_ctx: val.start - lookback..val.end,
        test_ctx: test.start - lookback..test.end,
        train,
        val,
        test,
    };
    for (name, r) in [("train", &spans.train), ("validation", &spans.val_ctx), ("test", &spans.test_ctx)] {
        if window_count(r.len(), lookback, horizon) == 0 {
            return Err(DataError::Split(format!(
                "{name} span of {} rows cannot hold lookback {lookback} plus horizon {horizon}",
                r.len()
            )));
        }
    }
    Ok(spans)
}
