use std::ops::Range;
use std::sync::Arc;

use super::{chrono_split, window_count, DataError, RawSeries, SplitSpans, SplitSpec};
use crate::tensor::Tensor;

/// Per-channel mean and population standard deviation of the training span.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on `rows` of a `[time, C]` tensor. Constant channels get unit scale and a warning.
    pub fn fit(values: &Tensor, rows: Range<usize>) -> Result<Self, DataError> {
        let c = values.shape()[1];
        if rows.is_empty() || rows.end > values.shape()[0] {
            return Err(DataError::Invalid(format!("cannot fit statistics on rows {rows:?}")));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for t in rows.clone() {
            for (m, v) in mean.iter_mut().zip(&values.data()[t * c..(t + 1) * c]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for t in rows {
            for (j, v) in values.data()[t * c..(t + 1) * c].iter().enumerate() {
                var[j] += (v - mean[j]) * (v - mean[j]);
            }
        }
        let std = var
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    log::warn!("channel {j} is constant over the training span; leaving it unscaled");
                    1.0
                }
            })
            .collect::<Vec<f64>>();
        if let Some(j) = (0..c).find(|&j| !mean[j].is_finite() || !std[j].is_finite()) {
            return Err(DataError::NonFiniteStats { channel: j });
        }
        Ok(Standardizer { mean, std })
    }

    pub fn transform(&self, values: &Tensor) -> Tensor {
        let c = self.mean.len();
        Tensor::from_fn(values.shape().to_vec(), |i| (values.data()[i] - self.mean[i % c]) / self.std[i % c])
    }

    pub fn inverse(&self, values: &Tensor) -> Tensor {
        let c = self.mean.len();
        Tensor::from_fn(values.shape().to_vec(), |i| values.data()[i] * self.std[i % c] + self.mean[i % c])
    }
}

/// Sliding `(lookback, horizon)` windows over one contiguous span.
#[derive(Debug, Clone)]
pub struct WindowSet {
    /// `[rows, C]`, already standardised.
    data: Arc<Tensor>,
    lookback: usize,
    horizon: usize,
}

impl WindowSet {
    pub fn new(data: Tensor, lookback: usize, horizon: usize) -> Result<Self, DataError> {
        if data.rank() != 2 || lookback == 0 || horizon == 0 {
            return Err(DataError::Invalid(format!(
                "windows need [rows, C] data and positive extents, got {:?}, T={lookback}, F={horizon}",
                data.shape()
            )));
        }
        Ok(WindowSet {
            data: Arc::new(data),
            lookback,
            horizon,
        })
    }

    pub fn len(&self) -> usize {
        window_count(self.data.shape()[0], self.lookback, self.horizon)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rows(&self) -> &Tensor {
        &self.data
    }

    /// Channel-major copy of rows `start..start + len`.
    fn block(&self, start: usize, len: usize, out: &mut Vec<f64>) {
        let c = self.channels();
        let d = self.data.data();
        for ch in 0..c {
            out.extend((start..start + len).map(|t| d[t * c + ch]));
        }
    }

    /// Window `i` as `(x [C, T], y [C, F])`.
    pub fn window(&self, i: usize) -> (Tensor, Tensor) {
        let (x, y) = self.batch(&[i]);
        let c = self.channels();
        (
            x.reshape([c, self.lookback]).expect("same size"),
            y.reshape([c, self.horizon]).expect("same size"),
        )
    }

    /// Stacked windows `(x [B, C, T], y [B, C, F])`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let c = self.channels();
        let (t, f) = (self.lookback, self.horizon);
        let mut xs = Vec::with_capacity(indices.len() * c * t);
        let mut ys = Vec::with_capacity(indices.len() * c * f);
        for &i in indices {
            assert!(i < self.len(), "window {i} out of {}", self.len());
            self.block(i, t, &mut xs);
            self.block(i + t, f, &mut ys);
        }
        let b = indices.len();
        (
            Tensor::new([b, c, t], xs).expect("sized above"),
            Tensor::new([b, c, f], ys).expect("sized above"),
        )
    }
}

/// Standardised train, validation and test windows of one series.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub names: Vec<String>,
    pub spans: SplitSpans,
    pub stats: Standardizer,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

impl WindowedDataset {
    /// Splits, standardises with training statistics and windows `series`.
    ///
    /// `univariate` keeps only the last channel.
    pub fn new(
        series: &RawSeries,
        spec: &SplitSpec,
        lookback: usize,
        horizon: usize,
        univariate: bool,
    ) -> Result<Self, DataError> {
        let series = if univariate { series.last_channel() } else { series.clone() };
        let spans = chrono_split(series.len(), spec, lookback, horizon)?;
        let stats = Standardizer::fit(&series.values, spans.train.clone())?;
        let scaled = stats.transform(&series.values);
        let c = series.channels();
        let slice = |r: &Range<usize>| {
            Tensor::new([r.len(), c], scaled.data()[r.start * c..r.end * c].to_vec()).expect("non-empty span")
        };
        Ok(WindowedDataset {
            names: series.names.clone(),
            train: WindowSet::new(slice(&spans.train), lookback, horizon)?,
            val: WindowSet::new(slice(&spans.val_ctx), lookback, horizon)?,
            test: WindowSet::new(slice(&spans.test_ctx), lookback, horizon)?,
            spans,
            stats,
        })
    }

    pub fn channels(&self) -> usize {
        self.train.channels()
    }
}
