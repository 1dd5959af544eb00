//! Non-affine reversible instance normalisation over the trailing (time) axis.

use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Per-series mean and `sqrt(var + eps)`, shaped like the input minus its last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RevinStats {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl RevinStats {
    /// Broadcasts the statistics over a trailing axis of length `len`.
    fn expand(&self, len: usize) -> (Tensor, Tensor) {
        let mut shape = self.mu.shape().to_vec();
        shape.push(len);
        let mu = Tensor::from_fn(shape.clone(), |i| self.mu.data()[i / len]);
        let sigma = Tensor::from_fn(shape, |i| self.sigma.data()[i / len]);
        (mu, sigma)
    }

    /// `yn * sigma + mu` recorded on the tape, with the statistics as constants.
    pub fn denormalize_var<'t>(&self, tape: &'t Tape, yn: Var<'t>) -> Result<Var<'t>, TensorError> {
        let shape = yn.shape();
        let len = *shape.last().ok_or_else(|| TensorError::arg("revin", "scalar prediction"))?;
        if shape[..shape.len() - 1] != *self.mu.shape() {
            return Err(TensorError::shape(
                "revin",
                format!("prediction {shape:?} vs stats {:?}", self.mu.shape()),
            ));
        }
        let (mu, sigma) = self.expand(len);
        yn.mul(tape.constant(sigma))?.add(tape.constant(mu))
    }
}

/// Normalises each series (trailing axis) to zero mean and unit population variance.
///
/// Input must have rank >= 2 so the statistics have at least one axis.
pub fn revin_normalize(x: &Tensor, eps: f64) -> Result<(Tensor, RevinStats), TensorError> {
    if x.rank() < 2 {
        return Err(TensorError::shape("revin", format!("need [.., C, T], got {:?}", x.shape())));
    }
    if eps <= 0.0 {
        return Err(TensorError::arg("revin", "eps must be positive"));
    }
    let t = *x.shape().last().unwrap();
    let rows = x.numel() / t;
    let mut out = vec![0.0; x.numel()];
    let mut mu = vec![0.0; rows];
    let mut sigma = vec![0.0; rows];
    for (r, row) in x.data().chunks_exact(t).enumerate() {
        let m = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t as f64;
        let s = (var + eps).sqrt();
        for (o, v) in out[r * t..(r + 1) * t].iter_mut().zip(row) {
            *o = (v - m) / s;
        }
        mu[r] = m;
        sigma[r] = s;
    }
    let stat_shape = x.shape()[..x.rank() - 1].to_vec();
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        RevinStats {
            mu: Tensor::new(stat_shape.clone(), mu)?,
            sigma: Tensor::new(stat_shape, sigma)?,
        },
    ))
}

/// Inverse of [`revin_normalize`] applied to a prediction of any trailing length.
pub fn revin_denormalize(yn: &Tensor, stats: &RevinStats) -> Result<Tensor, TensorError> {
    let len = *yn.shape().last().ok_or_else(|| TensorError::arg("revin", "scalar prediction"))?;
    if yn.shape()[..yn.rank() - 1] != *stats.mu.shape() {
        return Err(TensorError::shape(
            "revin",
            format!("prediction {:?} vs stats {:?}", yn.shape(), stats.mu.shape()),
        ));
    }
    let data = yn
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v * stats.sigma.data()[i / len] + stats.mu.data()[i / len])
        .collect();
    Tensor::new(yn.shape().to_vec(), data)
}
