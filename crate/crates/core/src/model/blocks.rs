//! Linear (autoregressive) and nonlinear extraction blocks.
//!
//! Both blocks take features shaped `[B, C, D]` and return the extracted
//! pattern with the same shape plus its `[B, C, F]` prediction.

use rand::Rng;

use super::{Fusion, LiNoConfig, LiParams, Linear, Mlp, NoParams};
use crate::spectral::freq_projection;
use crate::tensor::{Mode, TensorError, Var};

/// Channel axis of the batched `[B, C, D]` layout.
const CHANNEL_AXIS: usize = 1;

pub fn mlp<'t>(x: Var<'t>, p: &Mlp<Var<'t>>) -> Result<Var<'t>, TensorError> {
    x.linear(p.hidden.weight, p.hidden.bias)?
        .gelu()?
        .linear(p.out.weight, p.out.bias)
}

fn head<'t>(x: Var<'t>, p: &Linear<Var<'t>>) -> Result<Var<'t>, TensorError> {
    x.linear(p.weight, p.bias)
}

/// Causal AR convolution over the feature axis, then dropout, then a head.
pub fn li_block<'t, R: Rng + ?Sized>(
    h: Var<'t>,
    li: &LiParams<Var<'t>>,
    li_head: &Linear<Var<'t>>,
    dropout: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Var<'t>, Var<'t>), TensorError> {
    let l = h.causal_conv(li.phi, li.beta)?.dropout(dropout, mode, rng)?;
    let p = head(l, li_head)?;
    Ok((l, p))
}

/// `N^TF`: fused temporal and frequency projections of the residual.
///
/// Dropping both paths yields zeros.
pub fn fused_features<'t>(r: Var<'t>, no: &NoParams<Var<'t>>, config: &LiNoConfig) -> Result<Var<'t>, TensorError> {
    let ab = config.ablation;
    let temporal = if ab.no_te { None } else { Some(r.linear(no.temporal.weight, no.temporal.bias)?) };
    let freq = if ab.no_fe { None } else { Some(freq_projection(r, &no.freq)?) };
    let sum = match (temporal, freq) {
        (Some(t), Some(f)) => t.add(f)?,
        (Some(t), None) => t,
        (None, Some(f)) => f,
        (None, None) => r.scale(0.0)?,
    };
    match config.fusion {
        Fusion::Tanh => sum.tanh(),
        Fusion::Identity => Ok(sum),
    }
}

/// Softmax-weighted channel mean, broadcast back and mixed with each channel.
fn channel_mixing<'t>(ntf: Var<'t>, mix: &Mlp<Var<'t>>) -> Result<Var<'t>, TensorError> {
    let shape = ntf.shape();
    let (b, c, d) = (shape[0], shape[1], shape[2]);
    let weights = ntf.softmax(CHANNEL_AXIS)?;
    let mean = weights
        .mul(ntf)?
        .sum_axis(CHANNEL_AXIS)?
        .reshape([b, 1, d])?
        .repeat_axis(CHANNEL_AXIS, c)?;
    let joined = ntf.tape().concat(&[ntf, mean], 2)?;
    mlp(joined, mix)
}

/// Nonlinear block on a residual `r`.
pub fn no_block<'t>(
    r: Var<'t>,
    no: &NoParams<Var<'t>>,
    no_head: &Linear<Var<'t>>,
    config: &LiNoConfig,
) -> Result<(Var<'t>, Var<'t>), TensorError> {
    if r.shape().len() != 3 {
        return Err(TensorError::shape("no_block", format!("expected [B, C, D], got {:?}", r.shape())));
    }
    let ntf = fused_features(r, no, config)?;
    let pre = if config.ablation.no_cd { ntf } else { ntf.add(channel_mixing(ntf, &no.mix)?)? };
    let ntfc = pre.layer_norm(no.norm1.gamma, no.norm1.beta, config.norm_eps)?;
    let n = ntfc
        .add(mlp(ntfc, &no.ff)?)?
        .layer_norm(no.norm2.gamma, no.norm2.beta, config.norm_eps)?;
    let p = head(n, no_head)?;
    Ok((n, p))
}
