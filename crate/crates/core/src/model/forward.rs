//! Forward passes for all variants, on a tape and as plain-value traces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blocks::{li_block, no_block};
use super::revin::{revin_normalize, RevinStats};
use super::{init_params, LiNoConfig, LiNoParams, ModelError, ModelParams, Variant};
use crate::rng::{RunSeed, Stream};
use crate::tensor::{Mode, Tape, Tensor, Var};

/// Tape variables of one level.
///
/// `rl` is the input the nonlinear block saw and `rn` is the next level's
/// input. For the LiNo variant these are the residuals `H - L` and `H - L - N`.
#[derive(Debug, Clone, Copy)]
pub struct LevelVars<'t> {
    pub h: Var<'t>,
    pub l: Var<'t>,
    pub rl: Var<'t>,
    pub n: Var<'t>,
    pub rn: Var<'t>,
    pub p_li: Var<'t>,
    pub p_no: Var<'t>,
}

/// Everything recorded by one forward pass over a `[B, C, T]` batch.
#[derive(Debug, Clone)]
pub struct Graph<'t> {
    pub stats: RevinStats,
    pub h1: Var<'t>,
    pub levels: Vec<LevelVars<'t>>,
    /// Aggregated prediction before denormalisation.
    pub pred_norm: Var<'t>,
    pub yhat: Var<'t>,
}

/// Sums `parts` left to right.
fn accumulate<'t>(parts: impl IntoIterator<Item = Var<'t>>) -> Result<Var<'t>, ModelError> {
    let mut it = parts.into_iter();
    let mut acc = it.next().ok_or_else(|| ModelError::Config("no levels".into()))?;
    for p in it {
        acc = acc.add(p)?;
    }
    Ok(acc)
}

/// Records the full forward pass of `config.variant` on `tape`.
///
/// `x` is `[B, C, T]`. `params` are usually bound with
/// [`ModelParams::bind`] for training or [`ModelParams::bind_constant`] for
/// inference.
pub fn forward_graph<'t, R: Rng + ?Sized>(
    tape: &'t Tape,
    params: &ModelParams<Var<'t>>,
    config: &LiNoConfig,
    x: &Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<Graph<'t>, ModelError> {
    check_input(config, x)?;
    let (xn, stats) = revin_normalize(x, config.revin_eps)?;
    let core = normalized_graph(tape, params, config, &xn, mode, rng)?;
    let yhat = stats.denormalize_var(tape, core.pred_norm)?;
    Ok(Graph {
        stats,
        h1: core.h1,
        levels: core.levels,
        pred_norm: core.pred_norm,
        yhat,
    })
}

fn check_input(config: &LiNoConfig, x: &Tensor) -> Result<(), ModelError> {
    let shape = x.shape();
    if shape.len() != 3 || shape[1] != config.channels || shape[2] != config.lookback {
        return Err(ModelError::Input {
            found: shape.to_vec(),
            channels: config.channels,
            lookback: config.lookback,
        });
    }
    Ok(())
}

struct NormalizedGraph<'t> {
    h1: Var<'t>,
    levels: Vec<LevelVars<'t>>,
    pred_norm: Var<'t>,
}

/// Embedding and levels applied to an already normalised `[B, C, T]` input.
fn normalized_graph<'t, R: Rng + ?Sized>(
    tape: &'t Tape,
    params: &ModelParams<Var<'t>>,
    config: &LiNoConfig,
    xn: &Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<NormalizedGraph<'t>, ModelError> {
    if params.levels.len() != config.blocks {
        return Err(ModelError::Params(format!(
            "{} levels for {} blocks",
            params.levels.len(),
            config.blocks
        )));
    }
    let (b, c) = (xn.shape()[0], xn.shape()[1]);
    let h1 = tape.constant(xn.clone()).linear(params.embed.weight, params.embed.bias)?;
    let zero_feat = || tape.constant(Tensor::zeros([b, c, config.dim]));
    let zero_pred = || tape.constant(Tensor::zeros([b, c, config.horizon]));
    let p = config.dropout;
    let ab = config.ablation;

    let mut levels = Vec::with_capacity(config.blocks);
    let mut h = h1;
    let last = config.blocks - 1;
    for (i, lv) in params.levels.iter().enumerate() {
        let record = match config.variant {
            Variant::LiNo => {
                let (l, p_li) = if ab.no_li {
                    (zero_feat(), zero_pred())
                } else {
                    li_block(h, &lv.li, &lv.li_head, p, mode, rng)?
                };
                let rl = if ab.no_li { h } else { h.sub(l)? };
                let (n, p_no) = if ab.no_no {
                    (zero_feat(), zero_pred())
                } else {
                    no_block(rl, &lv.no, &lv.no_head, config)?
                };
                let rn = if ab.no_no { rl } else { rl.sub(n)? };
                LevelVars { h, l, rl, n, rn, p_li, p_no }
            }
            Variant::Mu => {
                let (l, _) = li_block(h, &lv.li, &lv.li_head, p, mode, rng)?;
                let (n, p_no) = no_block(l, &lv.no, &lv.no_head, config)?;
                let rn = h.sub(n)?;
                LevelVars { h, l, rl: l, n, rn, p_li: zero_pred(), p_no }
            }
            Variant::Raw => {
                let (l, _) = li_block(h, &lv.li, &lv.li_head, p, mode, rng)?;
                let (n, p_last) = no_block(l, &lv.no, &lv.no_head, config)?;
                let p_no = if i == last { p_last } else { zero_pred() };
                LevelVars { h, l, rl: l, n, rn: n, p_li: zero_pred(), p_no }
            }
            Variant::Ln => {
                let (l, p_li) = li_block(h, &lv.li, &lv.li_head, p, mode, rng)?;
                let (n, p_no) = no_block(l, &lv.no, &lv.no_head, config)?;
                LevelVars { h, l, rl: l, n, rn: n, p_li, p_no }
            }
        };
        h = record.rn;
        levels.push(record);
    }

    let li_sum = accumulate(levels.iter().map(|l| l.p_li))?;
    let no_sum = accumulate(levels.iter().map(|l| l.p_no))?;
    let pred_norm = li_sum.add(no_sum)?;
    Ok(NormalizedGraph { h1, levels, pred_norm })
}

/// Plain values of one level, shaped like the model input.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTrace {
    pub h: Tensor,
    pub l: Tensor,
    pub rl: Tensor,
    pub n: Tensor,
    pub rn: Tensor,
    pub p_li: Tensor,
    pub p_no: Tensor,
}

/// Result of an evaluation-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub stats: RevinStats,
    pub h1: Tensor,
    pub levels: Vec<LevelTrace>,
    pub pred_norm: Tensor,
    pub yhat: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiNoModel {
    pub config: LiNoConfig,
    pub params: LiNoParams,
}

impl LiNoModel {
    /// Validates that `params` has exactly the shapes `config` implies.
    pub fn new(config: LiNoConfig, params: LiNoParams) -> Result<Self, ModelError> {
        config.validate()?;
        let named = params.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let params = LiNoParams::from_named(&config, named)?;
        Ok(LiNoModel { config, params })
    }

    /// Fresh parameters drawn from the run's init stream.
    pub fn init(config: LiNoConfig, seed: RunSeed) -> Result<Self, ModelError> {
        let params = init_params(&config, &mut seed.stream(Stream::Init))?;
        Ok(LiNoModel { config, params })
    }

    /// Evaluation-mode forward pass over `[C, T]` or `[B, C, T]` input.
    pub fn forward(&self, x: &Tensor) -> Result<Trace, ModelError> {
        let batched = match x.rank() {
            2 => x.reshape([1, x.shape()[0], x.shape()[1]])?,
            3 => x.clone(),
            _ => {
                return Err(ModelError::Input {
                    found: x.shape().to_vec(),
                    channels: self.config.channels,
                    lookback: self.config.lookback,
                })
            }
        };
        let tape = Tape::new();
        let params = self.params.bind_constant(&tape);
        // unused in evaluation mode
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = forward_graph(&tape, &params, &self.config, &batched, Mode::Eval, &mut rng)?;
        let squeeze = x.rank() == 2;
        let val = |v: Var<'_>| -> Result<Tensor, ModelError> {
            let t = (*v.value()).clone();
            Ok(if squeeze { t.reshape(t.shape()[1..].to_vec())? } else { t })
        };
        let levels = g
            .levels
            .iter()
            .map(|lv| {
                Ok(LevelTrace {
                    h: val(lv.h)?,
                    l: val(lv.l)?,
                    rl: val(lv.rl)?,
                    n: val(lv.n)?,
                    rn: val(lv.rn)?,
                    p_li: val(lv.p_li)?,
                    p_no: val(lv.p_no)?,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let stats = if squeeze {
            RevinStats {
                mu: g.stats.mu.reshape([self.config.channels])?,
                sigma: g.stats.sigma.reshape([self.config.channels])?,
            }
        } else {
            g.stats.clone()
        };
        Ok(Trace {
            stats,
            h1: val(g.h1)?,
            levels,
            pred_norm: val(g.pred_norm)?,
            yhat: val(g.yhat)?,
        })
    }

    /// Prediction for an input that is already in normalised space, skipping RevIN.
    ///
    /// `xn` is `[B, C, T]`; the result is the aggregated `[B, C, F]` prediction
    /// before denormalisation.
    pub fn predict_normalized(&self, xn: &Tensor) -> Result<Tensor, ModelError> {
        check_input(&self.config, xn)?;
        let tape = Tape::new();
        let params = self.params.bind_constant(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = normalized_graph(&tape, &params, &self.config, xn, Mode::Eval, &mut rng)?;
        Ok((*g.pred_norm.value()).clone())
    }

    /// Denormalised prediction, `[C, F]` or `[B, C, F]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        Ok(self.forward(x)?.yhat)
    }
}
