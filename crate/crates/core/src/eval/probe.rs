//! Recovering `f(x) ~ A x + b` by evaluating `f` at zero and at coordinate vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::model::{li_block, no_block, LiNoModel};
use crate::tensor::{Mode, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbedAffineMap {
    /// `[out, in]`
    pub a: Tensor,
    /// `[out]`
    pub b: Tensor,
    /// Largest `|f(x) - A x - b|` over the random check probes.
    pub residual: f64,
}

impl ProbedAffineMap {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (out, inp) = (self.a.shape()[0], self.a.shape()[1]);
        (0..out)
            .map(|o| {
                let row = &self.a.data()[o * inp..(o + 1) * inp];
                self.b.data()[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Matrix as CSV rows.
    pub fn a_csv(&self) -> String {
        matrix_csv(&self.a)
    }

    pub fn b_csv(&self) -> String {
        matrix_csv(&self.b.reshape([self.b.numel(), 1]).expect("same size"))
    }
}

fn matrix_csv(t: &Tensor) -> String {
    let cols = t.shape()[1];
    let mut s = String::new();
    for row in t.data().chunks_exact(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Rows evaluated per call of the probed function.
const PROBE_CHUNK: usize = 128;

fn eval_rows<F>(f: &mut F, rows: &[Vec<f64>], in_dim: usize) -> Result<Vec<Vec<f64>>, EvalError>
where
    F: FnMut(&Tensor) -> Result<Tensor, EvalError>,
{
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(PROBE_CHUNK) {
        let x = Tensor::new([chunk.len(), in_dim], chunk.concat()).map_err(|e| EvalError::Invalid(e.to_string()))?;
        let y = f(&x)?;
        if y.rank() != 2 || y.shape()[0] != chunk.len() {
            return Err(EvalError::Invalid(format!("probed function returned {:?}", y.shape())));
        }
        out.extend(y.data().chunks_exact(y.shape()[1]).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Probes `f`, which maps `[n, in_dim]` rows to `[n, out]` rows.
///
/// `b = f(0)`, column `i` of `A` is `f(e_i) - b`, and the residual is
/// measured on `checks` uniform random inputs in `[-1, 1]`.
pub fn probe_affine<F, R>(mut f: F, in_dim: usize, checks: usize, rng: &mut R) -> Result<ProbedAffineMap, EvalError>
where
    F: FnMut(&Tensor) -> Result<Tensor, EvalError>,
    R: Rng + ?Sized,
{
    if in_dim == 0 {
        return Err(EvalError::Invalid("cannot probe a map with no inputs".into()));
    }
    let mut rows = vec![vec![0.0; in_dim]];
    for i in 0..in_dim {
        let mut e = vec![0.0; in_dim];
        e[i] = 1.0;
        rows.push(e);
    }
    let outs = eval_rows(&mut f, &rows, in_dim)?;
    let b = outs[0].clone();
    let out_dim = b.len();
    let mut a = vec![0.0; out_dim * in_dim];
    for i in 0..in_dim {
        for o in 0..out_dim {
            a[o * in_dim + i] = outs[i + 1][o] - b[o];
        }
    }
    let map = ProbedAffineMap {
        a: Tensor::new([out_dim, in_dim], a).map_err(|e| EvalError::Invalid(e.to_string()))?,
        b: Tensor::new([out_dim], b).map_err(|e| EvalError::Invalid(e.to_string()))?,
        residual: 0.0,
    };
    let probes: Vec<Vec<f64>> = (0..checks)
        .map(|_| (0..in_dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let actual = eval_rows(&mut f, &probes, in_dim)?;
    let residual = probes
        .iter()
        .zip(&actual)
        .flat_map(|(x, y)| map.apply(x).into_iter().zip(y.clone()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    Ok(ProbedAffineMap { residual, ..map })
}

/// Number of random inputs used to measure probe residuals.
pub const CHECK_PROBES: usize = 16;

fn rows_to_batch(x: &Tensor, c: usize, d: usize) -> Result<Tensor, EvalError> {
    x.reshape([x.shape()[0], c, d]).map_err(|e| EvalError::Invalid(e.to_string()))
}

fn flatten_rows(t: &Tensor) -> Tensor {
    let n = t.shape()[0];
    t.reshape([n, t.numel() / n]).expect("same size")
}

/// Evaluation-mode linear block of `level` (0-based) as a map on flattened `[C, D]` features.
pub fn probe_li_block(model: &LiNoModel, level: usize, rng: &mut impl Rng) -> Result<ProbedAffineMap, EvalError> {
    let (c, d) = (model.config.channels, model.config.dim);
    let lv = model
        .params
        .levels
        .get(level)
        .ok_or_else(|| EvalError::Invalid(format!("no level {level}")))?;
    let f = |x: &Tensor| {
        let tape = Tape::new();
        let li = crate::model::LiParams {
            phi: tape.constant(lv.li.phi.clone()),
            beta: tape.constant(lv.li.beta.clone()),
        };
        let head = crate::model::Linear {
            weight: tape.constant(lv.li_head.weight.clone()),
            bias: tape.constant(lv.li_head.bias.clone()),
        };
        let h = tape.constant(rows_to_batch(x, c, d)?);
        let (l, _) = li_block(h, &li, &head, 0.0, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| EvalError::Model(e.into()))?;
        Ok(flatten_rows(&l.value()))
    };
    probe_affine(f, c * d, CHECK_PROBES, rng)
}

/// Local affine map of one nonlinear block on flattened `[C, D]` residuals.
fn probe_no_block(model: &LiNoModel, level: usize, rng: &mut impl Rng) -> Result<ProbedAffineMap, EvalError> {
    let (c, d) = (model.config.channels, model.config.dim);
    let f = |x: &Tensor| {
        let tape = Tape::new();
        let params = model.params.bind_constant(&tape);
        let lv = &params.levels[level];
        let r = tape.constant(rows_to_batch(x, c, d)?);
        let (n, _) = no_block(r, &lv.no, &lv.no_head, &model.config).map_err(|e| EvalError::Model(e.into()))?;
        Ok(flatten_rows(&n.value()))
    };
    probe_affine(f, c * d, CHECK_PROBES, rng)
}

/// Probes the whole forecaster from normalised `[C, T]` lookback to normalised `[C, F]` forecast.
pub fn probe_model(model: &LiNoModel, rng: &mut impl Rng) -> Result<ProbedAffineMap, EvalError> {
    let (c, t) = (model.config.channels, model.config.lookback);
    let f = |x: &Tensor| Ok(flatten_rows(&model.predict_normalized(&rows_to_batch(x, c, t)?)?));
    probe_affine(f, c * t, CHECK_PROBES, rng)
}

/// Probed maps of the linear and nonlinear block of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockProbe {
    pub level: usize,
    pub li: Option<ProbedAffineMap>,
    pub no: Option<ProbedAffineMap>,
}

/// Probes every block that the configuration keeps.
pub fn probe_levels(model: &LiNoModel, rng: &mut impl Rng) -> Result<Vec<BlockProbe>, EvalError> {
    let ab = model.config.ablation;
    (0..model.config.blocks)
        .map(|level| {
            Ok(BlockProbe {
                level,
                li: if ab.no_li { None } else { Some(probe_li_block(model, level, rng)?) },
                no: if ab.no_no { None } else { Some(probe_no_block(model, level, rng)?) },
            })
        })
        .collect()
}
