use std::fmt::Write;

use super::EvalError;
use crate::model::LiNoModel;
use crate::tensor::Tensor;

/// Per-level predictions of one input, on the data scale.
///
/// Each component is the level prediction times the RevIN scale; the input
/// mean is carried by the first linear component so that the components
/// sum to the forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub yhat: Tensor,
    /// `("li_1", [C, F]), ("no_1", ..), ("li_2", ..), ...`
    pub components: Vec<(String, Tensor)>,
    /// Share of prediction energy carried by the nonlinear predictions, normalised scale.
    pub nonlinear_energy: f64,
}

impl Decomposition {
    /// Sum of the components, in order.
    pub fn component_sum(&self) -> Tensor {
        let mut acc = self.components[0].1.clone();
        for (_, t) in &self.components[1..] {
            acc = acc.zip_map(t, |a, b| a + b).expect("same shape");
        }
        acc
    }

    /// Long-format CSV: `component,channel,h1,...,hF`, forecast first.
    pub fn to_csv(&self, channel_names: &[String]) -> String {
        let (c, f) = (self.yhat.shape()[0], self.yhat.shape()[1]);
        let mut s = String::from("component,channel");
        for h in 1..=f {
            let _ = write!(s, ",h{h}");
        }
        s.push('\n');
        let rows = std::iter::once(("yhat", &self.yhat)).chain(self.components.iter().map(|(n, t)| (n.as_str(), t)));
        for (name, t) in rows {
            for ch in 0..c {
                let label = channel_names.get(ch).cloned().unwrap_or_else(|| format!("c{ch}"));
                let _ = write!(s, "{name},{label}");
                for v in &t.data()[ch * f..(ch + 1) * f] {
                    let _ = write!(s, ",{v:?}");
                }
                s.push('\n');
            }
        }
        s
    }
}

fn energy(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum()
}

/// Splits the forecast for one `[C, T]` input into its `2N` level predictions.
pub fn export_decomposition(model: &LiNoModel, x: &Tensor) -> Result<Decomposition, EvalError> {
    if x.rank() != 2 {
        return Err(EvalError::Invalid(format!("expected one [C, T] input, got {:?}", x.shape())));
    }
    let trace = model.forward(x)?;
    let f = model.config.horizon;
    let (mu, sigma) = (&trace.stats.mu, &trace.stats.sigma);
    let scale = |t: &Tensor, shift: bool| {
        Tensor::from_fn(t.shape().to_vec(), |i| {
            let ch = i / f;
            t.data()[i] * sigma.data()[ch] + if shift { mu.data()[ch] } else { 0.0 }
        })
    };
    let mut components = Vec::with_capacity(2 * trace.levels.len());
    for (i, lv) in trace.levels.iter().enumerate() {
        components.push((format!("li_{}", i + 1), scale(&lv.p_li, i == 0)));
        components.push((format!("no_{}", i + 1), scale(&lv.p_no, false)));
    }
    let sum = |pick: fn(&crate::model::LevelTrace) -> &Tensor| {
        trace
            .levels
            .iter()
            .skip(1)
            .fold(pick(&trace.levels[0]).clone(), |acc, l| acc.zip_map(pick(l), |a, b| a + b).unwrap())
    };
    let (li, no) = (energy(&sum(|l| &l.p_li)), energy(&sum(|l| &l.p_no)));
    let nonlinear_energy = if li + no > 0.0 { no / (li + no) } else { 0.0 };
    Ok(Decomposition {
        yhat: trace.yhat,
        components,
        nonlinear_energy,
    })
}
