//! Named parameter tree, generic over the leaf type.
//!
//! The same structure holds plain tensors ([`LiNoParams`]), tape variables
//! during a forward pass, and optimizer moments. [`ParamGroup`] gives a
//! fixed traversal order shared by naming, checkpointing and updates.

use rand::Rng;

use super::{LiNoConfig, ModelError, Variant};
use crate::spectral::{bin_count, ComplexLinearLayer};
use crate::tensor::{Tape, Tensor, Var};

/// Deterministic traversal over the leaves of a parameter structure.
pub trait ParamGroup<T> {
    type Mapped<U>;

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>);
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Self::Mapped<U>;
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map over the trailing axis: `x @ weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T = Tensor> {
    pub weight: T,
    pub bias: T,
}

/// Two-layer perceptron with a GELU between the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T = Tensor> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

/// Layer-norm affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm<T = Tensor> {
    pub gamma: T,
    pub beta: T,
}

/// Autoregressive kernel of the linear block.
#[derive(Debug, Clone, PartialEq)]
pub struct LiParams<T = Tensor> {
    pub phi: T,
    pub beta: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoParams<T = Tensor> {
    pub temporal: Linear<T>,
    pub freq: ComplexLinearLayer<T>,
    pub mix: Mlp<T>,
    pub norm1: Norm<T>,
    pub norm2: Norm<T>,
    pub ff: Mlp<T>,
}

/// One decomposition level: linear block, nonlinear block and their heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Level<T = Tensor> {
    pub li: LiParams<T>,
    pub li_head: Linear<T>,
    pub no: NoParams<T>,
    pub no_head: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub embed: Linear<T>,
    pub levels: Vec<Level<T>>,
}

pub type LiNoParams = ModelParams<Tensor>;

macro_rules! leaf_pair {
    ($ty:ident, $a:ident, $b:ident) => {
        impl<T> ParamGroup<T> for $ty<T> {
            type Mapped<U> = $ty<U>;

            fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
                out.push((join(prefix, stringify!($a)), &self.$a));
                out.push((join(prefix, stringify!($b)), &self.$b));
            }

            fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
                out.push(&mut self.$a);
                out.push(&mut self.$b);
            }

            fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> $ty<U> {
                $ty {
                    $a: f(&self.$a),
                    $b: f(&self.$b),
                }
            }
        }
    };
}

leaf_pair!(Linear, weight, bias);
leaf_pair!(Norm, gamma, beta);
leaf_pair!(LiParams, phi, beta);
leaf_pair!(ComplexLinearLayer, re, im);

impl<T> ParamGroup<T> for Mlp<T> {
    type Mapped<U> = Mlp<U>;

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        self.hidden.visit(&join(prefix, "hidden"), out);
        self.out.visit(&join(prefix, "out"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        self.hidden.visit_mut(out);
        self.out.visit_mut(out);
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Mlp<U> {
        Mlp {
            hidden: self.hidden.map(f),
            out: self.out.map(f),
        }
    }
}

impl<T> ParamGroup<T> for NoParams<T> {
    type Mapped<U> = NoParams<U>;

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        self.temporal.visit(&join(prefix, "temporal"), out);
        self.freq.visit(&join(prefix, "freq"), out);
        self.mix.visit(&join(prefix, "mix"), out);
        self.norm1.visit(&join(prefix, "norm1"), out);
        self.norm2.visit(&join(prefix, "norm2"), out);
        self.ff.visit(&join(prefix, "ff"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        self.temporal.visit_mut(out);
        self.freq.visit_mut(out);
        self.mix.visit_mut(out);
        self.norm1.visit_mut(out);
        self.norm2.visit_mut(out);
        self.ff.visit_mut(out);
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> NoParams<U> {
        NoParams {
            temporal: self.temporal.map(f),
            freq: self.freq.map(f),
            mix: self.mix.map(f),
            norm1: self.norm1.map(f),
            norm2: self.norm2.map(f),
            ff: self.ff.map(f),
        }
    }
}

impl<T> ParamGroup<T> for Level<T> {
    type Mapped<U> = Level<U>;

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        self.li.visit(&join(prefix, "li"), out);
        self.li_head.visit(&join(prefix, "li_head"), out);
        self.no.visit(&join(prefix, "no"), out);
        self.no_head.visit(&join(prefix, "no_head"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        self.li.visit_mut(out);
        self.li_head.visit_mut(out);
        self.no.visit_mut(out);
        self.no_head.visit_mut(out);
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Level<U> {
        Level {
            li: self.li.map(f),
            li_head: self.li_head.map(f),
            no: self.no.map(f),
            no_head: self.no_head.map(f),
        }
    }
}

impl<T> ParamGroup<T> for ModelParams<T> {
    type Mapped<U> = ModelParams<U>;

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        self.embed.visit(&join(prefix, "embed"), out);
        for (i, level) in self.levels.iter().enumerate() {
            level.visit(&join(prefix, &format!("level{}", i + 1)), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        self.embed.visit_mut(out);
        for level in &mut self.levels {
            level.visit_mut(out);
        }
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            embed: self.embed.map(f),
            levels: self.levels.iter().map(|l| l.map(f)).collect(),
        }
    }
}

impl<T> ModelParams<T> {
    /// Every leaf with its dotted name, in traversal order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.visit_mut(&mut out);
        out
    }
}

impl ModelParams<Tensor> {
    /// Registers every tensor as a differentiable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> ModelParams<Var<'t>> {
        self.map(&mut |t: &Tensor| tape.leaf(t.clone()))
    }

    /// Registers every tensor as a constant on `tape`.
    pub fn bind_constant<'t>(&self, tape: &'t Tape) -> ModelParams<Var<'t>> {
        self.map(&mut |t: &Tensor| tape.constant(t.clone()))
    }

    pub fn zeros_like(&self) -> Self {
        self.map(&mut |t: &Tensor| Tensor::zeros(t.shape().to_vec()))
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// Shape every named tensor must have under `config`.
    pub fn expected_shapes(config: &LiNoConfig) -> Vec<(String, Vec<usize>)> {
        let shapes = shape_template(config);
        shapes.named().into_iter().map(|(n, s)| (n, s.clone())).collect()
    }

    /// Rebuilds a parameter set from named tensors, checking every shape against `config`.
    pub fn from_named(config: &LiNoConfig, mut named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let template = shape_template(config);
        let expected = template.named();
        let mut by_name = std::collections::HashMap::new();
        for (name, t) in named.drain(..) {
            if by_name.insert(name.clone(), t).is_some() {
                return Err(ModelError::Params(format!("tensor `{name}` present more than once")));
            }
        }
        let mut ordered = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let t = by_name
                .remove(name)
                .ok_or_else(|| ModelError::Params(format!("missing tensor `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Dimension {
                    tensor: name.clone(),
                    expected: (*shape).clone(),
                    found: t.shape().to_vec(),
                });
            }
            ordered.push(t);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(ModelError::Params(format!("unexpected tensor `{extra}`")));
        }
        let mut it = ordered.into_iter();
        Ok(template.map(&mut |_| it.next().expect("same traversal order")))
    }
}

fn shape_template(config: &LiNoConfig) -> ModelParams<Vec<usize>> {
    let (c, t, f, d, h) = (
        config.channels,
        config.lookback,
        config.horizon,
        config.dim,
        config.mlp_hidden,
    );
    let b = bin_count(d);
    let lin = |i: usize, o: usize| Linear {
        weight: vec![i, o],
        bias: vec![o],
    };
    let norm = || Norm {
        gamma: vec![d],
        beta: vec![d],
    };
    let level = || Level {
        li: LiParams {
            phi: vec![c, d],
            beta: vec![c],
        },
        li_head: lin(d, f),
        no: NoParams {
            temporal: lin(d, d),
            freq: ComplexLinearLayer {
                re: vec![b, b],
                im: vec![b, b],
            },
            mix: Mlp {
                hidden: lin(2 * d, h),
                out: lin(h, d),
            },
            norm1: norm(),
            norm2: norm(),
            ff: Mlp {
                hidden: lin(d, h),
                out: lin(h, d),
            },
        },
        no_head: lin(d, f),
    };
    ModelParams {
        embed: lin(t, d),
        levels: (0..config.blocks).map(|_| level()).collect(),
    }
}

/// Glorot-uniform `[fan_in, fan_out]` weight with zero bias.
pub fn glorot_linear<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Linear {
    let bound = glorot_bound(fan_in, fan_out);
    Linear {
        weight: Tensor::from_fn([fan_in, fan_out], |_| rng.random_range(-bound..=bound)),
        bias: Tensor::zeros([fan_out]),
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Standard deviation of the Gaussian perturbation on the complex frequency weights.
pub const FREQ_INIT_SIGMA: f64 = 0.01;

/// Draws initial parameters: Glorot linear layers, near-identity frequency weights, unit norms.
///
/// AR kernels start so that each level passes its input straight through:
/// zero for LiNo and Mu, whose next level sees `H - ...`, and the lag-0 unit
/// tap for Raw and Ln, whose next level sees the nonlinear block applied to
/// `L`. A zero kernel in the latter two leaves stacked levels at a saddle
/// where no kernel receives gradient.
pub fn init_params<R: Rng + ?Sized>(config: &LiNoConfig, rng: &mut R) -> Result<LiNoParams, ModelError> {
    config.validate()?;
    let (c, t, f, d, h) = (
        config.channels,
        config.lookback,
        config.horizon,
        config.dim,
        config.mlp_hidden,
    );
    let embed = glorot_linear(t, d, rng);
    let mut levels = Vec::with_capacity(config.blocks);
    for _ in 0..config.blocks {
        let li = LiParams {
            phi: match config.variant {
                Variant::LiNo | Variant::Mu => Tensor::zeros([c, d]),
                Variant::Raw | Variant::Ln => Tensor::from_fn([c, d], |i| if i % d == 0 { 1.0 } else { 0.0 }),
            },
            beta: Tensor::zeros([c]),
        };
        let li_head = glorot_linear(d, f, rng);
        let temporal = glorot_linear(d, d, rng);
        let freq = ComplexLinearLayer::near_identity(bin_count(d), FREQ_INIT_SIGMA, rng);
        let mix = Mlp {
            hidden: glorot_linear(2 * d, h, rng),
            out: glorot_linear(h, d, rng),
        };
        let ff = Mlp {
            hidden: glorot_linear(d, h, rng),
            out: glorot_linear(h, d, rng),
        };
        let unit = || Norm {
            gamma: Tensor::full([d], 1.0),
            beta: Tensor::zeros([d]),
        };
        let no_head = glorot_linear(d, f, rng);
        levels.push(Level {
            li,
            li_head,
            no: NoParams {
                temporal,
                freq,
                mix,
                norm1: unit(),
                norm2: unit(),
                ff,
            },
            no_head,
        });
    }
    Ok(ModelParams { embed, levels })
}
