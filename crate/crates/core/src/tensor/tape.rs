//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] owns an append-only list of nodes. Every primitive applied to
//! a [`Var`] evaluates eagerly, records its inputs plus whatever it needs
//! for the adjoint, and returns a handle to the new node. Because nodes are
//! only ever appended, the list is topologically ordered by construction and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use lino::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
//! let loss = x.mul(x).unwrap().sum().unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use rand::Rng;

use super::{axis_split, gemm, MatView, Tensor, TensorError};
use crate::spectral::fft::RealFft;

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

type Id = usize;

enum Op {
    Leaf,
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    Scale(Id, f64),
    AddScalar(Id),
    Tanh(Id),
    Gelu(Id),
    MatMul { x: Id, w: Id },
    AddBias { x: Id, b: Id },
    CausalConv { h: Id, phi: Id, beta: Id },
    Softmax { x: Id, axis: usize },
    LayerNorm { x: Id, gamma: Id, beta: Id, xhat: Vec<f64>, inv_std: Vec<f64> },
    Dropout { x: Id, mask: Vec<f64> },
    Sum(Id),
    SumAxis { x: Id, axis: usize },
    Concat { inputs: Vec<Id>, axis: usize },
    Slice { x: Id, axis: usize, start: usize },
    Transpose { x: Id, a0: usize, a1: usize },
    Reshape(Id),
    RepeatAxis { x: Id, axis: usize },
    Rfft(Id),
    Irfft(Id),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable computation; confined to the thread that builds it.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.nodes.borrow().len())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: Id,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

/// Gradients of a scalar loss with respect to every differentiable leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`; zeros shaped like it when it does not influence the loss.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape().to_vec()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Registers a non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, Op::Leaf, false)
    }

    fn push_unchecked(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op, inputs: &[Id]) -> Result<Var<'_>, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn value(&self, id: Id) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn check_owner(&self, v: Var<'_>) -> Result<(), TensorError> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(TensorError::ForeignVar)
        }
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, vars: &[Var<'t>], axis: usize) -> Result<Var<'t>, TensorError> {
        let first = vars
            .first()
            .ok_or_else(|| TensorError::arg("concat", "no inputs"))?
            .value();
        if axis >= first.rank() {
            return Err(TensorError::arg("concat", format!("axis {axis} for rank {}", first.rank())));
        }
        let values: Vec<Rc<Tensor>> = vars.iter().map(|v| v.value()).collect();
        for (v, t) in vars.iter().zip(&values) {
            self.check_owner(*v)?;
            let ok = t.rank() == first.rank()
                && t.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {axis}", t.shape(), first.shape()),
                ));
            }
        }
        let total: usize = values.iter().map(|t| t.shape()[axis]).sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for t in &values {
                let n = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * n..(o + 1) * n]);
            }
        }
        let ids: Vec<Id> = vars.iter().map(|v| v.id).collect();
        self.push("concat", Tensor::new(shape, data)?, Op::Concat { inputs: ids.clone(), axis }, &ids)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        self.check_owner(loss)?;
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape();
        if nodes[loss.id].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
        }
        let out = nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| match (&n.op, n.requires_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(data) => Tensor::new(n.value.shape().to_vec(), data).expect("gradient shape"),
                    None => Tensor::zeros(n.value.shape().to_vec()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: out })
    }
}

fn accumulate<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], id: Id) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(dst: &mut [f64], src: impl Iterator<Item = f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: Id| -> &Tensor { &nodes[id].value };
    match node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(ga) = accumulate(nodes, grads, a) {
                add_into(ga, g.iter().copied());
            }
            if let Some(gb) = accumulate(nodes, grads, b) {
                add_into(gb, g.iter().copied());
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = accumulate(nodes, grads, a) {
                add_into(ga, g.iter().copied());
            }
            if let Some(gb) = accumulate(nodes, grads, b) {
                add_into(gb, g.iter().map(|v| -v));
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(a), val(b));
            if let Some(ga) = accumulate(nodes, grads, a) {
                add_into(ga, g.iter().zip(vb.data()).map(|(g, b)| g * b));
            }
            if let Some(gb) = accumulate(nodes, grads, b) {
                add_into(gb, g.iter().zip(va.data()).map(|(g, a)| g * a));
            }
        }
        Op::Scale(a, s) => {
            if let Some(ga) = accumulate(nodes, grads, a) {
                add_into(ga, g.iter().map(|v| v * s));
            }
        }
        Op::AddScalar(a) => {
            if let Some(ga) = accumulate(nodes, grads, a) {
                add_into(ga, g.iter().copied());
            }
        }
        Op::Tanh(a) => {
            let y = node.value.data();
            if let Some(ga) = accumulate(nodes, grads, a) {
                add_into(ga, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)));
            }
        }
        Op::Gelu(a) => {
            let x = val(a).data();
            if let Some(ga) = accumulate(nodes, grads, a) {
                add_into(ga, g.iter().zip(x).map(|(g, &x)| g * gelu_derivative(x)));
            }
        }
        Op::MatMul { x, w } => {
            let (vx, vw) = (val(x), val(w));
            let (inner, out) = (vw.shape()[0], vw.shape()[1]);
            let rows = vx.numel() / inner;
            let gv = MatView::row_major(g, rows, out);
            if let Some(gx) = accumulate(nodes, grads, x) {
                gemm(1.0, gv, MatView::row_major(vw.data(), inner, out).t(), 1.0, gx, inner);
            }
            if let Some(gw) = accumulate(nodes, grads, w) {
                gemm(1.0, MatView::row_major(vx.data(), rows, inner).t(), gv, 1.0, gw, out);
            }
        }
        Op::AddBias { x, b } => {
            if let Some(gx) = accumulate(nodes, grads, x) {
                add_into(gx, g.iter().copied());
            }
            if let Some(gb) = accumulate(nodes, grads, b) {
                let n = gb.len();
                for row in g.chunks_exact(n) {
                    add_into(gb, row.iter().copied());
                }
            }
        }
        Op::CausalConv { h, phi, beta } => {
            let (vh, vphi) = (val(h), val(phi));
            let (c, d) = (vphi.shape()[0], vphi.shape()[1]);
            let rows = vh.numel() / (c * d);
            let want_h = nodes[h].requires_grad;
            let want_phi = nodes[phi].requires_grad;
            let mut gphi = vec![0.0; c * d];
            let mut gh = vec![0.0; if want_h { vh.numel() } else { 0 }];
            let mut corr = vec![0.0; d * d];
            for ch in 0..c {
                let gview = channel_view(&g[ch * d..], rows, c, d);
                if want_h {
                    let toeplitz = causal_toeplitz(&vphi.data()[ch * d..(ch + 1) * d]);
                    gemm(1.0, gview, MatView::row_major(&toeplitz, d, d).t(), 0.0, &mut gh[ch * d..], c * d);
                }
                if want_phi {
                    let hview = channel_view(&vh.data()[ch * d..], rows, c, d);
                    gemm(1.0, hview.t(), gview, 0.0, &mut corr, d);
                    for lag in 0..d {
                        gphi[ch * d + lag] = (0..d - lag).map(|j| corr[j * d + j + lag]).sum();
                    }
                }
            }
            if let Some(dst) = accumulate(nodes, grads, h) {
                add_into(dst, gh.into_iter());
            }
            if let Some(dst) = accumulate(nodes, grads, phi) {
                add_into(dst, gphi.into_iter());
            }
            if let Some(gb) = accumulate(nodes, grads, beta) {
                for (i, v) in g.iter().enumerate() {
                    gb[(i / d) % c] += v;
                }
            }
        }
        Op::Softmax { x, axis } => {
            let y = node.value.data();
            let (outer, n, inner) = axis_split(node.value.shape(), axis);
            if let Some(gx) = accumulate(nodes, grads, x) {
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |i: usize| (o * n + i) * inner + j;
                        let dot: f64 = (0..n).map(|i| g[at(i)] * y[at(i)]).sum();
                        for i in 0..n {
                            gx[at(i)] += y[at(i)] * (g[at(i)] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, ref xhat, ref inv_std } => {
            let vgamma = val(gamma);
            let d = vgamma.numel();
            if let Some(gg) = accumulate(nodes, grads, gamma) {
                for (grow, xrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    add_into(gg, grow.iter().zip(xrow).map(|(g, x)| g * x));
                }
            }
            if let Some(gb) = accumulate(nodes, grads, beta) {
                for grow in g.chunks_exact(d) {
                    add_into(gb, grow.iter().copied());
                }
            }
            if let Some(gx) = accumulate(nodes, grads, x) {
                let gam = vgamma.data();
                for (r, ((grow, xrow), dst)) in g
                    .chunks_exact(d)
                    .zip(xhat.chunks_exact(d))
                    .zip(gx.chunks_exact_mut(d))
                    .enumerate()
                {
                    let gxhat: Vec<f64> = grow.iter().zip(gam).map(|(g, w)| g * w).collect();
                    let mean_g = gxhat.iter().sum::<f64>() / d as f64;
                    let mean_gx = gxhat.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for i in 0..d {
                        dst[i] += inv_std[r] * (gxhat[i] - mean_g - xrow[i] * mean_gx);
                    }
                }
            }
        }
        Op::Dropout { x, ref mask } => {
            if let Some(gx) = accumulate(nodes, grads, x) {
                add_into(gx, g.iter().zip(mask).map(|(g, m)| g * m));
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = accumulate(nodes, grads, a) {
                let s = g[0];
                ga.iter_mut().for_each(|v| *v += s);
            }
        }
        Op::SumAxis { x, axis } => {
            let vx = val(x);
            let (outer, n, inner) = axis_split(vx.shape(), axis);
            if let Some(gx) = accumulate(nodes, grads, x) {
                for o in 0..outer {
                    for i in 0..n {
                        let base = (o * n + i) * inner;
                        add_into(&mut gx[base..base + inner], g[o * inner..(o + 1) * inner].iter().copied());
                    }
                }
            }
        }
        Op::Concat { ref inputs, axis } => {
            let (outer, total, inner) = axis_split(node.value.shape(), axis);
            let mut offset = 0;
            for &id in inputs {
                let n = nodes[id].value.shape()[axis];
                if let Some(gi) = accumulate(nodes, grads, id) {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        add_into(&mut gi[o * n * inner..(o + 1) * n * inner], g[src..src + n * inner].iter().copied());
                    }
                }
                offset += n;
            }
        }
        Op::Slice { x, axis, start } => {
            let vx = val(x);
            let (outer, n, inner) = axis_split(vx.shape(), axis);
            let len = node.value.shape()[axis];
            if let Some(gx) = accumulate(nodes, grads, x) {
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    add_into(&mut gx[dst..dst + len * inner], g[o * len * inner..(o + 1) * len * inner].iter().copied());
                }
            }
        }
        Op::Transpose { x, a0, a1 } => {
            if let Some(gx) = accumulate(nodes, grads, x) {
                let gt = transpose_data(g, node.value.shape(), a0, a1);
                add_into(gx, gt.into_iter());
            }
        }
        Op::Reshape(x) => {
            if let Some(gx) = accumulate(nodes, grads, x) {
                add_into(gx, g.iter().copied());
            }
        }
        Op::RepeatAxis { x, axis } => {
            let (outer, n, inner) = axis_split(node.value.shape(), axis);
            if let Some(gx) = accumulate(nodes, grads, x) {
                for o in 0..outer {
                    for i in 0..n {
                        let src = (o * n + i) * inner;
                        add_into(&mut gx[o * inner..(o + 1) * inner], g[src..src + inner].iter().copied());
                    }
                }
            }
        }
        Op::Rfft(x) => {
            let vx = val(x);
            let d = *vx.shape().last().unwrap();
            let plan = RealFft::new(d);
            let bins = plan.bins();
            if let Some(gx) = accumulate(nodes, grads, x) {
                let mut row = vec![0.0; d];
                for (grow, dst) in g.chunks_exact(2 * bins).zip(gx.chunks_exact_mut(d)) {
                    plan.forward_adjoint(&grow[..bins], &grow[bins..], &mut row);
                    add_into(dst, row.iter().copied());
                }
            }
        }
        Op::Irfft(x) => {
            let d = *node.value.shape().last().unwrap();
            let plan = RealFft::new(d);
            let bins = plan.bins();
            if let Some(gx) = accumulate(nodes, grads, x) {
                let (mut re, mut im) = (vec![0.0; bins], vec![0.0; bins]);
                for (grow, dst) in g.chunks_exact(d).zip(gx.chunks_exact_mut(2 * bins)) {
                    plan.inverse_adjoint(grow, &mut re, &mut im);
                    add_into(&mut dst[..bins], re.iter().copied());
                    add_into(&mut dst[bins..], im.iter().copied());
                }
            }
        }
    }
}

/// Rows of one channel inside a `[rows, channels, dim]` buffer starting at that channel.
fn channel_view(data: &[f64], rows: usize, channels: usize, dim: usize) -> MatView<'_> {
    MatView {
        data,
        rows,
        cols: dim,
        row_stride: channels * dim,
        col_stride: 1,
    }
}

/// Upper-triangular Toeplitz `t[j][d] = kernel[d - j]` so that `h @ t` is the causal convolution.
fn causal_toeplitz(kernel: &[f64]) -> Vec<f64> {
    let d = kernel.len();
    let mut t = vec![0.0; d * d];
    for j in 0..d {
        t[j * d + j..(j + 1) * d].copy_from_slice(&kernel[..d - j]);
    }
    t
}

fn transpose_data(data: &[f64], shape: &[usize], a0: usize, a1: usize) -> Vec<f64> {
    let mut out_shape = shape.to_vec();
    out_shape.swap(a0, a1);
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides.swap(a0, a1);
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        out.push(data[idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>()]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn binary(self, other: Var<'t>, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var<'t>, TensorError> {
        self.tape.check_owner(other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(TensorError::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let out = a.zip_map(&b, f)?;
        self.tape.push(name, out, op, &[self.id, other.id])
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>, TensorError> {
        let out = self.value().map(|v| v * s);
        self.tape.push("scale", out, Op::Scale(self.id, s), &[self.id])
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t>, TensorError> {
        let out = self.value().map(|v| v + s);
        self.tape.push("add_scalar", out, Op::AddScalar(self.id), &[self.id])
    }

    pub fn tanh(self) -> Result<Var<'t>, TensorError> {
        let out = self.value().map(f64::tanh);
        self.tape.push("tanh", out, Op::Tanh(self.id), &[self.id])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Result<Var<'t>, TensorError> {
        let out = self.value().map(gelu);
        self.tape.push("gelu", out, Op::Gelu(self.id), &[self.id])
    }

    /// `self @ w` over the trailing axis; `w` is `[in, out]`.
    pub fn matmul(self, w: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.tape.check_owner(w)?;
        let (x, wv) = (self.value(), w.value());
        if wv.rank() != 2 || x.rank() == 0 || *x.shape().last().unwrap() != wv.shape()[0] {
            return Err(TensorError::shape("matmul", format!("{:?} @ {:?}", x.shape(), wv.shape())));
        }
        let (inner, out) = (wv.shape()[0], wv.shape()[1]);
        let rows = x.numel() / inner;
        let mut data = vec![0.0; rows * out];
        gemm(
            1.0,
            MatView::row_major(x.data(), rows, inner),
            MatView::row_major(wv.data(), inner, out),
            0.0,
            &mut data,
            out,
        );
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out;
        self.tape.push("matmul", Tensor::new(shape, data)?, Op::MatMul { x: self.id, w: w.id }, &[self.id, w.id])
    }

    /// Adds a `[last]` bias to every trailing-axis row.
    pub fn add_bias(self, b: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.tape.check_owner(b)?;
        let (x, bv) = (self.value(), b.value());
        if bv.rank() != 1 || x.rank() == 0 || *x.shape().last().unwrap() != bv.numel() {
            return Err(TensorError::shape("add_bias", format!("{:?} + {:?}", x.shape(), bv.shape())));
        }
        let n = bv.numel();
        let data = x
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(bv.data()).map(|(a, b)| a + b))
            .collect();
        self.tape.push(
            "add_bias",
            Tensor::new(x.shape().to_vec(), data)?,
            Op::AddBias { x: self.id, b: b.id },
            &[self.id, b.id],
        )
    }

    /// Affine map `self @ w + b` over the trailing axis.
    pub fn linear(self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.matmul(w)?.add_bias(b)
    }

    /// Per-channel causal convolution with a full-length kernel.
    ///
    /// `self` is `[.., C, D]`, `phi` is `[C, D]`, `beta` is `[C]`, and
    /// `out[.., c, d] = sum_{k<=d} phi[c, k] * h[.., c, d - k] + beta[c]`.
    pub fn causal_conv(self, phi: Var<'t>, beta: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.tape.check_owner(phi)?;
        self.tape.check_owner(beta)?;
        let (h, vphi, vbeta) = (self.value(), phi.value(), beta.value());
        let bad = h.rank() < 2
            || vphi.rank() != 2
            || h.shape()[h.rank() - 2..] != *vphi.shape()
            || vbeta.shape() != [vphi.shape()[0]];
        if bad {
            return Err(TensorError::shape(
                "causal_conv",
                format!("h {:?}, phi {:?}, beta {:?}", h.shape(), vphi.shape(), vbeta.shape()),
            ));
        }
        let (c, d) = (vphi.shape()[0], vphi.shape()[1]);
        let rows = h.numel() / (c * d);
        let mut out = vec![0.0; h.numel()];
        for ch in 0..c {
            let toeplitz = causal_toeplitz(&vphi.data()[ch * d..(ch + 1) * d]);
            gemm(
                1.0,
                channel_view(&h.data()[ch * d..], rows, c, d),
                MatView::row_major(&toeplitz, d, d),
                0.0,
                &mut out[ch * d..],
                c * d,
            );
        }
        for (i, v) in out.iter_mut().enumerate() {
            *v += vbeta.data()[(i / d) % c];
        }
        self.tape.push(
            "causal_conv",
            Tensor::new(h.shape().to_vec(), out)?,
            Op::CausalConv { h: self.id, phi: phi.id, beta: beta.id },
            &[self.id, phi.id, beta.id],
        )
    }

    /// Max-stabilised softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(TensorError::arg("softmax", format!("axis {axis} for rank {}", x.rank())));
        }
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = x.data().to_vec();
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * n + i) * inner + j;
                let max = (0..n).map(|i| out[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..n {
                    let e = (out[at(i)] - max).exp();
                    out[at(i)] = e;
                    total += e;
                }
                for i in 0..n {
                    out[at(i)] /= total;
                }
            }
        }
        self.tape.push(
            "softmax",
            Tensor::new(x.shape().to_vec(), out)?,
            Op::Softmax { x: self.id, axis },
            &[self.id],
        )
    }

    /// Normalises the trailing axis to zero mean and unit population variance, then applies `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>, TensorError> {
        self.tape.check_owner(gamma)?;
        self.tape.check_owner(beta)?;
        if eps <= 0.0 {
            return Err(TensorError::arg("layer_norm", format!("eps must be positive, got {eps}")));
        }
        let (x, vg, vb) = (self.value(), gamma.value(), beta.value());
        let d = vg.numel();
        if x.rank() == 0 || *x.shape().last().unwrap() != d || vg.shape() != [d] || vb.shape() != [d] {
            return Err(TensorError::shape(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", x.shape(), vg.shape(), vb.shape()),
            ));
        }
        let rows = x.numel() / d;
        let mut xhat = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.numel()];
        for (r, row) in x.data().chunks_exact(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..d {
                let xh = (row[i] - mean) * is;
                xhat[r * d + i] = xh;
                out[r * d + i] = xh * vg.data()[i] + vb.data()[i];
            }
        }
        self.tape.push(
            "layer_norm",
            Tensor::new(x.shape().to_vec(), out)?,
            Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std },
            &[self.id, gamma.id, beta.id],
        )
    }

    /// Inverted dropout; identity in [`Mode::Eval`] or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(self, p: f64, mode: Mode, rng: &mut R) -> Result<Var<'t>, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::arg("dropout", format!("p must be in [0, 1), got {p}")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        self.tape.push(
            "dropout",
            Tensor::new(x.shape().to_vec(), out)?,
            Op::Dropout { x: self.id, mask },
            &[self.id],
        )
    }

    /// Sum of every element, as a scalar.
    pub fn sum(self) -> Result<Var<'t>, TensorError> {
        let total = self.value().sum();
        self.tape.push("sum", Tensor::scalar(total), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Var<'t>, TensorError> {
        let n = self.value().numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(TensorError::arg("sum_axis", format!("axis {axis} for rank {}", x.rank())));
        }
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let base = (o * n + i) * inner;
                add_into(&mut out[o * inner..(o + 1) * inner], x.data()[base..base + inner].iter().copied());
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        self.tape.push("sum_axis", Tensor::new(shape, out)?, Op::SumAxis { x: self.id, axis }, &[self.id])
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>, TensorError> {
        let n = self
            .value()
            .shape()
            .get(axis)
            .copied()
            .ok_or_else(|| TensorError::arg("mean_axis", format!("axis {axis} out of range")))?;
        self.sum_axis(axis)?.scale(1.0 / n as f64)
    }

    /// Keeps indices `start..end` of `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        if axis >= x.rank() || start >= end || end > x.shape()[axis] {
            return Err(TensorError::shape(
                "slice",
                format!("{start}..{end} on axis {axis} of {:?}", x.shape()),
            ));
        }
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let len = end - start;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        self.tape.push("slice", Tensor::new(shape, out)?, Op::Slice { x: self.id, axis, start }, &[self.id])
    }

    /// Swaps two axes.
    pub fn transpose(self, a0: usize, a1: usize) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        if a0 >= x.rank() || a1 >= x.rank() {
            return Err(TensorError::arg("transpose", format!("axes ({a0}, {a1}) for rank {}", x.rank())));
        }
        let data = transpose_data(x.data(), x.shape(), a0, a1);
        let mut shape = x.shape().to_vec();
        shape.swap(a0, a1);
        self.tape.push("transpose", Tensor::new(shape, data)?, Op::Transpose { x: self.id, a0, a1 }, &[self.id])
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>, TensorError> {
        let out = self.value().reshape(shape)?;
        self.tape.push("reshape", out, Op::Reshape(self.id), &[self.id])
    }

    /// Repeats an extent-1 `axis` `n` times.
    pub fn repeat_axis(self, axis: usize, n: usize) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        if axis >= x.rank() || x.shape()[axis] != 1 || n == 0 {
            return Err(TensorError::shape("repeat_axis", format!("axis {axis} of {:?}", x.shape())));
        }
        let (outer, _, inner) = axis_split(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&x.data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = n;
        self.tape.push("repeat_axis", Tensor::new(shape, out)?, Op::RepeatAxis { x: self.id, axis }, &[self.id])
    }

    /// Real DFT of the trailing axis, packed as `[re_0..re_B, im_0..im_B]`.
    pub fn rfft_packed(self) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        let d = x.shape().last().copied().unwrap_or(0);
        if d < 2 {
            return Err(TensorError::arg("rfft", format!("length must be >= 2, got {d}")));
        }
        let plan = RealFft::new(d);
        let bins = plan.bins();
        let rows = x.numel() / d;
        let mut out = vec![0.0; rows * 2 * bins];
        for (src, dst) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(2 * bins)) {
            let (re, im) = dst.split_at_mut(bins);
            plan.forward(src, re, im);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = 2 * bins;
        self.tape.push("rfft", Tensor::new(shape, out)?, Op::Rfft(self.id), &[self.id])
    }

    /// Inverse of [`Var::rfft_packed`] producing `len` real samples per row.
    pub fn irfft_packed(self, len: usize) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        if len < 2 {
            return Err(TensorError::arg("irfft", format!("length must be >= 2, got {len}")));
        }
        let plan = RealFft::new(len);
        let bins = plan.bins();
        if x.shape().last().copied() != Some(2 * bins) {
            return Err(TensorError::shape(
                "irfft",
                format!("{:?} does not hold {bins} bins for length {len}", x.shape()),
            ));
        }
        let rows = x.numel() / (2 * bins);
        let mut out = vec![0.0; rows * len];
        for (src, dst) in x.data().chunks_exact(2 * bins).zip(out.chunks_exact_mut(len)) {
            plan.inverse(&src[..bins], &src[bins..], dst);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.tape.push("irfft", Tensor::new(shape, out)?, Op::Irfft(self.id), &[self.id])
    }
}
