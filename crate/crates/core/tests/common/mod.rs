//! Central finite-difference oracle shared by the integration tests.
#![allow(dead_code)]

use lino::tensor::{Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn = numeric.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

/// Checks every input gradient of `f` against central differences.
///
/// `f` maps leaf variables to any-shaped output; the scalar loss is the
/// contraction of that output with fixed random weights so that every
/// output element contributes with a distinct coefficient.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Vec<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, TensorError>,
{
    let out_shape = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).unwrap().shape()
    };
    let weights = random_tensor(&out_shape, 0xfeed);
    let loss_of = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars).unwrap().value();
        out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars).unwrap();
    let w = tape.constant(weights.clone());
    let loss = out.mul(w).unwrap().sum().unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut errors = Vec::new();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let mut numeric = Tensor::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            numeric.data_mut()[j] = (loss_of(&plus) - loss_of(&minus)) / (2.0 * FD_STEP);
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    errors
}

pub fn assert_gradients<F>(name: &str, inputs: &[Tensor], tol: f64, f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, TensorError>,
{
    let errs = check_gradients(inputs, f);
    for (i, e) in errs.iter().enumerate() {
        assert!(*e < tol, "{name}: input {i} relative error {e:e} >= {tol:e}");
    }
}
