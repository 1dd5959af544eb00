//! Frequency-domain path of the nonlinear block.
//!
//! The feature axis is moved to the frequency domain with a real FFT, every
//! channel's spectrum is multiplied by one shared complex `B x B` matrix, and
//! the result is brought back with the inverse FFT. All three steps are tape
//! primitives, so the projection is differentiable in both its input and its
//! complex weights.

pub mod fft;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Non-negative frequency bins of a real signal, split into real and imaginary parts.
#[derive(Debug, Clone, Copy)]
pub struct ComplexSpectrum<'t> {
    pub re: Var<'t>,
    pub im: Var<'t>,
}

impl<'t> ComplexSpectrum<'t> {
    pub fn bins(&self) -> usize {
        *self.re.shape().last().unwrap()
    }

    fn packed(&self) -> Result<Var<'t>, TensorError> {
        let axis = self.re.shape().len() - 1;
        self.re.tape().concat(&[self.re, self.im], axis)
    }
}

/// Number of rfft bins for a length-`len` signal.
pub fn bin_count(len: usize) -> usize {
    len / 2 + 1
}

/// Unnormalised real FFT over the trailing axis.
pub fn rfft(x: Var<'_>) -> Result<ComplexSpectrum<'_>, TensorError> {
    let packed = x.rfft_packed()?;
    let axis = packed.shape().len() - 1;
    let bins = packed.shape()[axis] / 2;
    Ok(ComplexSpectrum {
        re: packed.slice(axis, 0, bins)?,
        im: packed.slice(axis, bins, 2 * bins)?,
    })
}

/// `1 / len` normalised inverse of [`rfft`].
pub fn irfft<'t>(spectrum: &ComplexSpectrum<'t>, len: usize) -> Result<Var<'t>, TensorError> {
    if spectrum.re.shape() != spectrum.im.shape() {
        return Err(TensorError::shape(
            "irfft",
            format!("re {:?} vs im {:?}", spectrum.re.shape(), spectrum.im.shape()),
        ));
    }
    if spectrum.bins() != bin_count(len) {
        return Err(TensorError::shape(
            "irfft",
            format!("{} bins cannot produce {len} samples", spectrum.bins()),
        ));
    }
    spectrum.packed()?.irfft_packed(len)
}

/// Complex `bins x bins` weight shared across channels: `out = s @ (re + i im)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexLinearLayer<T = Tensor> {
    pub re: T,
    pub im: T,
}

impl ComplexLinearLayer<Tensor> {
    pub fn identity(bins: usize) -> Self {
        ComplexLinearLayer {
            re: Tensor::eye(bins),
            im: Tensor::zeros([bins, bins]),
        }
    }

    /// Identity plus independent Gaussian perturbations on both parts.
    pub fn near_identity<R: Rng + ?Sized>(bins: usize, sigma: f64, rng: &mut R) -> Self {
        let noise = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
        let mut layer = Self::identity(bins);
        for v in layer.re.data_mut().iter_mut().chain(layer.im.data_mut()) {
            *v += noise.sample(rng);
        }
        layer
    }

    pub fn bins(&self) -> usize {
        self.re.shape()[0]
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> ComplexLinearLayer<Var<'t>> {
        ComplexLinearLayer {
            re: tape.leaf(self.re.clone()),
            im: tape.leaf(self.im.clone()),
        }
    }
}

/// `irfft(rfft(x) @ W)` over the trailing axis of `x`.
///
/// The complex product is evaluated as one real matmul of the packed
/// `[re | im]` spectrum with the block matrix `[[Wr, Wi], [-Wi, Wr]]`.
pub fn freq_projection<'t>(x: Var<'t>, layer: &ComplexLinearLayer<Var<'t>>) -> Result<Var<'t>, TensorError> {
    let shape = x.shape();
    let len = *shape
        .last()
        .ok_or_else(|| TensorError::arg("freq_projection", "scalar input"))?;
    if len % 2 != 0 {
        return Err(TensorError::arg(
            "freq_projection",
            format!("feature length must be even, got {len}"),
        ));
    }
    let bins = bin_count(len);
    let wshape = layer.re.shape();
    if wshape != [bins, bins] || layer.im.shape() != wshape {
        return Err(TensorError::shape(
            "freq_projection",
            format!("weights {wshape:?} for {bins} bins"),
        ));
    }
    let tape = x.tape();
    let neg_im = layer.im.scale(-1.0)?;
    let top = tape.concat(&[layer.re, layer.im], 1)?;
    let bottom = tape.concat(&[neg_im, layer.re], 1)?;
    let block = tape.concat(&[top, bottom], 0)?;
    x.rfft_packed()?.matmul(block)?.irfft_packed(len)
}

/// Plain-value rfft of one real signal, returning `(re, im)`.
pub fn rfft_values(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let plan = fft::RealFft::new(x.len());
    let (mut re, mut im) = (vec![0.0; plan.bins()], vec![0.0; plan.bins()]);
    plan.forward(x, &mut re, &mut im);
    (re, im)
}

/// Plain-value irfft producing `len` samples.
pub fn irfft_values(re: &[f64], im: &[f64], len: usize) -> Vec<f64> {
    let plan = fft::RealFft::new(len);
    let mut out = vec![0.0; len];
    plan.inverse(re, im, &mut out);
    out
}
