//! Radix-2 Cooley-Tukey FFT with a direct DFT fallback for other lengths.
//!
//! [`RealFft`] wraps the complex transform with the real-signal conventions
//! used by the model: unnormalised forward transform returning the
//! `len / 2 + 1` non-negative frequency bins, and a `1 / len` normalised
//! inverse that treats the imaginary parts of the DC and Nyquist bins as
//! zero. It also provides the adjoints of both maps for backpropagation.

use std::f64::consts::PI;

/// In-place complex transform of a fixed length.
#[derive(Debug, Clone)]
pub struct ComplexFft {
    len: usize,
    radix2: bool,
    // cos/sin of 2*pi*k/len for k < len
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl ComplexFft {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "fft length must be positive");
        let (cos, sin) = (0..len)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / len as f64;
                (a.cos(), a.sin())
            })
            .unzip();
        ComplexFft {
            len,
            radix2: len.is_power_of_two(),
            cos,
            sin,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalised transform with kernel `exp(-i 2 pi k n / len)`, or
    /// `exp(+i ...)` when `inverse` is set.
    pub fn process(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        assert_eq!(re.len(), self.len);
        assert_eq!(im.len(), self.len);
        if self.radix2 {
            self.radix2_in_place(re, im, inverse);
        } else {
            self.direct(re, im, inverse);
        }
    }

    fn radix2_in_place(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.len;
        let bits = n.trailing_zeros();
        if bits == 0 {
            return;
        }
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let step = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * step], sign * self.sin[k * step]);
                    let (a, b) = (start + k, start + k + half);
                    let tr = wr * re[b] - wi * im[b];
                    let ti = wr * im[b] + wi * re[b];
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            size *= 2;
        }
    }

    fn direct(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.len;
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut out_re = vec![0.0; n];
        let mut out_im = vec![0.0; n];
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for t in 0..n {
                let idx = (k * t) % n;
                let (c, s) = (self.cos[idx], sign * self.sin[idx]);
                sr += re[t] * c - im[t] * s;
                si += re[t] * s + im[t] * c;
            }
            out_re[k] = sr;
            out_im[k] = si;
        }
        re.copy_from_slice(&out_re);
        im.copy_from_slice(&out_im);
    }
}

/// Real-signal transform of length `len` with `len / 2 + 1` bins.
#[derive(Debug, Clone)]
pub struct RealFft {
    inner: ComplexFft,
}

impl RealFft {
    pub fn new(len: usize) -> Self {
        assert!(len >= 2, "real fft length must be >= 2");
        RealFft {
            inner: ComplexFft::new(len),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bins(&self) -> usize {
        self.inner.len / 2 + 1
    }

    /// Bin weight in the Hermitian reconstruction: 1 for DC and Nyquist, 2 otherwise.
    fn multiplicity(&self, k: usize) -> f64 {
        let n = self.inner.len;
        if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else {
            2.0
        }
    }

    fn self_conjugate(&self, k: usize) -> bool {
        self.multiplicity(k) == 1.0
    }

    pub fn forward(&self, x: &[f64], re: &mut [f64], im: &mut [f64]) {
        let n = self.len();
        let b = self.bins();
        assert_eq!(x.len(), n);
        let mut wr = x.to_vec();
        let mut wi = vec![0.0; n];
        self.inner.process(&mut wr, &mut wi, false);
        re[..b].copy_from_slice(&wr[..b]);
        im[..b].copy_from_slice(&wi[..b]);
    }

    pub fn inverse(&self, re: &[f64], im: &[f64], out: &mut [f64]) {
        let n = self.len();
        let b = self.bins();
        assert_eq!(out.len(), n);
        let mut wr = vec![0.0; n];
        let mut wi = vec![0.0; n];
        for k in 0..b {
            wr[k] = re[k];
            wi[k] = if self.self_conjugate(k) { 0.0 } else { im[k] };
        }
        for k in b..n {
            wr[k] = wr[n - k];
            wi[k] = -wi[n - k];
        }
        self.inner.process(&mut wr, &mut wi, true);
        let scale = 1.0 / n as f64;
        for (o, v) in out.iter_mut().zip(&wr) {
            *o = v * scale;
        }
    }

    /// Adjoint of [`RealFft::forward`]: maps bin cotangents to sample cotangents.
    pub fn forward_adjoint(&self, g_re: &[f64], g_im: &[f64], out: &mut [f64]) {
        let n = self.len();
        let b = self.bins();
        let mut wr = vec![0.0; n];
        let mut wi = vec![0.0; n];
        wr[..b].copy_from_slice(&g_re[..b]);
        wi[..b].copy_from_slice(&g_im[..b]);
        self.inner.process(&mut wr, &mut wi, true);
        out.copy_from_slice(&wr);
    }

    /// Adjoint of [`RealFft::inverse`]: maps sample cotangents to bin cotangents.
    pub fn inverse_adjoint(&self, g: &[f64], g_re: &mut [f64], g_im: &mut [f64]) {
        let n = self.len();
        self.forward(g, g_re, g_im);
        for k in 0..self.bins() {
            let w = self.multiplicity(k) / n as f64;
            g_re[k] *= w;
            g_im[k] = if self.self_conjugate(k) { 0.0 } else { g_im[k] * w };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold((0.0, 0.0), |(r, i), (t, v)| {
                    let a = 2.0 * PI * (k * t) as f64 / n as f64;
                    (r + v * a.cos(), i - v * a.sin())
                })
            })
            .unzip()
    }

    #[test]
    fn radix2_matches_naive_dft() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3 + i as f64 * 0.1).collect();
        let (er, ei) = naive_dft(&x);
        let fft = ComplexFft::new(16);
        let mut re = x.clone();
        let mut im = vec![0.0; 16];
        fft.process(&mut re, &mut im, false);
        for k in 0..16 {
            assert!((re[k] - er[k]).abs() < 1e-12);
            assert!((im[k] - ei[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_fallback_handles_non_power_of_two() {
        let x: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let plan = RealFft::new(6);
        let (mut re, mut im) = (vec![0.0; 4], vec![0.0; 4]);
        plan.forward(&x, &mut re, &mut im);
        let (er, ei) = naive_dft(&x);
        for k in 0..4 {
            assert!((re[k] - er[k]).abs() < 1e-12 && (im[k] - ei[k]).abs() < 1e-12);
        }
        let mut back = vec![0.0; 6];
        plan.inverse(&re, &im, &mut back);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_length_roundtrip() {
        let x = [0.5, -1.0, 2.0, 0.25, 3.0];
        let plan = RealFft::new(5);
        assert_eq!(plan.bins(), 3);
        let (mut re, mut im) = (vec![0.0; 3], vec![0.0; 3]);
        plan.forward(&x, &mut re, &mut im);
        let mut back = [0.0; 5];
        plan.inverse(&re, &im, &mut back);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        // <F x, s> == <x, F* s> for both maps
        for n in [6usize, 8] {
            let plan = RealFft::new(n);
            let b = plan.bins();
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos() + 0.1 * i as f64).collect();
            let sr: Vec<f64> = (0..b).map(|k| 0.3 * k as f64 - 0.5).collect();
            let si: Vec<f64> = (0..b).map(|k| (k as f64).sin()).collect();

            let (mut fr, mut fi) = (vec![0.0; b], vec![0.0; b]);
            plan.forward(&x, &mut fr, &mut fi);
            let lhs: f64 = fr.iter().zip(&sr).chain(fi.iter().zip(&si)).map(|(a, b)| a * b).sum();
            let mut adj = vec![0.0; n];
            plan.forward_adjoint(&sr, &si, &mut adj);
            let rhs: f64 = x.iter().zip(&adj).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "forward adjoint n={n}");

            let mut y = vec![0.0; n];
            plan.inverse(&sr, &si, &mut y);
            let lhs: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
            let (mut ar, mut ai) = (vec![0.0; b], vec![0.0; b]);
            plan.inverse_adjoint(&x, &mut ar, &mut ai);
            let rhs: f64 = ar.iter().zip(&sr).chain(ai.iter().zip(&si)).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "inverse adjoint n={n}");
        }
    }
}
