//! Series built as a sum of known linear and nonlinear components plus noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{write_csv, DataError, RawSeries};
use crate::rng::{RunSeed, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Number of linear and of nonlinear latent components.
    pub levels: usize,
    pub channels: usize,
    pub length: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub linear_amplitude: f64,
    pub nonlinear_amplitude: f64,
    /// When positive, each level's nonlinear wave is shared across channels,
    /// channel `c` seeing it `c * lead_lag` steps late. Zero draws one wave per channel.
    pub lead_lag: usize,
}

impl SynthSpec {
    pub fn new(levels: usize, channels: usize, length: usize, seed: u64) -> Self {
        SynthSpec {
            levels,
            channels,
            length,
            seed,
            noise_sigma: 0.1,
            linear_amplitude: 1.0,
            nonlinear_amplitude: 1.0,
            lead_lag: 0,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.levels == 0 || self.channels == 0 || self.length < 2 {
            return Err(DataError::Invalid(format!(
                "synthetic spec needs levels >= 1, channels >= 1, length >= 2: {self:?}"
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.linear_amplitude >= 0.0 && self.nonlinear_amplitude >= 0.0) {
            return Err(DataError::Invalid("noise and amplitudes must be non-negative".into()));
        }
        Ok(())
    }
}

/// Emitted series with the components that were summed to produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSeries {
    pub series: RawSeries,
    /// One `[length, C]` tensor per level.
    pub linear: Vec<Tensor>,
    pub nonlinear: Vec<Tensor>,
    pub noise: Tensor,
}

/// Stationarity of `x_t = a1 x_{t-1} + a2 x_{t-2} + e_t` (both roots inside the unit circle).
pub fn ar2_is_stable(a1: f64, a2: f64) -> bool {
    a2.abs() < 1.0 && a1 + a2 < 1.0 && a2 - a1 < 1.0
}

/// Zero-started AR(2) path driven by Gaussian innovations of std `sigma`.
pub fn ar2_process<R: Rng + ?Sized>(a1: f64, a2: f64, sigma: f64, len: usize, rng: &mut R) -> Result<Vec<f64>, DataError> {
    if !ar2_is_stable(a1, a2) {
        return Err(DataError::UnstableAr { a1, a2 });
    }
    let innov = Normal::new(0.0, sigma).map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(len);
    let (mut p1, mut p2) = (0.0, 0.0);
    for _ in 0..len {
        let x = a1 * p1 + a2 * p2 + innov.sample(rng);
        out.push(x);
        p2 = p1;
        p1 = x;
    }
    Ok(out)
}

/// Piecewise-linear trend through `segments` random slopes, continuous at the breaks.
fn trend<R: Rng + ?Sized>(len: usize, segments: usize, rng: &mut R) -> Vec<f64> {
    let mut breaks: Vec<usize> = (0..segments - 1).map(|_| rng.random_range(1..len)).collect();
    breaks.sort_unstable();
    let total = 2.0;
    let mut slope = rng.random_range(-total..total) / len as f64;
    let mut level = rng.random_range(-0.5..0.5);
    let mut next = breaks.into_iter().peekable();
    (0..len)
        .map(|t| {
            while next.peek() == Some(&t) {
                next.next();
                slope = rng.random_range(-total..total) / len as f64;
            }
            level += slope;
            level
        })
        .collect()
}

/// Saturated sinusoid with slow amplitude modulation and piecewise regimes.
///
/// Each regime redraws the gain and the carrier period; the phase is
/// accumulated so the wave stays continuous across switches.
fn nonlinear_wave<R: Rng + ?Sized>(len: usize, level: usize, rng: &mut R) -> Vec<f64> {
    let base = rng.random_range(12.0..36.0) / (level as f64 + 1.0).sqrt();
    let mod_period = rng.random_range(150.0..400.0);
    let mod_depth = rng.random_range(0.2..0.5);
    let sharpness = rng.random_range(1.5..3.0);
    let gains = [0.4, 1.0, 1.6];
    let stretch = [0.6, 1.0, 1.7];
    let mut gain = gains[rng.random_range(0..gains.len())];
    let mut period = base * stretch[rng.random_range(0..stretch.len())];
    let mut phase = rng.random_range(0.0..2.0 * PI);
    let mut until = rng.random_range(100..400);
    (0..len)
        .map(|t| {
            if t == until {
                gain = gains[rng.random_range(0..gains.len())];
                period = base * stretch[rng.random_range(0..stretch.len())];
                until += rng.random_range(100..400);
            }
            let carrier = (sharpness * phase.sin()).tanh();
            phase += 2.0 * PI / period;
            let envelope = 1.0 + mod_depth * (2.0 * PI * t as f64 / mod_period).sin();
            gain * envelope * carrier
        })
        .collect()
}

/// Draws a stable AR(2) pair with complex roots of modulus `r` at angle `theta`.
fn stable_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let r: f64 = rng.random_range(0.6..0.95);
    let theta: f64 = rng.random_range(0.05..0.8);
    (2.0 * r * theta.cos(), -r * r)
}

fn channel_major_to_rows(cols: &[Vec<f64>]) -> Tensor {
    let (c, len) = (cols.len(), cols[0].len());
    Tensor::from_fn([len, c], |i| cols[i % c][i / c])
}

/// Generates `X = sum_s (L_s + N_s) + eps` channel by channel.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthSeries, DataError> {
    spec.validate()?;
    let mut rng = RunSeed(spec.seed).stream(Stream::Synth);
    let (len, c) = (spec.length, spec.channels);
    let mut linear = Vec::with_capacity(spec.levels);
    let mut nonlinear = Vec::with_capacity(spec.levels);
    for s in 0..spec.levels {
        let mut lin_cols = Vec::with_capacity(c);
        let mut non_cols = Vec::with_capacity(c);
        let lag = spec.lead_lag;
        let shared = (lag > 0).then(|| nonlinear_wave(len + (c - 1) * lag, s, &mut rng));
        for ch in 0..c {
            let tr = trend(len, s + 1, &mut rng);
            let (a1, a2) = stable_pair(&mut rng);
            let ar = ar2_process(a1, a2, 0.1, len, &mut rng)?;
            lin_cols.push(
                tr.iter()
                    .zip(&ar)
                    .map(|(a, b)| spec.linear_amplitude * (a + b))
                    .collect::<Vec<_>>(),
            );
            let wave = match &shared {
                Some(w) => {
                    let gain = rng.random_range(0.7..1.3);
                    let start = (c - 1 - ch) * lag;
                    w[start..start + len].iter().map(|v| gain * v).collect()
                }
                None => nonlinear_wave(len, s, &mut rng),
            };
            non_cols.push(wave.iter().map(|v| spec.nonlinear_amplitude * v).collect::<Vec<_>>());
        }
        linear.push(channel_major_to_rows(&lin_cols));
        nonlinear.push(channel_major_to_rows(&non_cols));
    }
    let noise = if spec.noise_sigma > 0.0 {
        let g = Normal::new(0.0, spec.noise_sigma).map_err(|e| DataError::Invalid(e.to_string()))?;
        Tensor::from_fn([len, c], |_| g.sample(&mut rng))
    } else {
        Tensor::zeros([len, c])
    };
    let values = Tensor::from_fn([len, c], |i| {
        let mut v = 0.0;
        for s in 0..spec.levels {
            v += linear[s].data()[i] + nonlinear[s].data()[i];
        }
        v + noise.data()[i]
    });
    let names = (0..c).map(|i| format!("c{i}")).collect();
    Ok(SynthSeries {
        series: RawSeries::new(names, values)?,
        linear,
        nonlinear,
        noise,
    })
}

/// Sidecar path holding the ground-truth components of `path`.
fn sidecar(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("synth");
    path.with_file_name(format!("{stem}.components.csv"))
}

/// Writes the series to `path` and its components to `<stem>.components.csv`.
pub fn write_synth(path: impl AsRef<Path>, synth: &SynthSeries) -> Result<PathBuf, DataError> {
    let path = path.as_ref();
    write_csv(path, &synth.series)?;
    let c = synth.series.channels();
    let len = synth.series.len();
    let mut names = Vec::new();
    let mut cols: Vec<&Tensor> = Vec::new();
    for (s, (l, n)) in synth.linear.iter().zip(&synth.nonlinear).enumerate() {
        for ch in 0..c {
            names.push(format!("linear{}_c{ch}", s + 1));
        }
        cols.push(l);
        for ch in 0..c {
            names.push(format!("nonlinear{}_c{ch}", s + 1));
        }
        cols.push(n);
    }
    for ch in 0..c {
        names.push(format!("noise_c{ch}"));
    }
    cols.push(&synth.noise);
    let width = cols.len() * c;
    let values = Tensor::from_fn([len, width], |i| {
        let (t, j) = (i / width, i % width);
        cols[j / c].data()[t * c + j % c]
    });
    let out = sidecar(path);
    write_csv(&out, &RawSeries::new(names, values)?)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn components_sum_to_series() {
        let synth = synth_generate(&SynthSpec::new(3, 2, 500, 4)).unwrap();
        let mut sum = synth.noise.clone();
        for (l, n) in synth.linear.iter().zip(&synth.nonlinear) {
            sum = sum.zip_map(l, |a, b| a + b).unwrap().zip_map(n, |a, b| a + b).unwrap();
        }
        assert!(sum.max_abs_diff(&synth.series.values) < 1e-12);
    }

    #[test]
    fn pure_linear_spec_equals_linear_component() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            nonlinear_amplitude: 0.0,
            ..SynthSpec::new(1, 3, 300, 9)
        };
        let synth = synth_generate(&spec).unwrap();
        assert_eq!(synth.series.values, synth.linear[0]);
    }

    #[test]
    fn lead_lag_channels_share_a_delayed_wave() {
        let spec = SynthSpec {
            lead_lag: 5,
            ..SynthSpec::new(1, 3, 200, 21)
        };
        let n = &synth_generate(&spec).unwrap().nonlinear[0];
        let at = |t: usize, ch: usize| n.data()[t * 3 + ch];
        let ratio = at(50, 0) / at(55, 1);
        for t in 10..190 {
            assert!((at(t, 0) - ratio * at(t + 5, 1)).abs() < 1e-12);
        }
        let ratio2 = at(50, 0) / at(60, 2);
        assert!((at(100, 0) - ratio2 * at(110, 2)).abs() < 1e-12);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = SynthSpec::new(2, 2, 200, 17);
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
        let other = SynthSpec { seed: 18, ..spec };
        assert_ne!(synth_generate(&other).unwrap().series, synth_generate(&SynthSpec::new(2, 2, 200, 17)).unwrap().series);
    }

    #[test]
    fn stable_ar_stays_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a1, a2) = (1.2, -0.5);
        let x = ar2_process(a1, a2, 1.0, 10_000, &mut rng).unwrap();
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        // stationary variance of this process is about 5.7
        let gamma0 = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2).powi(2) - a1 * a1));
        assert!(var < 2.0 * gamma0, "variance {var} vs {gamma0}");
        assert!(x.iter().all(|v| v.abs() < 50.0));
    }

    #[test]
    fn unstable_ar_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(ar2_process(1.5, -0.4, 1.0, 10, &mut rng), Err(DataError::UnstableAr { .. })));
        assert!(!ar2_is_stable(0.0, 1.0));
        assert!(ar2_is_stable(2.0 * 0.9 * 0.3f64.cos(), -0.81));
    }
}
