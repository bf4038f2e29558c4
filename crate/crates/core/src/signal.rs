//! Spectra, damped-mode extraction and min-max normalization.

use nalgebra::{Complex, ComplexField, DMatrix, DVector};
use num_traits::Zero;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("sampling interval must be positive and uniform")]
    NonUniform,
    #[error("model order {order} exceeds numerical rank {rank}")]
    RankDeficient { order: usize, rank: usize },
    #[error("series is constant; min-max normalization undefined")]
    Constant,
    #[error("least-squares solve failed: {0}")]
    Solve(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    None,
    Hann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum<T> {
    pub freqs: Vec<T>,
    pub mags: Vec<T>,
    /// Length of the transformed (possibly padded) record.
    pub n_fft: usize,
    /// Number of original samples.
    pub n_samples: usize,
    pub label: String,
}

impl<T: Real> Spectrum<T> {
    /// `(1/N) Σ_k |X_k|²` over the full two-sided DFT, from the one-sided bins.
    pub fn parseval_energy(&self) -> T {
        let n = self.n_fft;
        let mut s = T::zero();
        for (k, m) in self.mags.iter().enumerate() {
            let w = if k == 0 || (n % 2 == 0 && k == n / 2) {
                T::one()
            } else {
                lit(2.0)
            };
            s += w * *m * *m;
        }
        s / T::from_usize(n).unwrap()
    }
}

fn window_weights<T: Real>(n: usize, w: Window) -> Vec<T> {
    match w {
        Window::None => vec![T::one(); n],
        Window::Hann => (0..n)
            .map(|i| {
                let x = T::two_pi() * T::from_usize(i).unwrap() / T::from_usize(n.max(2) - 1).unwrap();
                lit::<T>(0.5) * (T::one() - x.cos())
            })
            .collect(),
    }
}

/// One-sided DFT magnitude on the grid `k / (N Δt)`, `k = 0..=N/2`.
pub fn fft_magnitude<T: Real>(samples: &[T], dt: T, window: Window) -> Result<Spectrum<T>, SignalError> {
    fft_magnitude_padded(samples, dt, window, samples.len())
}

/// As [`fft_magnitude`], zero-padding the (windowed) record to `n_fft`.
pub fn fft_magnitude_padded<T: Real>(
    samples: &[T],
    dt: T,
    window: Window,
    n_fft: usize,
) -> Result<Spectrum<T>, SignalError> {
    let n = samples.len();
    if n < 2 {
        return Err(SignalError::TooShort { need: 2, got: n });
    }
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(SignalError::NonUniform);
    }
    let n_fft = n_fft.max(n);
    let w = window_weights::<T>(n, window);
    let mut buf: Vec<Complex<T>> = samples
        .iter()
        .zip(&w)
        .map(|(&x, &wi)| Complex::new(x * wi, T::zero()))
        .collect();
    buf.resize(n_fft, Complex::zero());
    let mut planner = FftPlanner::<T>::new();
    planner.plan_fft_forward(n_fft).process(&mut buf);
    let half = n_fft / 2;
    let df = T::one() / (T::from_usize(n_fft).unwrap() * dt);
    Ok(Spectrum {
        freqs: (0..=half).map(|k| T::from_usize(k).unwrap() * df).collect(),
        mags: buf[..=half].iter().map(|c| c.modulus()).collect(),
        n_fft,
        n_samples: n,
        label: String::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak<T> {
    pub freq: T,
    pub mag: T,
    pub bin: usize,
}

/// Local maxima above `rel_floor · max`, refined by a parabola through the
/// log magnitudes of the three bins around each maximum. Sorted by magnitude,
/// largest first.
pub fn find_peaks<T: Real>(s: &Spectrum<T>, rel_floor: T) -> Vec<Peak<T>> {
    let m = &s.mags;
    if m.len() < 3 {
        return vec![];
    }
    let top = m.iter().fold(T::zero(), |a, &b| a.max(b));
    let floor = top * rel_floor;
    let df = s.freqs[1] - s.freqs[0];
    let mut out = vec![];
    for k in 1..m.len() - 1 {
        if m[k] > m[k - 1] && m[k] >= m[k + 1] && m[k] > floor {
            let tiny = top * lit(1e-300_f64.max(T::eps().to_f64_lossy().powi(4)));
            let (a, b, c) = ((m[k - 1] + tiny).ln(), (m[k] + tiny).ln(), (m[k + 1] + tiny).ln());
            let den = a - lit::<T>(2.0) * b + c;
            let p = if den < T::zero() { lit::<T>(0.5) * (a - c) / den } else { T::zero() };
            let mag = (b - lit::<T>(0.25) * (a - c) * p).exp();
            out.push(Peak {
                freq: s.freqs[k] + p * df,
                mag,
                bin: k,
            });
        }
    }
    out.sort_by(|x, y| y.mag.partial_cmp(&x.mag).unwrap());
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate<T> {
    /// Hz
    pub freq: T,
    /// `π f / r`, capped.
    pub q: T,
    /// 1/s
    pub decay_rate: T,
    /// Mode is `Re(amplitude · λ^n)` with `λ = exp((-r + 2πi f) Δt)`.
    pub amplitude: Complex<T>,
    /// |λ| of the discrete pole.
    pub pole_mag: T,
    /// Q hit the cap (no measurable decay).
    pub q_capped: bool,
    /// |λ| > 1 + ε: the pole grows.
    pub growing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EspritOptions {
    /// Hankel rows; `None` picks `min(N/3, 256)`.
    pub rows: Option<usize>,
    /// Forward-backward averaging of the covariance.
    pub fb_average: bool,
    pub q_cap: f64,
}

impl Default for EspritOptions {
    fn default() -> Self {
        Self {
            rows: None,
            fb_average: false,
            q_cap: 1e9,
        }
    }
}

/// ESPRIT on a real series; `order` counts complex exponentials, so each
/// real damped cosine takes two. Only positive-frequency modes are returned,
/// sorted by frequency.
pub fn esprit<T: Real>(
    samples: &[T],
    dt: T,
    order: usize,
    opts: &EspritOptions,
) -> Result<Vec<ModeEstimate<T>>, SignalError> {
    let n = samples.len();
    if order == 0 || n < 4 * order {
        return Err(SignalError::TooShort { need: 4 * order.max(1), got: n });
    }
    if !(dt > T::zero()) {
        return Err(SignalError::NonUniform);
    }
    let l = opts.rows.unwrap_or((n / 3).min(256)).clamp(order + 1, n - order);
    let cols = n - l + 1;

    // R = X X^T of the L x K Hankel matrix.
    let mut r = DMatrix::<T>::zeros(l, l);
    for i in 0..l {
        for j in i..l {
            let mut s = T::zero();
            for c in 0..cols {
                s += samples[i + c] * samples[j + c];
            }
            r[(i, j)] = s;
            r[(j, i)] = s;
        }
    }
    if opts.fb_average {
        let mut rb = r.clone();
        for i in 0..l {
            for j in 0..l {
                rb[(i, j)] = lit::<T>(0.5) * (r[(i, j)] + r[(l - 1 - i, l - 1 - j)]);
            }
        }
        r = rb;
    }
    let eig = r.symmetric_eigen();
    let mut idx: Vec<usize> = (0..l).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lmax = eig.eigenvalues[idx[0]].abs();
    let thresh = lmax * T::eps() * T::from_usize(l).unwrap() * lit(10.0);
    let rank = idx.iter().filter(|&&i| eig.eigenvalues[i] > thresh).count();
    if order > rank {
        return Err(SignalError::RankDeficient { order, rank });
    }
    let us = DMatrix::<T>::from_fn(l, order, |i, j| eig.eigenvectors[(i, idx[j])]);
    let u1 = us.rows(0, l - 1).into_owned();
    let u2 = us.rows(1, l - 1).into_owned();
    let phi = u1
        .svd(true, true)
        .solve(&u2, T::eps() * lit(10.0))
        .map_err(SignalError::Solve)?;
    let poles: Vec<Complex<T>> = phi.complex_eigenvalues().iter().copied().collect();

    // Amplitudes by least squares on the Vandermonde system over all samples.
    let v = DMatrix::<Complex<T>>::from_fn(n, order, |t, k| poles[k].powu(t as u32));
    let y = DVector::<Complex<T>>::from_iterator(n, samples.iter().map(|&x| Complex::new(x, T::zero())));
    let amps = v
        .svd(true, true)
        .solve(&y, T::eps() * lit(10.0))
        .map_err(SignalError::Solve)?;

    let q_cap = lit::<T>(opts.q_cap);
    let grow_eps = lit::<T>(1e-9);
    let mut modes = vec![];
    for (k, p) in poles.iter().enumerate() {
        let freq = p.argument() / (T::two_pi() * dt);
        if !(freq > T::zero()) {
            continue;
        }
        let mag = p.modulus();
        let rate = -mag.ln() / dt;
        let (q, capped) = if rate > T::zero() {
            let q = T::pi() * freq / rate;
            if q > q_cap {
                (q_cap, true)
            } else {
                (q, false)
            }
        } else {
            (q_cap, true)
        };
        modes.push(ModeEstimate {
            freq,
            q,
            decay_rate: rate,
            amplitude: amps[k] * lit::<T>(2.0),
            pole_mag: mag,
            q_capped: capped,
            growing: mag > T::one() + grow_eps,
        });
    }
    modes.sort_by(|a, b| a.freq.partial_cmp(&b.freq).unwrap());
    Ok(modes)
}

/// Modes of the first half that reappear in the second half with matching
/// frequency (`rel_tol`) and decay rate within a factor of two, and whose
/// pole magnitude lies in `[0.9, 1]` (up to the growth epsilon).
pub fn esprit_screened<T: Real>(
    samples: &[T],
    dt: T,
    order: usize,
    opts: &EspritOptions,
    rel_tol: T,
) -> Result<Vec<ModeEstimate<T>>, SignalError> {
    let half = samples.len() / 2;
    let a = esprit(&samples[..half], dt, order, opts)?;
    let b = esprit(&samples[half..2 * half], dt, order, opts)?;
    let lo = lit::<T>(0.9);
    let hi = T::one() + lit(1e-9);
    let in_band = |m: &ModeEstimate<T>| m.pole_mag >= lo && m.pole_mag <= hi;
    Ok(a.into_iter()
        .filter(|m| {
            in_band(m)
                && b.iter().any(|o| {
                    in_band(o)
                        && ((o.freq - m.freq).abs() <= rel_tol * m.freq)
                        && decay_close(m.decay_rate, o.decay_rate)
                })
        })
        .collect())
}

fn decay_close<T: Real>(a: T, b: T) -> bool {
    let two = lit::<T>(2.0);
    let floor = lit::<T>(1.0);
    let (a, b) = (a.abs().max(floor), b.abs().max(floor));
    a <= two * b && b <= two * a
}

/// Evaluates `Σ Re(A_k λ_k^n)` for `n = 0..len`.
pub fn synthesize<T: Real>(modes: &[ModeEstimate<T>], dt: T, len: usize) -> Vec<T> {
    (0..len)
        .map(|n| {
            let t = T::from_usize(n).unwrap() * dt;
            modes.iter().fold(T::zero(), |acc, m| {
                let ph = T::two_pi() * m.freq * t;
                let env = (-m.decay_rate * t).exp();
                acc + env * (m.amplitude.re * ph.cos() - m.amplitude.im * ph.sin())
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax<T> {
    pub min: T,
    pub max: T,
}

impl<T: Real> MinMax<T> {
    pub fn apply(&self, x: T) -> T {
        (x - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, y: T) -> T {
        self.min + y * (self.max - self.min)
    }
}

/// `(x - min) / (max - min)`, with the parameters for inversion.
pub fn minmax<T: Real>(x: &[T]) -> Result<(Vec<T>, MinMax<T>), SignalError> {
    let p = minmax_params(x)?;
    Ok((x.iter().map(|&v| p.apply(v)).collect(), p))
}

pub fn minmax_params<T: Real>(x: &[T]) -> Result<MinMax<T>, SignalError> {
    if x.is_empty() {
        return Err(SignalError::TooShort { need: 1, got: 0 });
    }
    let min = x.iter().copied().fold(x[0], |a, b| a.min(b));
    let max = x.iter().copied().fold(x[0], |a, b| a.max(b));
    if !(max > min) {
        return Err(SignalError::Constant);
    }
    Ok(MinMax { min, max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_goes_to_dc() {
        let s = fft_magnitude(&[2.0; 16], 1e-3, Window::None).unwrap();
        assert!((s.mags[0] - 32.0).abs() < 1e-12);
        assert!(s.mags[1..].iter().all(|&m| m < 1e-12));
    }

    #[test]
    fn exact_bin_sinusoid() {
        let n = 64;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 5.0 * i as f64 / n as f64).cos()).collect();
        let s = fft_magnitude(&x, 1.0 / n as f64, Window::None).unwrap();
        for (k, &m) in s.mags.iter().enumerate() {
            if k == 5 {
                assert!((m - 32.0).abs() < 1e-9);
            } else {
                assert!(m < 1e-9, "bin {k}: {m}");
            }
        }
        assert!((s.freqs[5] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn parseval_holds() {
        for n in [63usize, 64] {
            let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.4).collect();
            let s = fft_magnitude(&x, 1.0, Window::None).unwrap();
            let e: f64 = x.iter().map(|v| v * v).sum();
            assert!((s.parseval_energy() / e - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn two_tone_peaks_within_a_bin() {
        let dt = 25e-12;
        let n = 4096;
        let (f1, f2) = (14.95e9, 15.65e9);
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                (-t / 40e-9).exp() * (2.0 * PI * f1 * t).cos()
                    + 0.5 * (-t / 30e-9).exp() * (2.0 * PI * f2 * t).cos()
            })
            .collect();
        let s = fft_magnitude(&x, dt, Window::Hann).unwrap();
        let p = find_peaks(&s, 0.05);
        let df = s.freqs[1];
        let mut got: Vec<f64> = p.iter().take(2).map(|p| p.freq).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((got[0] - f1).abs() < df && (got[1] - f2).abs() < df, "{got:?}");
    }

    #[test]
    fn esprit_undamped_sinusoid() {
        let dt = 25e-12;
        let f = 14.95e9;
        let x: Vec<f64> = (0..600).map(|i| (2.0 * PI * f * i as f64 * dt + 0.3).cos()).collect();
        let m = esprit(&x, dt, 2, &EspritOptions::default()).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m[0].freq / f - 1.0).abs() < 1e-6);
        assert!(m[0].q_capped);
        assert!((m[0].amplitude.norm() - 1.0).abs() < 1e-6);
        assert!((m[0].amplitude.arg() - 0.3).abs() < 1e-6);
    }

    #[test]
    fn esprit_rejects_excess_order() {
        let dt = 1.0;
        let x: Vec<f64> = (0..200).map(|i| (0.3 * i as f64).cos()).collect();
        assert!(matches!(
            esprit(&x, dt, 6, &EspritOptions::default()),
            Err(SignalError::RankDeficient { .. })
        ));
    }

    #[test]
    fn minmax_examples() {
        let (y, p) = minmax(&[0.0, 5.0, 10.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.5, 1.0]);
        let x = [-3.5, 2.25, 0.125, 7.0];
        let (y, p2) = minmax(&x).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((p2.invert(*b) - a).abs() < 1e-12);
        }
        assert_eq!(p.min, 0.0);
        assert!(minmax(&[1.0, 1.0]).is_err());
    }
}
