//! DFT oracles for 1-D stride-2 sampling.
//!
//! Signals are one period of an `N`-periodic sequence, so the DTFT is
//! exactly represented by its samples on the grid `w_k = 2 pi k / N`.
//! Every identity here is checked numerically on that grid.
//!
//! Shifts are circular: `x1(n) = x0(n - 1)`. The stride-2 outputs of a
//! signal `xa` and its shift are `y0a(n) = xa(2n)` and `y1a(n) = xa(2n - 1)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{arg_err, Result};
use crate::tensor::Activation;

/// One period of a real periodic signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal1D {
    samples: Vec<f64>,
}

impl Signal1D {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return arg_err("signal needs at least one sample");
        }
        Ok(Self { samples })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize) -> f64) -> Result<Self> {
        Self::new((0..n).map(f).collect())
    }

    /// `n` i.i.d. standard normal samples.
    pub fn white_noise(n: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::new((0..n).map(|_| rng.sample(StandardNormal)).collect())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `x(n - d)`, indices mod `N`.
    pub fn shifted(&self, d: isize) -> Self {
        let n = self.len() as isize;
        let samples = (0..n).map(|i| self.samples[(i - d).rem_euclid(n) as usize]).collect();
        Self { samples }
    }

    /// `x(s n + phase)` for `n` in `0..N/s`, indices mod `N`.
    pub fn decimate(&self, s: usize, phase: isize) -> Vec<f64> {
        let n = self.len() as isize;
        (0..self.len() / s).map(|k| self.samples[(s as isize * k as isize + phase).rem_euclid(n) as usize]).collect()
    }
}

/// Complex values on the `N`-point DFT grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Inverse transform, complex valued.
    pub fn inverse(&self) -> Vec<Complex64> {
        let mut buf = self.bins.clone();
        FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
        let inv = 1.0 / buf.len() as f64;
        buf.iter().map(|v| v * inv).collect()
    }
}

/// `X[k] = sum_n x(n) e^{-j 2 pi k n / N}`.
pub fn dft(x: &Signal1D) -> Spectrum {
    Spectrum { bins: dft_real(x.samples()) }
}

fn dft_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Real part of the inverse transform.
pub fn idft(s: &Spectrum) -> Result<Signal1D> {
    Signal1D::new(s.inverse().iter().map(|v| v.re).collect())
}

fn require_even(x: &Signal1D) -> Result<()> {
    if x.len() % 2 != 0 {
        return arg_err(format!("signal length {} must be even", x.len()));
    }
    Ok(())
}

/// Max absolute residuals of the two stride-2 spectral identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyphaseResiduals {
    /// `Y0(w) = (X(w/2) + X(w/2 + pi)) / 2`
    pub even: f64,
    /// `Y1(w) = (X(w/2) - X(w/2 + pi)) e^{-jw/2} / 2`
    pub odd: f64,
}

pub fn polyphase_spectrum_check(x0: &Signal1D) -> Result<PolyphaseResiduals> {
    require_even(x0)?;
    let n = x0.len();
    let m = n / 2;
    let xf = dft_real(x0.samples());
    let y0 = dft_real(&x0.decimate(2, 0));
    let y1 = dft_real(&x0.decimate(2, -1));
    let mut res = PolyphaseResiduals { even: 0.0, odd: 0.0 };
    for k in 0..m {
        // w = 2 pi k / M on the half grid, so w/2 is bin k and w/2 + pi is bin k + M.
        let (lo, hi) = (xf[k], xf[k + m]);
        let phase = Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64);
        res.even = res.even.max((y0[k] - (lo + hi) * 0.5).norm());
        res.odd = res.odd.max((y1[k] - (lo - hi) * phase * 0.5).norm());
    }
    Ok(res)
}

/// Keeps only bins with `|w| < pi / m`.
pub fn band_limit(x: &Signal1D, m: usize) -> Result<Signal1D> {
    if m < 1 {
        return arg_err("band divisor must be >= 1");
    }
    let n = x.len();
    let mut spec = dft(x);
    for (k, b) in spec.bins.iter_mut().enumerate() {
        if 2 * m * k.min(n - k) >= n {
            *b = Complex64::new(0.0, 0.0);
        }
    }
    idft(&spec)
}

/// Half-band ideal low-pass: zeroes bins `N/4 <= k <= 3N/4`, boundary included.
pub fn ideal_lowpass(x: &Signal1D) -> Result<Signal1D> {
    require_even(x)?;
    band_limit(x, 2)
}

/// `|sum g(y0a) - sum g(y1a)|` for an already band-limited `xa`.
pub fn sum_shift_gap(xa: &Signal1D, g: impl Fn(f64) -> f64) -> Result<f64> {
    require_even(xa)?;
    let s0: f64 = xa.decimate(2, 0).into_iter().map(&g).sum();
    let s1: f64 = xa.decimate(2, -1).into_iter().map(&g).sum();
    Ok((s0 - s1).abs())
}

/// Power-sum residual `|sum (y0a)^m - sum (y1a)^m|` after the half-band
/// ideal low-pass.
///
/// Only `m = 2` is exact for this filter: `y^m` occupies `|w| < m pi / 2`,
/// so for `m >= 3` the content that wraps onto `w = pi` differs between
/// the two phases. [`band_limited_power_check`] is the variant that holds
/// for every degree.
pub fn power_sum_check(x0: &Signal1D, m: u32) -> Result<f64> {
    if m <= 1 {
        return arg_err(format!("degree must be > 1, got {m}"));
    }
    sum_shift_gap(&ideal_lowpass(x0)?, |v| v.powi(m as i32))
}

/// Same residual for a polynomial `sum_i a_i y^i` (coefficients from `a_0`).
pub fn power_sum_polynomial_check(x0: &Signal1D, coefficients: &[f64]) -> Result<f64> {
    let (g, _) = polynomial_of_degree_above_one(coefficients)?;
    sum_shift_gap(&ideal_lowpass(x0)?, |v| g.apply(v))
}

/// Power-sum residual with the band limit tightened to `|w| < pi / m`,
/// which keeps `y^m` strictly inside `(-pi, pi)`.
pub fn band_limited_power_check(x0: &Signal1D, m: u32) -> Result<f64> {
    if m <= 1 {
        return arg_err(format!("degree must be > 1, got {m}"));
    }
    require_even(x0)?;
    sum_shift_gap(&band_limit(x0, m as usize)?, |v| v.powi(m as i32))
}

/// Polynomial residual with the band limit set by the polynomial degree.
pub fn band_limited_polynomial_check(x0: &Signal1D, coefficients: &[f64]) -> Result<f64> {
    let (g, degree) = polynomial_of_degree_above_one(coefficients)?;
    require_even(x0)?;
    sum_shift_gap(&band_limit(x0, degree)?, |v| g.apply(v))
}

fn polynomial_of_degree_above_one(coefficients: &[f64]) -> Result<(Activation, usize)> {
    let trimmed = match coefficients.iter().rposition(|&a| a != 0.0) {
        Some(last) => &coefficients[..=last],
        None => &[][..],
    };
    if trimmed.len() < 3 {
        return arg_err("polynomial degree must be > 1");
    }
    Ok((Activation::polynomial(trimmed.to_vec())?, trimmed.len() - 1))
}

/// ReLU residual `|sum relu(y0a) - sum relu(y1a)|` after the half-band low-pass.
pub fn relu_check(x0: &Signal1D) -> Result<f64> {
    sum_shift_gap(&ideal_lowpass(x0)?, |v| v.max(0.0))
}

/// ReLU sums for `x0(n) = cos(2 pi n / N)` against their closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CosineReluSums {
    pub n: usize,
    pub sum0: f64,
    /// `cos(2 pi / N) / sin(2 pi / N)`
    pub closed0: f64,
    pub sum1: f64,
    /// `cos(2 pi / N) sum0 + sin(2 pi / N)`
    pub closed1_from_sum0: f64,
}

impl CosineReluSums {
    pub fn residual0(&self) -> f64 {
        (self.sum0 - self.closed0).abs()
    }

    pub fn residual1(&self) -> f64 {
        (self.sum1 - self.closed1_from_sum0).abs()
    }
}

/// Requires `N' = N / 2` even, `N' > 6` and `N' % 4 == 0`.
pub fn cosine_relu_sums(n: usize) -> Result<CosineReluSums> {
    if n % 2 != 0 {
        return arg_err(format!("N = {n} must be even"));
    }
    let half = n / 2;
    if half <= 6 || half % 4 != 0 {
        return arg_err(format!("N' = {half} must exceed 6 and be divisible by 4"));
    }
    let x0 = Signal1D::from_fn(n, |i| (2.0 * PI * i as f64 / n as f64).cos())?;
    // cos(2 pi n / N) is band-limited well inside the half band already.
    let sum0 = x0.decimate(2, 0).into_iter().map(|v| v.max(0.0)).sum();
    let sum1 = x0.decimate(2, -1).into_iter().map(|v| v.max(0.0)).sum();
    let t = 2.0 * PI / n as f64;
    Ok(CosineReluSums { n, sum0, closed0: t.cos() / t.sin(), sum1, closed1_from_sum0: t.cos() * sum0 + t.sin() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: Complex64, re: f64, im: f64) -> bool {
        (a.re - re).abs() < 1e-12 && (a.im - im).abs() < 1e-12
    }

    #[test]
    fn dft_of_simple_signals() {
        let imp = Signal1D::from_fn(8, |i| if i == 0 { 1.0 } else { 0.0 }).unwrap();
        assert!(dft(&imp).bins().iter().all(|b| close(*b, 1.0, 0.0)));
        let c = Signal1D::new(vec![2.5; 6]).unwrap();
        let sc = dft(&c);
        assert!(close(sc.bins()[0], 15.0, 0.0));
        assert!(sc.bins()[1..].iter().all(|b| close(*b, 0.0, 0.0)));
        let cos = Signal1D::from_fn(8, |i| (2.0 * PI * i as f64 / 8.0).cos()).unwrap();
        for (k, b) in dft(&cos).bins().iter().enumerate() {
            let want = if k == 1 || k == 7 { 4.0 } else { 0.0 };
            assert!(close(*b, want, 0.0), "bin {k}: {b}");
        }
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Signal1D::white_noise(37, &mut rng).unwrap();
        let back = idft(&dft(&x)).unwrap();
        for (a, b) in x.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(Signal1D::new(vec![]).is_err());
    }

    #[test]
    fn polyphase_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Signal1D::white_noise(64, &mut rng).unwrap();
        let r = polyphase_spectrum_check(&x).unwrap();
        assert!(r.even < 1e-10 && r.odd < 1e-10, "{r:?}");

        let c = polyphase_spectrum_check(&Signal1D::new(vec![3.0; 10]).unwrap()).unwrap();
        assert!(c.even < 1e-12 && c.odd < 1e-12);

        let imp = Signal1D::from_fn(16, |i| if i == 0 { 1.0 } else { 0.0 }).unwrap();
        assert!(imp.decimate(2, -1).iter().all(|&v| v == 0.0));
        assert!(polyphase_spectrum_check(&imp).unwrap().odd < 1e-12);

        assert!(polyphase_spectrum_check(&Signal1D::new(vec![1.0; 7]).unwrap()).is_err());
    }

    #[test]
    fn lowpass_pass_and_stop_bands() {
        let n = 32;
        let low = Signal1D::from_fn(n, |i| (2.0 * PI * i as f64 / n as f64).cos()).unwrap();
        let out = ideal_lowpass(&low).unwrap();
        for (a, b) in low.samples().iter().zip(out.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
        let alt = Signal1D::from_fn(n, |i| if i % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        assert!(ideal_lowpass(&alt).unwrap().samples().iter().all(|v| v.abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Signal1D::white_noise(n, &mut rng).unwrap();
        let filtered = ideal_lowpass(&noise).unwrap();
        let spec = dft(&filtered);
        for k in n / 4..=3 * n / 4 {
            assert!(spec.bins()[k].norm() < 1e-12, "bin {k}");
        }
        // The output really is real: the retained bins stay conjugate-symmetric.
        let mut full = dft(&noise);
        for k in n / 4..=3 * n / 4 {
            full.bins[k] = Complex64::new(0.0, 0.0);
        }
        assert!(full.inverse().iter().all(|v| v.im.abs() < 1e-12));
        assert!(ideal_lowpass(&Signal1D::new(vec![1.0; 9]).unwrap()).is_err());
    }

    #[test]
    fn squares_are_sum_shift_invariant_after_half_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let x = Signal1D::white_noise(64, &mut rng).unwrap();
            assert!(power_sum_check(&x, 2).unwrap() < 1e-9);
            assert!(power_sum_polynomial_check(&x, &[0.3, -1.0, 2.0]).unwrap() < 1e-9);
        }
        let x = Signal1D::white_noise(64, &mut rng).unwrap();
        assert!(power_sum_check(&x, 1).is_err());
        assert!(power_sum_polynomial_check(&x, &[1.0, 2.0, 0.0]).is_err());
    }

    #[test]
    fn higher_powers_need_a_tighter_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Signal1D::white_noise(64, &mut rng).unwrap();
        assert!(power_sum_check(&x, 3).unwrap() > 1e-3);
        for m in 2..=5 {
            assert!(band_limited_power_check(&x, m).unwrap() < 1e-9, "m = {m}");
        }
        assert!(band_limited_polynomial_check(&x, &[0.1, 0.5, -0.7, 0.2]).unwrap() < 1e-9);
    }

    #[test]
    fn relu_breaks_sum_shift_invariance() {
        // A box with sharp edges; after the low-pass it rings around zero.
        let x = Signal1D::from_fn(64, |i| if (8..11).contains(&i) { 1.0 } else { -0.2 }).unwrap();
        assert!(sum_shift_gap(&ideal_lowpass(&x).unwrap(), |v| v).unwrap() < 1e-9);
        assert!(relu_check(&x).unwrap() > 1e-3);
    }

    #[test]
    fn cosine_closed_forms() {
        let r = cosine_relu_sums(32).unwrap();
        assert!((r.closed0 - 5.027339492125848).abs() < 1e-12);
        for n in [16, 32, 64, 128] {
            let r = cosine_relu_sums(n).unwrap();
            assert!(r.residual0() < 1e-10 && r.residual1() < 1e-10, "{r:?}");
            assert!((r.sum1 - r.sum0).abs() > 1e-3);
        }
        for bad in [10, 12, 20, 33] {
            assert!(cosine_relu_sums(bad).is_err(), "N = {bad}");
        }
    }
}
