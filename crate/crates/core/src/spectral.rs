//! Fourier representation of real periodic functions.
//!
//! A [`SpectralField`] stores the half spectrum `k = 0..=N/2` of a real
//! function sampled on `N` equispaced points of `[0, L)`, normalized so the
//! physical samples are `u(x_j) = sum_{|k| <= N/2} c_k exp(i k~ x_j)` with
//! `k~ = 2 pi k / L`. Negative wavenumbers follow from Hermitian symmetry.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fft::RealTransform;

/// Oversampling factor used for sup-norm evaluation.
pub const LINF_OVERSAMPLING: usize = 4;

/// Name of the pseudorandom generator behind [`seeded_field`], echoed into
/// run manifests.
pub const GENERATOR_NAME: &str = "rand_chacha::ChaCha8Rng, uniform [-1,1) re/im per mode";

/// Periodic grid: domain length, number of physical points, and the largest
/// wavenumber index retained by dealiased products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    length: f64,
    points: usize,
    cutoff: usize,
}

impl GridSpec {
    /// Grid with the default 2/3-rule cutoff `floor((N - 1) / 3)`, the largest
    /// `K` with `3K < N` so quadratic products never alias into kept modes.
    pub fn new(length: f64, points: usize) -> Result<Self> {
        Self::with_cutoff(length, points, points.saturating_sub(1) / 3)
    }

    pub fn with_cutoff(length: f64, points: usize, cutoff: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "length must be positive, got {length}"
            )));
        }
        if points < 8 || points % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "point count must be even and at least 8, got {points}"
            )));
        }
        if cutoff == 0 || cutoff > points / 2 - 1 {
            return Err(Error::InvalidGrid(format!(
                "dealias cutoff must lie in 1..={}, got {cutoff}",
                points / 2 - 1
            )));
        }
        Ok(Self {
            length,
            points,
            cutoff,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn nyquist(&self) -> usize {
        self.points / 2
    }

    /// Number of stored coefficients, `N/2 + 1`.
    pub fn modes(&self) -> usize {
        self.points / 2 + 1
    }

    /// Physical wavenumber `2 pi k / L`.
    pub fn wavenumber(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.points as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points).map(|j| j as f64 * h).collect()
    }

    /// Parseval weight of stored index `k`: interior modes stand for a
    /// conjugate pair.
    pub(crate) fn weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.nyquist() {
            1.0
        } else {
            2.0
        }
    }
}

/// What happens to the spatial mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MeanPolicy {
    /// The zero mode is held at exactly zero.
    #[default]
    EnforcedZero,
    /// The zero mode evolves freely; only used for validation runs.
    Free,
}

impl MeanPolicy {
    fn as_str(self) -> &'static str {
        match self {
            MeanPolicy::EnforcedZero => "enforced-zero",
            MeanPolicy::Free => "free",
        }
    }
}

/// All norms of a field. `h1`, `h2` are the seminorms `|u_x|`, `|u_xx|`;
/// `hm1`, `hm2` divide by `k~` and `k~^2` on nonzero modes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct NormSet {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
    pub hm1: f64,
    pub hm2: f64,
    pub linf: f64,
}

/// Real periodic field stored as its half spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
    policy: MeanPolicy,
}

impl SpectralField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::zeros_with_policy(grid, MeanPolicy::EnforcedZero)
    }

    pub fn zeros_with_policy(grid: GridSpec, policy: MeanPolicy) -> Self {
        Self {
            grid,
            coeffs: vec![Complex64::default(); grid.modes()],
            policy,
        }
    }

    /// Transforms physical samples; the mean is removed.
    pub fn from_samples(grid: GridSpec, samples: &[f64]) -> Result<Self> {
        Self::from_samples_with_policy(grid, samples, MeanPolicy::EnforcedZero)
    }

    pub fn from_samples_with_policy(
        grid: GridSpec,
        samples: &[f64],
        policy: MeanPolicy,
    ) -> Result<Self> {
        if samples.len() != grid.points() {
            return Err(Error::LengthMismatch {
                expected: grid.points(),
                got: samples.len(),
            });
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut coeffs = vec![Complex64::default(); grid.modes()];
        RealTransform::new(grid.points()).analyze(samples, &mut coeffs);
        Ok(Self::from_raw(grid, coeffs, policy))
    }

    /// Samples `f` on the grid nodes.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Result<Self> {
        let samples: Vec<f64> = grid.nodes().into_iter().map(f).collect();
        Self::from_samples(grid, &samples)
    }

    /// Builds a field from stored coefficients `k = 0..=N/2`. Imaginary parts
    /// of the zero and Nyquist modes are dropped since the field is real.
    pub fn from_coeffs(grid: GridSpec, coeffs: Vec<Complex64>, policy: MeanPolicy) -> Result<Self> {
        if coeffs.len() != grid.modes() {
            return Err(Error::LengthMismatch {
                expected: grid.modes(),
                got: coeffs.len(),
            });
        }
        if let Some(i) = coeffs
            .iter()
            .position(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(Error::NonFinite(i));
        }
        Ok(Self::from_raw(grid, coeffs, policy))
    }

    /// Sets selected modes `k >= 1`, all others zero.
    pub fn from_modes(grid: GridSpec, modes: &[(usize, Complex64)]) -> Result<Self> {
        let mut coeffs = vec![Complex64::default(); grid.modes()];
        for &(k, c) in modes {
            if k > grid.nyquist() {
                return Err(invalid(
                    "k",
                    format!("mode {k} beyond Nyquist {}", grid.nyquist()),
                ));
            }
            coeffs[k] += c;
        }
        Self::from_coeffs(grid, coeffs, MeanPolicy::EnforcedZero)
    }

    pub(crate) fn from_raw(grid: GridSpec, mut coeffs: Vec<Complex64>, policy: MeanPolicy) -> Self {
        coeffs[0].im = 0.0;
        let nyq = grid.nyquist();
        coeffs[nyq].im = 0.0;
        if policy == MeanPolicy::EnforcedZero {
            coeffs[0] = Complex64::default();
        }
        Self {
            grid,
            coeffs,
            policy,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn policy(&self) -> MeanPolicy {
        self.policy
    }

    /// Same coefficients under a different mean policy.
    pub fn with_policy(&self, policy: MeanPolicy) -> Self {
        Self::from_raw(self.grid, self.coeffs.clone(), policy)
    }

    /// Stored half spectrum, `k = 0..=N/2`.
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient at signed wavenumber `k`; zero outside `|k| <= N/2`.
    pub fn coeff(&self, k: i64) -> Complex64 {
        let a = k.unsigned_abs() as usize;
        if a > self.grid.nyquist() {
            return Complex64::default();
        }
        if k < 0 {
            self.coeffs[a].conj()
        } else {
            self.coeffs[a]
        }
    }

    /// Spatial average.
    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn samples(&self) -> Vec<f64> {
        self.samples_oversampled(1)
    }

    /// Band-limited interpolant evaluated on `factor * N` points.
    pub fn samples_oversampled(&self, factor: usize) -> Vec<f64> {
        let n = self.grid.points() * factor.max(1);
        let mut out = vec![0.0; n];
        RealTransform::new(n).synthesize(&self.coeffs, self.grid.points(), &mut out);
        out
    }

    /// `d^order/dx^order`. Odd orders drop the Nyquist mode, whose derivative
    /// is not representable as a real grid function.
    pub fn derivative(&self, order: u32) -> Self {
        let nyq = self.grid.nyquist();
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                if order == 0 {
                    return c;
                }
                if k == 0 || (k == nyq && order % 2 == 1) {
                    return Complex64::default();
                }
                c * Complex64::new(0.0, self.grid.wavenumber(k)).powu(order)
            })
            .collect();
        Self::from_raw(self.grid, coeffs, self.policy)
    }

    /// Keeps `1 <= |k| <= m` (and the mean, if free).
    pub fn project_low(&self, m: usize) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, &c)| if k <= m { c } else { Complex64::default() })
            .collect();
        Self::from_raw(self.grid, coeffs, self.policy)
    }

    /// Keeps `|k| > m`; complement of [`project_low`](Self::project_low).
    pub fn project_high(&self, m: usize) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, &c)| if k > m { c } else { Complex64::default() })
            .collect();
        Self::from_raw(self.grid, coeffs, self.policy)
    }

    /// Largest `k` with a nonzero coefficient, or 0.
    pub fn max_mode(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|c| c.norm_sqr() > 0.0)
            .unwrap_or(0)
    }

    /// True if the energy above mode `m` is at roundoff level, at most
    /// `1e-12` of the total in L2.
    pub fn is_low_modes(&self, m: usize) -> bool {
        let high: f64 = self.coeffs.iter().skip(m + 1).map(|c| c.norm_sqr()).sum();
        let total: f64 = self.coeffs.iter().map(|c| c.norm_sqr()).sum();
        high <= 1e-24 * total
    }

    /// Homogeneous Sobolev seminorm `(L sum |k~|^{2s} |c_k|^2)^{1/2}` over
    /// nonzero modes; for `s = 0` the mean is included, giving the L2 norm.
    pub fn sobolev(&self, s: i32) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate() {
            let w = if k == 0 {
                if s == 0 {
                    1.0
                } else {
                    continue;
                }
            } else {
                self.grid.weight(k) * self.grid.wavenumber(k).powi(2 * s)
            };
            acc += w * c.norm_sqr();
        }
        (self.grid.length() * acc).sqrt()
    }

    pub fn l2(&self) -> f64 {
        self.sobolev(0)
    }

    /// `|u_x|`.
    pub fn h1(&self) -> f64 {
        self.sobolev(1)
    }

    /// `|u_xx|`.
    pub fn h2(&self) -> f64 {
        self.sobolev(2)
    }

    /// Sup norm from 4x oversampled evaluation.
    pub fn linf(&self) -> f64 {
        self.samples_oversampled(LINF_OVERSAMPLING)
            .into_iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norms(&self) -> NormSet {
        NormSet {
            l2: self.l2(),
            h1: self.h1(),
            h2: self.h2(),
            hm1: self.sobolev(-1),
            hm2: self.sobolev(-2),
            linf: self.linf(),
        }
    }

    /// `int_0^L u v dx` by Parseval.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_grid(other)?;
        let acc: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(k, (a, b))| self.grid.weight(k) * (a * b.conj()).re)
            .sum();
        Ok(self.grid.length() * acc)
    }

    /// Pointwise product with modes above the dealias cutoff removed. The
    /// result takes this field's mean policy.
    pub fn dealias_product(&self, other: &Self) -> Result<Self> {
        self.check_grid(other)?;
        let n = self.grid.points();
        let mut t = RealTransform::new(n);
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        t.synthesize(&self.coeffs, n, &mut a);
        t.synthesize(&other.coeffs, n, &mut b);
        for (x, y) in a.iter_mut().zip(&b) {
            *x *= y;
        }
        let mut coeffs = vec![Complex64::default(); self.grid.modes()];
        t.analyze(&a, &mut coeffs);
        for c in coeffs.iter_mut().skip(self.grid.cutoff() + 1) {
            *c = Complex64::default();
        }
        Ok(Self::from_raw(self.grid, coeffs, self.policy))
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_grid(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| x * a + y * b)
            .collect();
        Ok(Self::from_raw(self.grid, coeffs, self.policy))
    }

    pub fn scaled(&self, a: f64) -> Self {
        let coeffs = self.coeffs.iter().map(|c| c * a).collect();
        Self::from_raw(self.grid, coeffs, self.policy)
    }

    pub(crate) fn check_grid(&self, other: &Self) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Text record: a grid header followed by `k re im` lines for `k >= 1`
    /// (and `k = 0` when the mean is free).
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut s = format!(
            "# grid L={:.17e} N={} cutoff={} mean={}\n",
            g.length(),
            g.points(),
            g.cutoff(),
            self.policy.as_str()
        );
        let start = usize::from(self.policy == MeanPolicy::EnforcedZero);
        for (k, c) in self.coeffs.iter().enumerate().skip(start) {
            let _ = writeln!(s, "{k} {:.17e} {:.17e}", c.re, c.im);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |why: &str| invalid("field text", why.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        let header = header
            .strip_prefix("# grid")
            .ok_or_else(|| bad("missing grid header"))?;
        let (mut length, mut points, mut cutoff, mut policy) =
            (None, None, None, MeanPolicy::EnforcedZero);
        for item in header.split_whitespace() {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| bad("malformed header"))?;
            match key {
                "L" => length = value.parse::<f64>().ok(),
                "N" => points = value.parse::<usize>().ok(),
                "cutoff" => cutoff = value.parse::<usize>().ok(),
                "mean" => {
                    policy = match value {
                        "enforced-zero" => MeanPolicy::EnforcedZero,
                        "free" => MeanPolicy::Free,
                        _ => return Err(bad("unknown mean policy")),
                    }
                }
                _ => return Err(bad("unknown header key")),
            }
        }
        let grid = GridSpec::with_cutoff(
            length.ok_or_else(|| bad("missing L"))?,
            points.ok_or_else(|| bad("missing N"))?,
            cutoff.ok_or_else(|| bad("missing cutoff"))?,
        )?;
        let mut coeffs = vec![Complex64::default(); grid.modes()];
        for line in lines {
            let mut parts = line.split_whitespace();
            let mut next = || parts.next().ok_or_else(|| bad("short record"));
            let k: usize = next()?.parse().map_err(|_| bad("bad wavenumber"))?;
            let re: f64 = next()?.parse().map_err(|_| bad("bad real part"))?;
            let im: f64 = next()?.parse().map_err(|_| bad("bad imaginary part"))?;
            if k > grid.nyquist() {
                return Err(bad("wavenumber beyond Nyquist"));
            }
            coeffs[k] = Complex64::new(re, im);
        }
        Self::from_coeffs(grid, coeffs, policy)
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;

    /// Panics if the grids differ; use [`SpectralField::lin_comb`] for a
    /// checked version.
    fn add(self, rhs: Self) -> SpectralField {
        self.lin_comb(1.0, rhs, 1.0)
            .expect("adding fields on different grids")
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;

    /// Panics if the grids differ.
    fn sub(self, rhs: Self) -> SpectralField {
        self.lin_comb(1.0, rhs, -1.0)
            .expect("subtracting fields on different grids")
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;

    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(rhs)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;

    fn neg(self) -> SpectralField {
        self.scaled(-1.0)
    }
}

/// Reproducible band-limited mean-zero field on modes `1..=max_mode` with
/// `|u_xx| = h2_norm`.
pub fn seeded_field(
    grid: GridSpec,
    seed: u64,
    max_mode: usize,
    h2_norm: f64,
) -> Result<SpectralField> {
    if max_mode == 0 || max_mode >= grid.nyquist() {
        return Err(invalid(
            "max_mode",
            format!("must lie in 1..{}, got {max_mode}", grid.nyquist()),
        ));
    }
    if !(h2_norm.is_finite() && h2_norm >= 0.0) {
        return Err(invalid(
            "h2_norm",
            format!("must be nonnegative, got {h2_norm}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = vec![Complex64::default(); grid.modes()];
    for c in coeffs.iter_mut().take(max_mode + 1).skip(1) {
        *c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    let field = SpectralField::from_raw(grid, coeffs, MeanPolicy::EnforcedZero);
    let h2 = field.h2();
    if h2 == 0.0 {
        return Ok(field);
    }
    Ok(field.scaled(h2_norm / h2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(2.0 * PI, n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(2.0 * PI, 6).is_err());
        assert!(GridSpec::new(2.0 * PI, 9).is_err());
        assert!(GridSpec::new(-1.0, 16).is_err());
        assert!(GridSpec::with_cutoff(1.0, 16, 8).is_err());
        let g = GridSpec::new(2.0 * PI, 64).unwrap();
        assert_eq!(g.cutoff(), 21);
        assert!(3 * GridSpec::new(1.0, 96).unwrap().cutoff() < 96);
        for k in 0..40 {
            assert!(g.wavenumber(k + 1) > g.wavenumber(k));
        }
    }

    #[test]
    fn sine_has_single_conjugate_pair() {
        let u = SpectralField::from_fn(grid(64), f64::sin).unwrap();
        assert!((u.coeff(1) - Complex64::new(0.0, -0.5)).norm() < 1e-15);
        assert!((u.coeff(-1) - Complex64::new(0.0, 0.5)).norm() < 1e-15);
        for k in 2..=32 {
            assert!(u.coeff(k).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_samples_vanish_under_enforced_mean() {
        let u = SpectralField::from_samples(grid(16), &[1.0; 16]).unwrap();
        assert_eq!(u, SpectralField::zeros(grid(16)));
    }

    #[test]
    fn two_mode_round_trip() {
        let g = grid(64);
        let f = |x: f64| x.sin() + 0.5 * (3.0 * x).cos();
        let u = SpectralField::from_fn(g, f).unwrap();
        let populated: Vec<usize> = (0..=32)
            .filter(|&k| u.coeff(k as i64).norm() > 1e-12)
            .collect();
        assert_eq!(populated, vec![1, 3]);
        let back = u.samples();
        for (x, v) in g.nodes().iter().zip(&back) {
            assert!((f(*x) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_errors() {
        let g = grid(16);
        assert_eq!(
            SpectralField::from_samples(g, &[0.0; 15]),
            Err(Error::LengthMismatch {
                expected: 16,
                got: 15
            })
        );
        let mut s = vec![0.0; 16];
        s[3] = f64::NAN;
        assert_eq!(SpectralField::from_samples(g, &s), Err(Error::NonFinite(3)));
    }

    #[test]
    fn derivatives_of_sine() {
        let g = grid(32);
        let u = SpectralField::from_fn(g, f64::sin).unwrap();
        let cos = SpectralField::from_fn(g, f64::cos).unwrap();
        let d1 = u.derivative(1);
        let d3 = u.derivative(3);
        for k in 0..=16 {
            assert!((d1.coeff(k) - cos.coeff(k)).norm() < 1e-14);
            assert!((d3.coeff(k) + cos.coeff(k)).norm() < 1e-12);
        }
    }

    #[test]
    fn second_derivative_of_cos5() {
        let g = grid(64);
        let u = SpectralField::from_fn(g, |x| (5.0 * x).cos()).unwrap();
        let d2 = u.derivative(2);
        let expect = 0.5 * -25.0;
        assert!((d2.coeff(5).re - expect).abs() < 1e-12);
        assert!((d2.coeff(-5).re - expect).abs() < 1e-12);
        for k in (0..=32).filter(|&k| k != 5) {
            assert!(d2.coeff(k).norm() < 1e-12);
        }
    }

    #[test]
    fn projections() {
        let g = grid(32);
        let u = SpectralField::from_fn(g, |x| x.sin() + (2.0 * x).sin()).unwrap();
        let s1 = SpectralField::from_fn(g, f64::sin).unwrap();
        let s2 = SpectralField::from_fn(g, |x| (2.0 * x).sin()).unwrap();
        assert!((&u.project_low(1) - &s1).l2() < 1e-14);
        assert!((&u.project_high(1) - &s2).l2() < 1e-14);
        assert_eq!(u.project_low(16), u);
        assert_eq!(u.project_low(40), u);
        assert!(s1.project_high(1).l2() < 1e-14);
    }

    #[test]
    fn closed_form_norms() {
        let g = grid(64);
        let u = SpectralField::from_fn(g, f64::sin).unwrap();
        let n = u.norms();
        assert!((n.l2 - PI.sqrt()).abs() < 1e-10);
        assert!((n.h1 - PI.sqrt()).abs() < 1e-10);
        assert!((n.linf - 1.0).abs() < 1e-10);
        assert_eq!(SpectralField::zeros(g).norms(), NormSet::default());
        let v = SpectralField::from_fn(g, |x| x.cos() + (2.0 * x).cos()).unwrap();
        assert!((v.h2().powi(2) - 17.0 * PI).abs() < 1e-10);
        let w = SpectralField::from_fn(g, |x| (2.0 * x).cos()).unwrap();
        assert!((w.sobolev(-1).powi(2) - PI / 4.0).abs() < 1e-12);
        assert!((w.sobolev(-2).powi(2) - PI / 16.0).abs() < 1e-12);
    }

    #[test]
    fn sine_squared_product() {
        let g = grid(32);
        let u = SpectralField::from_fn(g, f64::sin).unwrap();
        let p = u.dealias_product(&u).unwrap();
        let expect = SpectralField::from_fn(g, |x| -0.5 * (2.0 * x).cos()).unwrap();
        assert!((&p - &expect).l2() < 1e-14);
        let z = SpectralField::zeros(g);
        assert_eq!(z.dealias_product(&u).unwrap().l2(), 0.0);
        let other = GridSpec::new(PI, 32).unwrap();
        assert_eq!(
            u.dealias_product(&SpectralField::zeros(other)),
            Err(Error::GridMismatch)
        );
    }

    #[test]
    fn dealiased_product_matches_fine_grid() {
        let g = grid(128);
        for seed in 0..20 {
            let a = seeded_field(g, seed, 21, 3.0).unwrap();
            let b = seeded_field(g, seed + 100, 21, 2.0).unwrap();
            let p = a.dealias_product(&b).unwrap();
            let (fa, fb) = (a.samples_oversampled(2), b.samples_oversampled(2));
            let prod: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
            let fine_grid = GridSpec::new(2.0 * PI, 256).unwrap();
            let fine = SpectralField::from_samples(fine_grid, &prod).unwrap();
            for k in 1..=42 {
                assert!(
                    (p.coeff(k) - fine.coeff(k)).norm() < 1e-12,
                    "seed {seed} k {k}"
                );
            }
        }
    }

    #[test]
    fn parseval_matches_quadrature() {
        let g = grid(64);
        for seed in 0..10 {
            let u = seeded_field(g, seed, 20, 5.0).unwrap();
            let quad: f64 = u.samples().iter().map(|v| v * v).sum::<f64>() * g.spacing();
            assert!((quad - u.l2().powi(2)).abs() <= 1e-10 * quad);
        }
    }

    #[test]
    fn agmon_on_thousand_fields() {
        let g = grid(64);
        for seed in 0..1000 {
            let u = seeded_field(g, seed, 1 + (seed as usize % 20), 1.0).unwrap();
            let n = u.norms();
            assert!(n.linf.powi(2) <= n.l2 * n.h1 * (1.0 + 1e-8), "seed {seed}");
        }
    }

    #[test]
    fn conservation_identities() {
        let g = grid(64);
        for seed in 0..20 {
            let w = seeded_field(g, seed, 21, 4.0).unwrap();
            let wx = w.derivative(1);
            let w2 = w.dealias_product(&w).unwrap();
            // int w^2 w_x with the dealiased square
            let cubic = w2.inner(&wx).unwrap();
            let scale = w2.l2() * wx.l2();
            assert!(cubic.abs() < 1e-10 * scale);
            let third = w.derivative(3).inner(&w).unwrap();
            assert!(third.abs() < 1e-10 * w.derivative(3).l2() * w.l2());
        }
    }

    #[test]
    fn text_round_trip() {
        let g = GridSpec::new(3.5, 32).unwrap();
        let u = seeded_field(g, 7, 10, 2.0).unwrap();
        assert_eq!(SpectralField::from_text(&u.to_text()).unwrap(), u);
        let free = SpectralField::from_fn(g, |x| 1.0 + x.sin())
            .unwrap()
            .with_policy(MeanPolicy::Free);
        let free =
            SpectralField::from_samples_with_policy(g, &free.samples(), MeanPolicy::Free).unwrap();
        assert_eq!(SpectralField::from_text(&free.to_text()).unwrap(), free);
        assert!(SpectralField::from_text("3 1 2").is_err());
    }

    #[test]
    fn seeded_field_is_reproducible_and_scaled() {
        let g = grid(64);
        let a = seeded_field(g, 42, 10, 3.0).unwrap();
        assert_eq!(a, seeded_field(g, 42, 10, 3.0).unwrap());
        assert_ne!(a, seeded_field(g, 43, 10, 3.0).unwrap());
        assert!((a.h2() - 3.0).abs() < 1e-12);
        assert_eq!(a.max_mode(), 10);
        assert!(seeded_field(g, 1, 32, 1.0).is_err());
    }

    fn field_strategy() -> impl Strategy<Value = SpectralField> {
        (any::<u64>(), 1usize..31, 0.01f64..50.0)
            .prop_map(|(seed, kmax, h2)| seeded_field(grid(64), seed, kmax, h2).unwrap())
    }

    proptest! {
        #[test]
        fn physical_round_trip(u in field_strategy()) {
            let s = u.samples();
            let v = SpectralField::from_samples(*u.grid(), &s).unwrap();
            let amp = s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (a, b) in s.iter().zip(v.samples()) {
                prop_assert!((a - b).abs() <= 10.0 * f64::EPSILON * amp.max(1e-300));
            }
        }

        #[test]
        fn projection_algebra(u in field_strategy(), m in 1usize..32) {
            let p = u.project_low(m);
            let q = u.project_high(m);
            prop_assert_eq!(p.project_low(m), p.clone());
            prop_assert_eq!(&p + &q, u.clone());
            prop_assert_eq!(p.project_high(m).l2(), 0.0);
            for s in 0..=2 {
                let lhs = p.sobolev(s).powi(2) + q.sobolev(s).powi(2);
                let rhs = u.sobolev(s).powi(2);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-300));
            }
        }

        #[test]
        fn poincare_on_high_modes(u in field_strategy(), m in 1usize..31) {
            let q = u.project_high(m);
            let bound = u.grid().length() / (2.0 * PI * (m as f64 + 1.0)) * q.h1();
            prop_assert!(q.l2() <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn agmon(u in field_strategy()) {
            let n = u.norms();
            prop_assert!(n.linf * n.linf <= n.l2 * n.h1 * (1.0 + 1e-8));
        }

        #[test]
        fn mean_stays_zero(u in field_strategy(), order in 0u32..5) {
            prop_assert_eq!(u.derivative(order).mean(), 0.0);
            prop_assert_eq!(u.dealias_product(&u).unwrap().mean(), 0.0);
        }
    }
}
