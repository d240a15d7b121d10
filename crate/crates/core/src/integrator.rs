//! Exponential time differencing for the nudged, damped KdV equation
//!
//! ```text
//! w_t + w w_x + w_xxx + gamma w + eps w_xxxx = f - mu (P_m w - v(t))
//! ```
//!
//! The diagonal linear part (dispersion, damping, hyperviscosity and the
//! `-mu P_m w` relaxation) is propagated exactly; the quadratic term, the
//! forcing and the control `mu v(t)` go through the fourth-order Cox-Matthews
//! scheme with Kassam-Trefethen contour weights.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fft::RealTransform;
use crate::spectral::{GridSpec, MeanPolicy, NormSet, SpectralField};

/// Quadrature points on the unit circle used for the ETD weights.
pub const CONTOUR_POINTS: usize = 64;

/// Default ceiling on `|w_xx|` before an integration is declared unstable.
pub const DEFAULT_BLOWUP_GUARD: f64 = 1e6;

/// Physical and numerical parameters of one integration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Linear damping rate.
    pub gamma: f64,
    /// Nudging gain; zero switches the feedback off.
    pub mu: f64,
    /// Number of observed Fourier modes.
    pub m: usize,
    /// Hyperviscosity coefficient.
    pub epsilon: f64,
    /// Time-independent forcing; also fixes the grid.
    pub forcing: SpectralField,
    pub dt: f64,
    pub blowup_guard: f64,
    /// Test hook: `false` drops the `w w_x` term.
    pub advection: bool,
}

impl ModelParams {
    /// Unnudged, inviscid parameters with the given damping and step.
    pub fn new(forcing: SpectralField, gamma: f64, dt: f64) -> Self {
        Self {
            gamma,
            mu: 0.0,
            m: 0,
            epsilon: 0.0,
            forcing,
            dt,
            blowup_guard: DEFAULT_BLOWUP_GUARD,
            advection: true,
        }
    }

    pub fn with_nudging(mut self, mu: f64, m: usize) -> Self {
        self.mu = mu;
        self.m = m;
        self
    }

    pub fn grid(&self) -> &GridSpec {
        self.forcing.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(
                    name,
                    format!("must be finite and nonnegative, got {v}"),
                ))
            }
        };
        nonneg("gamma", self.gamma)?;
        nonneg("mu", self.mu)?;
        nonneg("epsilon", self.epsilon)?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if self.epsilon >= 1.0 {
            return Err(invalid("epsilon", "must be below 1"));
        }
        if self.m > self.grid().nyquist() {
            return Err(invalid(
                "m",
                format!(
                    "must not exceed N/2 = {}, got {}",
                    self.grid().nyquist(),
                    self.m
                ),
            ));
        }
        if self.forcing.mean() != 0.0 {
            return Err(invalid("forcing", "must have zero mean"));
        }
        if !(self.blowup_guard > 0.0) {
            return Err(invalid("blowup_guard", "must be positive"));
        }
        Ok(())
    }
}

/// Per-mode linear rates `lambda_k = i k~^3 - gamma - mu [1 <= k <= m] - eps k~^4`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSymbol {
    rates: Vec<Complex64>,
}

impl LinearSymbol {
    pub fn new(params: &ModelParams) -> Self {
        let grid = params.grid();
        let nyq = grid.nyquist();
        let rates = (0..=nyq)
            .map(|k| {
                let kt = grid.wavenumber(k);
                let relax = if k >= 1 && k <= params.m {
                    params.mu
                } else {
                    0.0
                };
                let re = -params.gamma - relax - params.epsilon * kt.powi(4);
                // The Nyquist mode must stay real, so it only feels the decay.
                let im = if k == nyq { 0.0 } else { kt.powi(3) };
                Complex64::new(re, im)
            })
            .collect();
        Self { rates }
    }

    pub fn rates(&self) -> &[Complex64] {
        &self.rates
    }

    /// Rate at signed wavenumber `k`.
    pub fn rate(&self, k: i64) -> Complex64 {
        let r = self.rates[k.unsigned_abs() as usize];
        if k < 0 {
            r.conj()
        } else {
            r
        }
    }
}

/// Time-dependent input `v(t)` of the feedback term.
#[derive(Debug, Clone, Copy)]
pub enum Control<'a> {
    None,
    Constant(&'a SpectralField),
    /// Piecewise-linear interpolation between window samples.
    Window(&'a TrajectoryWindow),
}

impl Control<'_> {
    fn check(&self, params: &ModelParams) -> Result<()> {
        let fields: Box<dyn Iterator<Item = &SpectralField>> = match self {
            Control::None => return Ok(()),
            Control::Constant(v) => Box::new(std::iter::once(*v)),
            Control::Window(w) => Box::new(w.states().iter()),
        };
        for v in fields {
            if v.grid() != params.grid() {
                return Err(Error::GridMismatch);
            }
            if !v.is_low_modes(params.m) || v.mean() != 0.0 {
                // Roundoff above m is ignored; only modes 1..=m are read.
                return Err(Error::NotLowModes { m: params.m });
            }
        }
        Ok(())
    }

    /// `v(t)` on modes `0..=m` as a field on `grid`, or `None` without control.
    pub fn value_at(&self, t: f64, grid: &GridSpec, m: usize) -> Result<Option<SpectralField>> {
        let mut out = vec![Complex64::default(); grid.modes()];
        if self.eval_low(t, m.min(grid.nyquist()), &mut out)? {
            Ok(Some(SpectralField::from_raw(
                *grid,
                out,
                MeanPolicy::EnforcedZero,
            )))
        } else {
            Ok(None)
        }
    }

    /// Writes `v(t)` on modes `0..=m` into `out`.
    fn eval_low(&self, t: f64, m: usize, out: &mut [Complex64]) -> Result<bool> {
        match self {
            Control::None => Ok(false),
            Control::Constant(v) => {
                out[..=m].copy_from_slice(&v.coeffs()[..=m]);
                Ok(true)
            }
            Control::Window(w) => {
                let (i, s) = w.locate(t)?;
                let a = w.states()[i].coeffs();
                if s == 0.0 {
                    out[..=m].copy_from_slice(&a[..=m]);
                } else {
                    let b = w.states()[i + 1].coeffs();
                    for k in 0..=m {
                        out[k] = a[k] * (1.0 - s) + b[k] * s;
                    }
                }
                Ok(true)
            }
        }
    }
}

/// Whether the states of a window are confined to the observed modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WindowSpace {
    LowModes(usize),
    Full,
}

/// Uniformly sampled trajectory segment with the norms of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    times: Vec<f64>,
    states: Vec<SpectralField>,
    norms: Vec<NormSet>,
    space: WindowSpace,
}

impl TrajectoryWindow {
    /// Full-space window. Times must be strictly increasing and equally
    /// spaced; all states must share a grid, and enforced-mean states must
    /// have zero mean.
    pub fn new(times: Vec<f64>, states: Vec<SpectralField>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::TooFewSamples { need: 1, have: 0 });
        }
        if times.len() != states.len() {
            return Err(Error::LengthMismatch {
                expected: times.len(),
                got: states.len(),
            });
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if times.len() > 1 {
            let span = times[times.len() - 1] - times[0];
            let h = span / (times.len() - 1) as f64;
            if !(h > 0.0) {
                return Err(invalid("times", "must be strictly increasing"));
            }
            for (i, t) in times.iter().enumerate() {
                let expect = times[0] + i as f64 * h;
                if (t - expect).abs() > 1e-9 * h.max(span) {
                    return Err(invalid("times", "must be equally spaced"));
                }
            }
        }
        let grid = *states[0].grid();
        for s in &states {
            if *s.grid() != grid {
                return Err(Error::GridMismatch);
            }
            if s.policy() == MeanPolicy::EnforcedZero && s.mean() != 0.0 {
                return Err(invalid("states", "enforced-zero state with nonzero mean"));
            }
        }
        let norms = states.iter().map(SpectralField::norms).collect();
        Ok(Self {
            times,
            states,
            norms,
            space: WindowSpace::Full,
        })
    }

    /// Window whose states all lie in the span of modes `1..=m`; roundoff
    /// above `m` is projected away.
    pub fn low_modes(times: Vec<f64>, states: Vec<SpectralField>, m: usize) -> Result<Self> {
        if states.iter().any(|s| !s.is_low_modes(m) || s.mean() != 0.0) {
            return Err(Error::NotLowModes { m });
        }
        let states = states.iter().map(|s| s.project_low(m)).collect();
        let mut w = Self::new(times, states)?;
        w.space = WindowSpace::LowModes(m);
        Ok(w)
    }

    /// `samples` equally spaced copies of a constant state on `[t0, t1]`.
    pub fn constant(state: &SpectralField, t0: f64, t1: f64, samples: usize) -> Result<Self> {
        if samples < 2 || !(t1 > t0) {
            return Err(invalid(
                "samples",
                "need at least two samples on a nonempty interval",
            ));
        }
        let h = (t1 - t0) / (samples - 1) as f64;
        let times = (0..samples).map(|i| t0 + i as f64 * h).collect();
        let mut w = Self::new(times, vec![state.clone(); samples])?;
        let m = state.max_mode();
        if state.mean() == 0.0 {
            w.space = WindowSpace::LowModes(m);
        }
        Ok(w)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[SpectralField] {
        &self.states
    }

    pub fn norms(&self) -> &[NormSet] {
        &self.norms
    }

    pub fn space(&self) -> WindowSpace {
        self.space
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn last(&self) -> &SpectralField {
        &self.states[self.states.len() - 1]
    }

    /// Sample spacing, or `None` for a single sample.
    pub fn spacing(&self) -> Option<f64> {
        (self.len() > 1).then(|| (self.end() - self.start()) / (self.len() - 1) as f64)
    }

    /// Windowed surrogate of the sup-in-time H2 norm: the largest `|w_xx|`
    /// over the samples.
    pub fn x_norm(&self) -> f64 {
        self.norms.iter().fold(0.0, |m, n| m.max(n.h2))
    }

    /// Interval index and fraction for time `t`.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let Some(h) = self.spacing() else {
            return if (t - self.start()).abs() <= 1e-12 * t.abs().max(1.0) {
                Ok((0, 0.0))
            } else {
                Err(Error::ControlGap { t })
            };
        };
        let pos = (t - self.start()) / h;
        let last = (self.len() - 1) as f64;
        if pos < -1e-9 || pos > last + 1e-9 {
            return Err(Error::ControlGap { t });
        }
        let pos = pos.clamp(0.0, last);
        let i = (pos.floor() as usize).min(self.len() - 2);
        let s = pos - i as f64;
        Ok((i, s))
    }

    /// Piecewise-linear interpolant at time `t`.
    pub fn at(&self, t: f64) -> Result<SpectralField> {
        let (i, s) = self.locate(t)?;
        if s == 0.0 {
            return Ok(self.states[i].clone());
        }
        self.states[i].lin_comb(1.0 - s, &self.states[i + 1], s)
    }

    /// `P_m` applied to every sample.
    pub fn project_low(&self, m: usize) -> Self {
        let states: Vec<SpectralField> = self.states.iter().map(|s| s.project_low(m)).collect();
        let norms = states.iter().map(SpectralField::norms).collect();
        Self {
            times: self.times.clone(),
            states,
            norms,
            space: WindowSpace::LowModes(m),
        }
    }

    /// Samples with `t >= from` (within a small tolerance).
    pub fn tail_from(&self, from: f64) -> Result<Self> {
        let tol = 1e-9 * self.spacing().unwrap_or(1.0);
        let i = self
            .times
            .iter()
            .position(|&t| t >= from - tol)
            .ok_or(Error::TooFewSamples { need: 1, have: 0 })?;
        Ok(Self {
            times: self.times[i..].to_vec(),
            states: self.states[i..].to_vec(),
            norms: self.norms[i..].to_vec(),
            space: self.space,
        })
    }

    /// Every `stride`-th sample.
    pub fn thin(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        Self {
            times: pick(&self.times, stride),
            states: pick(&self.states, stride),
            norms: pick(&self.norms, stride),
            space: self.space,
        }
    }
}

fn pick<T: Clone>(v: &[T], stride: usize) -> Vec<T> {
    v.iter().step_by(stride).cloned().collect()
}

/// ETD weights of one mode for step `h`: `(E, E/2, Q, f1, f2, f3)`.
#[derive(Debug, Clone, Copy)]
struct ModeWeights {
    e: Complex64,
    e_half: Complex64,
    q: Complex64,
    f1: Complex64,
    f2: Complex64,
    f3: Complex64,
}

fn mode_weights(lambda: Complex64, h: f64) -> ModeWeights {
    let l = lambda * h;
    let mut acc = [Complex64::default(); 4];
    for j in 0..CONTOUR_POINTS {
        let theta = std::f64::consts::PI * (2.0 * j as f64 + 1.0) / CONTOUR_POINTS as f64;
        let r = l + Complex64::from_polar(1.0, theta);
        let er = r.exp();
        let r3 = r * r * r;
        acc[0] += ((r * 0.5).exp() - 1.0) / r;
        acc[1] += (-4.0 - r + er * (4.0 - 3.0 * r + r * r)) / r3;
        acc[2] += (2.0 + r + er * (r - 2.0)) / r3;
        acc[3] += (-4.0 - 3.0 * r - r * r + er * (4.0 - r)) / r3;
    }
    let s = h / CONTOUR_POINTS as f64;
    ModeWeights {
        e: l.exp(),
        e_half: (l * 0.5).exp(),
        q: acc[0] * s,
        f1: acc[1] * s,
        f2: acc[2] * s,
        f3: acc[3] * s,
    }
}

/// Reusable stepper holding the ETD weights and transform buffers.
pub struct Integrator {
    params: ModelParams,
    weights: Vec<ModeWeights>,
    transform: RealTransform,
    phys: Vec<f64>,
    prod: Vec<Complex64>,
    control: Vec<Complex64>,
    ik_half: Vec<Complex64>,
    stages: [Vec<Complex64>; 7],
}

impl Integrator {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let grid = *params.grid();
        let symbol = LinearSymbol::new(params);
        let weights = symbol
            .rates()
            .iter()
            .map(|&l| mode_weights(l, params.dt))
            .collect();
        let modes = grid.modes();
        let ik_half = (0..modes)
            .map(|k| {
                if k <= grid.cutoff() {
                    Complex64::new(0.0, -0.5 * grid.wavenumber(k))
                } else {
                    Complex64::default()
                }
            })
            .collect();
        let zero = vec![Complex64::default(); modes];
        Ok(Self {
            params: params.clone(),
            weights,
            transform: RealTransform::new(grid.points()),
            phys: vec![0.0; grid.points()],
            prod: zero.clone(),
            control: zero.clone(),
            ik_half,
            stages: std::array::from_fn(|_| zero.clone()),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// `-1/2 d/dx P_K(w^2) + f + mu v(t)` into `out`.
    fn rhs(
        &mut self,
        w: &[Complex64],
        t: f64,
        control: &Control,
        out: &mut [Complex64],
    ) -> Result<()> {
        let n = self.params.grid().points();
        if self.params.advection {
            self.transform.synthesize(w, n, &mut self.phys);
            for x in self.phys.iter_mut() {
                *x *= *x;
            }
            self.transform.analyze(&self.phys, &mut self.prod);
            for ((o, p), ik) in out.iter_mut().zip(&self.prod).zip(&self.ik_half) {
                *o = p * ik;
            }
        } else {
            out.fill(Complex64::default());
        }
        for (o, f) in out.iter_mut().zip(self.params.forcing.coeffs()) {
            *o += f;
        }
        let m = self.params.m;
        if self.params.mu > 0.0 && control.eval_low(t, m, &mut self.control)? {
            for k in 1..=m {
                out[k] += self.control[k] * self.params.mu;
            }
        }
        Ok(())
    }

    /// Advances `w` from time `t` by one step of size `dt`.
    pub fn step(&mut self, w: &SpectralField, t: f64, control: &Control) -> Result<SpectralField> {
        if w.grid() != self.params.grid() {
            return Err(Error::GridMismatch);
        }
        let h = self.params.dt;
        let u = w.coeffs();
        let modes = u.len();
        let [mut nu, mut na, mut nb, mut nc, mut a, mut b, mut c] =
            std::mem::take(&mut self.stages);
        let result = (|| {
            self.rhs(u, t, control, &mut nu)?;
            for k in 0..modes {
                let wk = &self.weights[k];
                a[k] = wk.e_half * u[k] + wk.q * nu[k];
            }
            self.rhs(&a, t + 0.5 * h, control, &mut na)?;
            for k in 0..modes {
                let wk = &self.weights[k];
                b[k] = wk.e_half * u[k] + wk.q * na[k];
            }
            self.rhs(&b, t + 0.5 * h, control, &mut nb)?;
            for k in 0..modes {
                let wk = &self.weights[k];
                c[k] = wk.e_half * a[k] + wk.q * (2.0 * nb[k] - nu[k]);
            }
            self.rhs(&c, t + h, control, &mut nc)?;
            let next: Vec<Complex64> = (0..modes)
                .map(|k| {
                    let wk = &self.weights[k];
                    wk.e * u[k] + wk.f1 * nu[k] + 2.0 * wk.f2 * (na[k] + nb[k]) + wk.f3 * nc[k]
                })
                .collect();
            Ok(next)
        })();
        self.stages = [nu, na, nb, nc, a, b, c];
        let next = result?;
        if next.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::BlowUp {
                t: t + h,
                norm: f64::INFINITY,
            });
        }
        let out = SpectralField::from_raw(*w.grid(), next, w.policy());
        let norm = out.h2();
        if norm > self.params.blowup_guard {
            return Err(Error::BlowUp { t: t + h, norm });
        }
        Ok(out)
    }

    /// Number of steps of size `dt` spanning `[t0, t1]`.
    fn step_count(&self, t0: f64, t1: f64) -> Result<usize> {
        if !(t1 > t0) {
            return Err(invalid("t1", format!("must exceed t0 = {t0}, got {t1}")));
        }
        let n = ((t1 - t0) / self.params.dt).round();
        if (n * self.params.dt - (t1 - t0)).abs() > 1e-9 * (t1 - t0).max(1.0) || n < 1.0 {
            return Err(invalid(
                "dt",
                "the interval must be an integer number of steps",
            ));
        }
        Ok(n as usize)
    }

    /// Integrates over `[t0, t1]` keeping every `sample_every`-th state,
    /// including both endpoints.
    pub fn integrate(
        &mut self,
        w0: &SpectralField,
        t0: f64,
        t1: f64,
        control: Control,
        sample_every: usize,
    ) -> Result<TrajectoryWindow> {
        control.check(&self.params)?;
        let steps = self.step_count(t0, t1)?;
        let every = sample_every.max(1);
        if steps % every != 0 {
            return Err(invalid(
                "sample_every",
                format!("must divide the step count {steps}, got {every}"),
            ));
        }
        let dt = self.params.dt;
        let mut times = Vec::with_capacity(steps / every + 1);
        let mut states = Vec::with_capacity(steps / every + 1);
        times.push(t0);
        states.push(w0.clone());
        let mut w = w0.clone();
        for i in 0..steps {
            w = self.step(&w, t0 + i as f64 * dt, &control)?;
            if (i + 1) % every == 0 {
                times.push(t0 + (i + 1) as f64 * dt);
                states.push(w.clone());
            }
        }
        let window = TrajectoryWindow::new(times, states)?;
        if let Some(n) = window
            .norms()
            .iter()
            .find(|n| !(n.h2 <= self.params.blowup_guard))
        {
            return Err(Error::BlowUp { t: t1, norm: n.h2 });
        }
        Ok(window)
    }

    /// Final state only, without storing samples.
    pub fn advance(
        &mut self,
        w0: &SpectralField,
        t0: f64,
        t1: f64,
        control: Control,
    ) -> Result<SpectralField> {
        control.check(&self.params)?;
        let steps = self.step_count(t0, t1)?;
        let dt = self.params.dt;
        let mut w = w0.clone();
        for i in 0..steps {
            w = self.step(&w, t0 + i as f64 * dt, &control)?;
        }
        Ok(w)
    }
}

/// `-1/2 d/dx P_K(w^2) + f + mu v` for a single state.
pub fn nonlinear_rhs(
    w: &SpectralField,
    params: &ModelParams,
    v_now: Option<&SpectralField>,
) -> Result<SpectralField> {
    let control = match v_now {
        Some(v) => Control::Constant(v),
        None => Control::None,
    };
    control.check(params)?;
    if w.grid() != params.grid() {
        return Err(Error::GridMismatch);
    }
    let mut integ = Integrator::new(params)?;
    let mut out = vec![Complex64::default(); params.grid().modes()];
    integ.rhs(w.coeffs(), 0.0, &control, &mut out)?;
    Ok(SpectralField::from_raw(*w.grid(), out, w.policy()))
}

/// One step from time `t`.
pub fn step(
    w: &SpectralField,
    params: &ModelParams,
    control: Control,
    t: f64,
) -> Result<SpectralField> {
    control.check(params)?;
    Integrator::new(params)?.step(w, t, &control)
}

/// Sampled trajectory on `[t0, t1]`.
pub fn integrate(
    w0: &SpectralField,
    t0: f64,
    t1: f64,
    params: &ModelParams,
    control: Control,
    sample_every: usize,
) -> Result<TrajectoryWindow> {
    Integrator::new(params)?.integrate(w0, t0, t1, control, sample_every)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::seeded_field;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(2.0 * PI, n).unwrap()
    }

    fn params(g: GridSpec, gamma: f64) -> ModelParams {
        ModelParams::new(SpectralField::zeros(g), gamma, 1e-3)
    }

    #[test]
    fn symbol_structure() {
        let mut p = params(grid(32), 0.5).with_nudging(3.0, 4);
        p.epsilon = 0.01;
        let s = LinearSymbol::new(&p);
        for k in 1..16i64 {
            assert!(s.rate(k).re <= -0.5);
            assert_eq!(s.rate(-k), s.rate(k).conj());
            let kt = k as f64;
            assert!((s.rate(k).im - kt.powi(3)).abs() < 1e-13 * kt.powi(3));
        }
        assert!((s.rate(4).re - (-3.5 - 0.01 * 256.0)).abs() < 1e-12);
        assert!((s.rate(5).re - (-0.5 - 0.01 * 625.0)).abs() < 1e-12);
    }

    #[test]
    fn weights_match_direct_formula_away_from_zero() {
        let h = 0.1;
        for &l in &[Complex64::new(-3.0, 2.0), Complex64::new(-0.5, 40.0)] {
            let w = mode_weights(l, h);
            let z = l * h;
            let q = h * ((z * 0.5).exp() - 1.0) / z;
            let z3 = z * z * z;
            let f1 = h * (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / z3;
            assert!((w.q - q).norm() < 1e-12 * q.norm());
            assert!((w.f1 - f1).norm() < 1e-10 * f1.norm());
        }
        let w0 = mode_weights(Complex64::default(), h);
        assert!((w0.q - h / 2.0).norm() < 1e-15);
        assert!((w0.f1 - h / 6.0).norm() < 1e-15);
        assert!((w0.f2 - h / 6.0).norm() < 1e-15);
        assert!((w0.f3 - h / 6.0).norm() < 1e-15);
    }

    #[test]
    fn rhs_examples() {
        let g = grid(32);
        let p = params(g, 0.0);
        let z = SpectralField::zeros(g);
        assert_eq!(nonlinear_rhs(&z, &p, None).unwrap().l2(), 0.0);

        let s = SpectralField::from_fn(g, f64::sin).unwrap();
        let r = nonlinear_rhs(&s, &p, None).unwrap();
        let expect = SpectralField::from_fn(g, |x| -0.5 * (2.0 * x).sin()).unwrap();
        assert!((&r - &expect).l2() < 1e-14);

        let f = SpectralField::from_fn(g, f64::cos).unwrap();
        let p2 = ModelParams::new(f, 0.0, 1e-3).with_nudging(2.0, 1);
        let v = s.scaled(0.5);
        let r = nonlinear_rhs(&z, &p2, Some(&v)).unwrap();
        let expect = SpectralField::from_fn(g, |x| x.cos() + x.sin()).unwrap();
        assert!((&r - &expect).l2() < 1e-14);

        let high = SpectralField::from_fn(g, |x| (3.0 * x).sin()).unwrap();
        assert_eq!(
            nonlinear_rhs(&z, &p2, Some(&high)),
            Err(Error::NotLowModes { m: 1 })
        );
    }

    #[test]
    fn zero_stays_zero() {
        let g = grid(32);
        let w = SpectralField::zeros(g);
        let out = integrate(&w, 0.0, 0.1, &params(g, 0.3), Control::None, 10).unwrap();
        assert!(out.states().iter().all(|s| s.l2() == 0.0));
    }

    #[test]
    fn linear_damping_is_exact() {
        let g = grid(32);
        let mut p = params(g, 0.7);
        p.advection = false;
        let s = SpectralField::from_fn(g, f64::sin).unwrap();
        let next = step(&s, &p, Control::None, 0.0).unwrap();
        let factor = (-0.7 * p.dt).exp();
        assert!((next.l2() - factor * s.l2()).abs() < 1e-15);
    }

    #[test]
    fn damping_law_with_advection() {
        let g = grid(64);
        let p = params(g, 0.5);
        let u0 = seeded_field(g, 3, 6, 1.0).unwrap();
        let u = Integrator::new(&p)
            .unwrap()
            .advance(&u0, 0.0, 1.0, Control::None)
            .unwrap();
        let expect = (-0.5f64).exp() * u0.l2();
        assert!((u.l2() - expect).abs() < 1e-10 * u0.l2());
    }

    #[test]
    fn hyperviscosity_damps_more() {
        let g = grid(32);
        let mut p = params(g, 0.1);
        p.advection = false;
        let u0 = seeded_field(g, 5, 10, 1.0).unwrap();
        let a = Integrator::new(&p)
            .unwrap()
            .advance(&u0, 0.0, 0.5, Control::None)
            .unwrap();
        p.epsilon = 0.01;
        let b = Integrator::new(&p)
            .unwrap()
            .advance(&u0, 0.0, 0.5, Control::None)
            .unwrap();
        for k in 1..=16 {
            assert!(b.coeff(k).norm() <= a.coeff(k).norm());
        }
    }

    #[test]
    fn mean_mode_stays_zero() {
        let g = grid(64);
        let f = SpectralField::from_fn(g, |x| x.cos() + 0.3 * (2.0 * x).sin()).unwrap();
        let p = ModelParams::new(f, 0.5, 1e-2);
        let u0 = seeded_field(g, 11, 10, 3.0).unwrap();
        let w = integrate(&u0, 0.0, 2.0, &p, Control::None, 20).unwrap();
        assert!(w
            .states()
            .iter()
            .all(|s| s.coeff(0) == Complex64::default()));
    }

    #[test]
    fn control_interpolation_and_gaps() {
        let g = grid(16);
        let a = SpectralField::from_fn(g, f64::sin).unwrap();
        let b = SpectralField::from_fn(g, f64::cos).unwrap();
        let w = TrajectoryWindow::low_modes(vec![0.0, 1.0], vec![a.clone(), b.clone()], 1).unwrap();
        let mid = w.at(0.25).unwrap();
        let expect = a.lin_comb(0.75, &b, 0.25).unwrap();
        assert!((&mid - &expect).l2() < 1e-15);
        assert_eq!(w.at(1.5), Err(Error::ControlGap { t: 1.5 }));
        let f = SpectralField::zeros(g);
        let p = ModelParams::new(f, 0.1, 0.1).with_nudging(1.0, 1);
        let err = integrate(&a, 0.0, 2.0, &p, Control::Window(&w), 1).unwrap_err();
        assert!(matches!(err, Error::ControlGap { .. }));
    }

    #[test]
    fn window_validation() {
        let g = grid(16);
        let z = SpectralField::zeros(g);
        assert!(TrajectoryWindow::new(vec![0.0, 1.0, 3.0], vec![z.clone(); 3]).is_err());
        assert!(TrajectoryWindow::new(vec![1.0, 0.0], vec![z.clone(); 2]).is_err());
        let s2 = SpectralField::from_fn(g, |x| (2.0 * x).sin()).unwrap();
        assert_eq!(
            TrajectoryWindow::low_modes(vec![0.0], vec![s2], 1),
            Err(Error::NotLowModes { m: 1 })
        );
    }

    #[test]
    fn blowup_guard_trips() {
        let g = grid(32);
        let mut p = params(g, 0.0);
        p.blowup_guard = 1.0;
        let u0 = seeded_field(g, 1, 4, 5.0).unwrap();
        assert!(matches!(
            integrate(&u0, 0.0, 0.01, &p, Control::None, 1),
            Err(Error::BlowUp { .. })
        ));
    }

    #[test]
    fn fourth_order_self_convergence() {
        let g = grid(64);
        let f = SpectralField::from_fn(g, |x| x.cos() + 0.3 * (2.0 * x).sin()).unwrap();
        let u0 = seeded_field(g, 2, 6, 2.0).unwrap();
        let run = |dt: f64| {
            let p = ModelParams::new(f.clone(), 0.5, dt);
            Integrator::new(&p)
                .unwrap()
                .advance(&u0, 0.0, 1.0, Control::None)
                .unwrap()
        };
        let reference = run(1.0 / 8000.0);
        let e1 = (&run(1.0 / 500.0) - &reference).l2();
        let e2 = (&run(1.0 / 1000.0) - &reference).l2();
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() < 0.3, "order {order}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn unforced_l2_obeys_exact_decay(seed in any::<u64>(), gamma in 0.0f64..1.0) {
            let g = grid(32);
            let p = ModelParams::new(SpectralField::zeros(g), gamma, 1e-3);
            let u0 = seeded_field(g, seed, 6, 1.0).unwrap();
            let u = Integrator::new(&p).unwrap().advance(&u0, 0.0, 0.25, Control::None).unwrap();
            let expect = (-gamma * 0.25).exp() * u0.l2();
            prop_assert!((u.l2() - expect).abs() < 1e-10 * u0.l2());
        }
    }
}
