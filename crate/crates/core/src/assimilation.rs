//! Continuous data assimilation by nudging the low Fourier modes.
//!
//! A reference solution `u` is spun up toward the attractor, its first `m`
//! modes are recorded, and a second copy `w` is driven by
//! `-mu (P_m w - P_m u)`. The reference is integrated first and the nudged
//! copy consumes the stored observations, so the two runs never step
//! together.

use serde::Serialize;

use crate::bounds::{check_conditions, compute_bounds, BoundInputs, ConditionCheck};
use crate::error::{invalid, Error, Result};
use crate::functionals::psi;
use crate::integrator::{Control, Integrator, ModelParams, TrajectoryWindow};
use crate::spectral::{seeded_field, SpectralField};

/// Below this, `|delta|` is roundoff and rate fits are meaningless.
pub const DEFAULT_FLOOR_GUARD: f64 = 1e-11;

/// Fraction of a series treated as the initial transient by [`fit_decay`].
pub const TRANSIENT_FRACTION: f64 = 0.1;

/// Minimum number of usable samples for [`fit_decay`].
pub const MIN_FIT_SAMPLES: usize = 20;

/// How the nudged copy is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NudgedStart {
    /// Fresh seeded data, unrelated to the reference.
    Seeded(u64),
    /// A copy of the reference at the start of observation.
    Reference,
}

/// Seeded band-limited initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialData {
    pub max_mode: usize,
    pub h2_norm: f64,
}

impl Default for InitialData {
    fn default() -> Self {
        Self {
            max_mode: 8,
            h2_norm: 2.0,
        }
    }
}

/// One assimilation experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct AssimilationRun {
    /// Model of the nudged copy; the reference uses the same model with
    /// `mu = 0`.
    pub params: ModelParams,
    pub ref_seed: u64,
    pub nudged_start: NudgedStart,
    pub initial: InitialData,
    /// Free evolution of the reference before observation starts.
    pub spinup: f64,
    /// Integration steps between stored observations.
    pub obs_stride: usize,
    /// Length of the assimilation interval.
    pub horizon: f64,
}

impl AssimilationRun {
    pub fn new(params: ModelParams, ref_seed: u64, nudged_seed: u64) -> Self {
        Self {
            params,
            ref_seed,
            nudged_start: NudgedStart::Seeded(nudged_seed),
            initial: InitialData::default(),
            spinup: 50.0,
            obs_stride: 2,
            horizon: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(invalid(
                "horizon",
                format!("must be positive, got {}", self.horizon),
            ));
        }
        if !(self.spinup.is_finite() && self.spinup >= 0.0) {
            return Err(invalid(
                "spinup",
                format!("must be nonnegative, got {}", self.spinup),
            ));
        }
        if self.obs_stride == 0 {
            return Err(invalid("obs_stride", "must be at least 1"));
        }
        Ok(())
    }

    fn reference_params(&self) -> ModelParams {
        let mut p = self.params.clone();
        p.mu = 0.0;
        p
    }
}

/// Sign regime of `Psi(delta)` at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PsiCase {
    /// `Psi > 0` beyond tolerance.
    Nonnegative,
    /// `Psi < 0` beyond tolerance.
    Nonpositive,
    /// `|Psi|` within tolerance: a sign change point.
    Crossing,
}

impl PsiCase {
    /// Numeric label used in exported tables.
    pub fn label(self) -> u8 {
        match self {
            PsiCase::Nonnegative => 1,
            PsiCase::Nonpositive => 2,
            PsiCase::Crossing => 3,
        }
    }

    /// Classifies `psi` against the scale `|delta_x|^2`.
    pub fn classify(psi: f64, scale: f64) -> Self {
        let tol = 1e-9 * scale + f64::MIN_POSITIVE;
        if psi > tol {
            PsiCase::Nonnegative
        } else if psi < -tol {
            PsiCase::Nonpositive
        } else {
            PsiCase::Crossing
        }
    }
}

/// Sign behaviour of `Psi` over a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RunCase {
    /// `Psi >= 0` throughout.
    AlwaysNonnegative,
    /// `Psi <= 0` throughout.
    AlwaysNonpositive,
    /// Both signs occur.
    Alternating,
}

impl RunCase {
    pub fn label(self) -> u8 {
        match self {
            RunCase::AlwaysNonnegative => 1,
            RunCase::AlwaysNonpositive => 2,
            RunCase::Alternating => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSample {
    pub t: f64,
    pub dl2: f64,
    pub dh1: f64,
    pub dh2: f64,
    pub psi: f64,
    pub case: PsiCase,
}

/// Sign changes counted between consecutive non-crossing samples.
pub fn sign_changes(series: &[ErrorSample]) -> usize {
    let mut last = None;
    let mut count = 0;
    for s in series {
        if s.case == PsiCase::Crossing {
            continue;
        }
        if last.is_some_and(|c| c != s.case) {
            count += 1;
        }
        last = Some(s.case);
    }
    count
}

pub fn run_case(series: &[ErrorSample]) -> RunCase {
    let pos = series.iter().any(|s| s.case == PsiCase::Nonnegative);
    let neg = series.iter().any(|s| s.case == PsiCase::Nonpositive);
    match (pos, neg) {
        (true, true) => RunCase::Alternating,
        (false, true) => RunCase::AlwaysNonpositive,
        _ => RunCase::AlwaysNonnegative,
    }
}

/// Output of [`run_assimilation`].
#[derive(Debug, Clone)]
pub struct AssimilationResult {
    pub run: AssimilationRun,
    /// Reference trajectory over the observation interval.
    pub reference: TrajectoryWindow,
    /// `P_m u` at the same samples; the control of the nudged run.
    pub observations: TrajectoryWindow,
    pub nudged: TrajectoryWindow,
    pub errors: Vec<ErrorSample>,
    pub case: RunCase,
}

impl AssimilationResult {
    pub fn terminal_error(&self) -> f64 {
        self.errors.last().map_or(0.0, |e| e.dl2)
    }

    /// `(t, |delta|)` pairs.
    pub fn l2_series(&self) -> Vec<(f64, f64)> {
        self.errors.iter().map(|e| (e.t, e.dl2)).collect()
    }

    /// Largest `|P_m u|_{H^2}` over the observations; the quantity the
    /// synchronization result assumes below `rho`.
    pub fn observed_sup_h2(&self) -> f64 {
        self.observations.x_norm()
    }
}

/// Reference state after spin-up, from seeded data.
pub fn spun_up_state(
    params: &ModelParams,
    seed: u64,
    initial: InitialData,
    spinup: f64,
) -> Result<SpectralField> {
    let u0 = seeded_field(*params.grid(), seed, initial.max_mode, initial.h2_norm)?;
    if spinup == 0.0 {
        return Ok(u0);
    }
    let mut free = params.clone();
    free.mu = 0.0;
    Integrator::new(&free)?.advance(&u0, 0.0, spinup, Control::None)
}

pub fn error_series(
    nudged: &TrajectoryWindow,
    reference: &TrajectoryWindow,
) -> Result<Vec<ErrorSample>> {
    if nudged.len() != reference.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            got: nudged.len(),
        });
    }
    nudged
        .states()
        .iter()
        .zip(reference.states())
        .zip(nudged.times())
        .map(|((w, u), &t)| {
            let delta = w - u;
            let xi = w.lin_comb(0.5, u, 0.5)?;
            let p = psi(&delta, &xi)?;
            let n = delta.norms();
            Ok(ErrorSample {
                t,
                dl2: n.l2,
                dh1: n.h1,
                dh2: n.h2,
                psi: p,
                case: PsiCase::classify(p, n.h1 * n.h1),
            })
        })
        .collect()
}

pub fn run_assimilation(cfg: &AssimilationRun) -> Result<AssimilationResult> {
    cfg.validate()?;
    let ref_params = cfg.reference_params();
    let t0 = cfg.spinup;
    let t1 = cfg.spinup + cfg.horizon;
    let u_start = spun_up_state(&ref_params, cfg.ref_seed, cfg.initial, cfg.spinup)?;
    let reference =
        Integrator::new(&ref_params)?.integrate(&u_start, t0, t1, Control::None, cfg.obs_stride)?;
    let observations = reference.project_low(cfg.params.m);
    let w_start = match cfg.nudged_start {
        NudgedStart::Seeded(seed) => seeded_field(
            *cfg.params.grid(),
            seed,
            cfg.initial.max_mode,
            cfg.initial.h2_norm,
        )?,
        NudgedStart::Reference => u_start.clone(),
    };
    let control = if cfg.params.mu > 0.0 {
        Control::Window(&observations)
    } else {
        Control::None
    };
    let nudged =
        Integrator::new(&cfg.params)?.integrate(&w_start, t0, t1, control, cfg.obs_stride)?;
    let errors = error_series(&nudged, &reference)?;
    let case = run_case(&errors);
    Ok(AssimilationResult {
        run: cfg.clone(),
        reference,
        observations,
        nudged,
        errors,
        case,
    })
}

/// Exponential fit `|delta(t)| ~ exp(-rate t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    /// Log of the fitted prefactor.
    pub intercept: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    /// Smallest value over the last tenth of the series.
    pub floor: f64,
    pub samples: usize,
}

/// Least-squares slope of `log value` against `t`, after dropping the first
/// tenth of the series and everything from the first sample below
/// `floor_guard` on.
pub fn fit_decay(series: &[(f64, f64)], floor_guard: f64) -> Result<DecayFit> {
    let skip = (series.len() as f64 * TRANSIENT_FRACTION).ceil() as usize;
    let usable: Vec<(f64, f64)> = series
        .iter()
        .skip(skip)
        .take_while(|(_, v)| *v >= floor_guard)
        .copied()
        .collect();
    if usable.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            need: MIN_FIT_SAMPLES,
            have: usable.len(),
        });
    }
    if usable
        .iter()
        .any(|(t, v)| !(t.is_finite() && v.is_finite()))
    {
        return Err(invalid("series", "contains non-finite values"));
    }
    let n = usable.len() as f64;
    let ts: Vec<f64> = usable.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.1.ln()).collect();
    let mt = ts.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let stt: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    let sty: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sty / stt;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sty * sty / (stt * syy)).clamp(0.0, 1.0)
    };
    let tail = (series.len() / 10).max(1);
    let floor = series[series.len() - tail..]
        .iter()
        .fold(f64::INFINITY, |m, p| m.min(p.1));
    Ok(DecayFit {
        rate: -slope,
        intercept: my - slope * mt,
        window: (ts[0], ts[ts.len() - 1]),
        r_squared,
        floor,
        samples: usable.len(),
    })
}

/// Largest `value(t) exp(rate (t - t_a))` over the fit window, relative to
/// its value at `t_a`. Bounded means no sustained growth against `rate`.
pub fn envelope_ratio(series: &[(f64, f64)], fit: &DecayFit, rate: f64) -> f64 {
    let (ta, tb) = fit.window;
    let inside: Vec<&(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= ta && *t <= tb)
        .collect();
    let Some(first) = inside.first() else {
        return f64::NAN;
    };
    inside
        .iter()
        .map(|(t, v)| v * (rate * (t - ta)).exp() / first.1)
        .fold(0.0, f64::max)
}

/// `|delta(t*)| / (exp(-rate (t* - t0)) |delta(t0)|)` at the last sample
/// `t*` above `floor_guard`: how the error compares with pure decay at
/// `rate`.
pub fn decay_envelope(series: &[(f64, f64)], rate: f64, floor_guard: f64) -> Result<f64> {
    let (t0, d0) = *series
        .first()
        .ok_or(Error::TooFewSamples { need: 2, have: 0 })?;
    let Some(&(ts, ds)) = series.iter().rev().find(|(_, v)| *v >= floor_guard) else {
        return Err(Error::TooFewSamples { need: 1, have: 0 });
    };
    if d0 == 0.0 {
        return Err(invalid("series", "initial error is zero"));
    }
    Ok(ds / ((-rate * (ts - t0)).exp() * d0))
}

/// Centered-difference residual of the error equation
///
/// ```text
/// delta_t + (xi delta)_x + delta_xxx + gamma delta + eps delta_xxxx + mu P_m delta = 0
/// ```
///
/// at interior samples, each relative to the largest term. Exact only at
/// sample times, where the interpolated control equals `P_m u`.
pub fn delta_equation_residual(result: &AssimilationResult) -> Result<Vec<f64>> {
    let p = &result.run.params;
    let (w, u) = (&result.nudged, &result.reference);
    if w.len() < 3 {
        return Err(Error::TooFewSamples {
            need: 3,
            have: w.len(),
        });
    }
    let h = w.spacing().unwrap_or(1.0);
    let deltas: Vec<SpectralField> = w
        .states()
        .iter()
        .zip(u.states())
        .map(|(a, b)| a - b)
        .collect();
    let mut out = Vec::with_capacity(deltas.len() - 2);
    for i in 1..deltas.len() - 1 {
        let d = &deltas[i];
        let xi = w.states()[i].lin_comb(0.5, &u.states()[i], 0.5)?;
        let terms = [
            deltas[i + 1].lin_comb(0.5 / h, &deltas[i - 1], -0.5 / h)?,
            xi.dealias_product(d)?.derivative(1),
            d.derivative(3),
            d.scaled(p.gamma),
            d.derivative(4).scaled(p.epsilon),
            d.project_low(p.m).scaled(p.mu),
        ];
        let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.l2()));
        let mut sum = terms[0].clone();
        for t in &terms[1..] {
            sum = &sum + t;
        }
        out.push(if scale == 0.0 { 0.0 } else { sum.l2() / scale });
    }
    Ok(out)
}

/// Strong-nudging test of whether `m` observed modes determine the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeterminingModesReport {
    pub m: usize,
    pub mu: f64,
    pub initial_error: f64,
    pub terminal_error: f64,
    /// `|Q_m delta|` at the end of the run.
    pub terminal_high_error: f64,
    pub synchronized: bool,
    /// Theoretical determining-modes condition at this `m`, for comparison.
    pub cond4p: ConditionCheck,
}

/// Settings for [`determining_modes_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSettings {
    pub seeds: (u64, u64),
    pub initial: InitialData,
    pub spinup: f64,
    pub horizon: f64,
    pub obs_stride: usize,
    /// Terminal `|delta|` below which the copies count as synchronized.
    pub sync_tol: f64,
    /// Inputs for the theoretical condition; `gamma`, `length` and the
    /// forcing norms are overwritten from the model.
    pub bound_inputs: BoundInputs,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            seeds: (1, 2),
            initial: InitialData::default(),
            spinup: 20.0,
            horizon: 40.0,
            obs_stride: 5,
            sync_tol: 1e-9,
            bound_inputs: BoundInputs::reference(),
        }
    }
}

/// Spins two seeded states up freely, then nudges the second toward the
/// first's `m` low modes with gain `params.mu` (`m = 0` means no nudging).
pub fn determining_modes_probe(
    params: &ModelParams,
    m: usize,
    settings: &ProbeSettings,
) -> Result<DeterminingModesReport> {
    let mut p = params.clone();
    p.m = m;
    if m == 0 {
        p.mu = 0.0;
    }
    let w_start = spun_up_state(&p, settings.seeds.1, settings.initial, settings.spinup)?;
    let run = AssimilationRun {
        params: p.clone(),
        ref_seed: settings.seeds.0,
        nudged_start: NudgedStart::Reference,
        initial: settings.initial,
        spinup: settings.spinup,
        obs_stride: settings.obs_stride,
        horizon: settings.horizon,
    };
    run.validate()?;
    // Same as run_assimilation but with the nudged copy starting from the
    // second spun-up state.
    let ref_params = run.reference_params();
    let (t0, t1) = (settings.spinup, settings.spinup + settings.horizon);
    let u_start = spun_up_state(
        &ref_params,
        settings.seeds.0,
        settings.initial,
        settings.spinup,
    )?;
    let reference =
        Integrator::new(&ref_params)?.integrate(&u_start, t0, t1, Control::None, run.obs_stride)?;
    let observations = reference.project_low(m);
    let control = if p.mu > 0.0 {
        Control::Window(&observations)
    } else {
        Control::None
    };
    let w_end = Integrator::new(&p)?.advance(&w_start, t0, t1, control)?;
    let delta = &w_end - reference.last();

    let mut inputs = settings.bound_inputs.with_forcing(&p.forcing);
    inputs.gamma = p.gamma;
    let report = compute_bounds(&inputs)?;
    let cond4p = check_conditions(&report, &inputs, m.max(1) as u128).cond4p;
    let terminal_error = delta.l2();
    Ok(DeterminingModesReport {
        m,
        mu: p.mu,
        initial_error: (&w_start - &u_start).l2(),
        terminal_error,
        terminal_high_error: delta.project_high(m).l2(),
        synchronized: terminal_error < settings.sync_tol,
        cond4p,
    })
}

/// Smallest `m` in the sweep whose probe synchronized.
pub fn smallest_determining(reports: &[DeterminingModesReport]) -> Option<usize> {
    reports.iter().filter(|r| r.synchronized).map(|r| r.m).min()
}
