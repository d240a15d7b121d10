//! Steady states, the W-map and the determining-form flow.
//!
//! The W-map sends a low-mode trajectory `v` to the bounded solution of the
//! nudged equation driven by `v`. It is approximated by integrating from two
//! unrelated states over a spin-up prefix; their disagreement on the output
//! window certifies the approximation. The determining-form flow is stepped
//! along the invariant line through `P_m u*` and `v0`, which reduces it to a
//! scalar equation for the line coordinate `theta`.

use num_complex::Complex64;
use serde::Serialize;

use crate::assimilation::InitialData;
use crate::error::{invalid, Error, Result};
use crate::integrator::{Control, Integrator, ModelParams, TrajectoryWindow};
use crate::krylov::gmres;
use crate::spectral::{seeded_field, MeanPolicy, SpectralField};

/// Newton and Krylov settings for [`solve_steady_state`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyOptions {
    /// Target `|F(u)|`.
    pub tol: f64,
    pub max_newton: usize,
    /// Relative tolerance of each inner linear solve.
    pub krylov_tol: f64,
    pub krylov_restart: usize,
    pub krylov_max: usize,
    /// Constant in the third-derivative bound check.
    pub c_universal: f64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_newton: 50,
            krylov_tol: 1e-3,
            krylov_restart: 60,
            krylov_max: 600,
            c_universal: 1.0,
        }
    }
}

/// A-priori bounds checked on a converged steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyBoundChecks {
    pub l2: f64,
    /// `|f| / gamma`.
    pub l2_bound: f64,
    pub l2_ok: bool,
    /// `|u_xxx|^2`.
    pub third_sq: f64,
    /// `2 c R0^6 + 16 |f|^2` with `R0 = |f| / gamma`.
    pub third_sq_bound: f64,
    pub third_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub u_star: SpectralField,
    pub residual_l2: f64,
    pub newton_iterations: usize,
    pub krylov_iterations: usize,
    pub bounds: SteadyBoundChecks,
}

/// Slack allowed in the bound checks.
pub const BOUND_SLACK: f64 = 1e-12;

fn check_steady_params(params: &ModelParams) -> Result<()> {
    params.validate()?;
    if !(params.gamma > 0.0) {
        return Err(invalid("gamma", "steady solves need positive damping"));
    }
    if !params.forcing.is_low_modes(params.grid().cutoff()) {
        return Err(invalid("forcing", "must lie below the dealias cutoff"));
    }
    Ok(())
}

/// `1/2 d/dx P_K(u^2) + u_xxx + gamma u + eps u_xxxx - f`.
pub fn steady_residual(u: &SpectralField, params: &ModelParams) -> Result<SpectralField> {
    u.check_grid(&params.forcing)?;
    let mut r = &u.dealias_product(u)?.derivative(1).scaled(0.5) + &u.derivative(3);
    r = r.lin_comb(1.0, u, params.gamma)?;
    if params.epsilon > 0.0 {
        r = r.lin_comb(1.0, &u.derivative(4), params.epsilon)?;
    }
    Ok(&r - &params.forcing)
}

/// `d/dx P_K(u h) + h_xxx + gamma h + eps h_xxxx`.
fn jacobian_apply(
    u: &SpectralField,
    h: &SpectralField,
    params: &ModelParams,
) -> Result<SpectralField> {
    let mut r = &u.dealias_product(h)?.derivative(1) + &h.derivative(3);
    r = r.lin_comb(1.0, h, params.gamma)?;
    if params.epsilon > 0.0 {
        r = r.lin_comb(1.0, &h.derivative(4), params.epsilon)?;
    }
    Ok(r)
}

/// Real and imaginary parts of modes `1..=K`.
fn pack(f: &SpectralField, cutoff: usize) -> Vec<f64> {
    f.coeffs()[1..=cutoff]
        .iter()
        .flat_map(|c| [c.re, c.im])
        .collect()
}

fn unpack(z: &[f64], template: &SpectralField) -> SpectralField {
    let mut coeffs = vec![Complex64::default(); template.grid().modes()];
    for (k, pair) in z.chunks_exact(2).enumerate() {
        coeffs[k + 1] = Complex64::new(pair[0], pair[1]);
    }
    SpectralField::from_raw(*template.grid(), coeffs, MeanPolicy::EnforcedZero)
}

/// Inverse of the linear part `gamma + eps k^4 - i k^3`, per mode.
fn linear_inverse(params: &ModelParams) -> Vec<Complex64> {
    let g = params.grid();
    (1..=g.cutoff())
        .map(|k| {
            let kt = g.wavenumber(k);
            Complex64::new(params.gamma + params.epsilon * kt.powi(4), -kt.powi(3)).inv()
        })
        .collect()
}

/// Solution of the linear problem `u_xxx + gamma u + eps u_xxxx = f`.
pub fn linear_steady_state(params: &ModelParams) -> Result<SpectralField> {
    check_steady_params(params)?;
    let inv = linear_inverse(params);
    let mut coeffs = vec![Complex64::default(); params.grid().modes()];
    for (k, d) in inv.iter().enumerate() {
        coeffs[k + 1] = params.forcing.coeffs()[k + 1] * d;
    }
    Ok(SpectralField::from_raw(
        *params.grid(),
        coeffs,
        MeanPolicy::EnforcedZero,
    ))
}

/// Inexact Newton with GMRES inner solves and a backtracking line search.
/// Returns the first root found from `guess` (default: the linear solve).
pub fn solve_steady_state(
    params: &ModelParams,
    guess: Option<&SpectralField>,
    opts: &SteadyOptions,
) -> Result<SteadyState> {
    check_steady_params(params)?;
    let cutoff = params.grid().cutoff();
    let mut u = match guess {
        Some(g) => {
            g.check_grid(&params.forcing)?;
            g.project_low(cutoff).with_policy(MeanPolicy::EnforcedZero)
        }
        None => linear_steady_state(params)?,
    };
    let inv = linear_inverse(params);
    let precond = |v: &[f64], out: &mut [f64]| {
        for ((o, x), d) in out.chunks_exact_mut(2).zip(v.chunks_exact(2)).zip(&inv) {
            let c = Complex64::new(x[0], x[1]) * d;
            o[0] = c.re;
            o[1] = c.im;
        }
    };
    let mut r = steady_residual(&u, params)?;
    let mut rnorm = r.l2();
    let mut krylov_total = 0;
    let mut newton = 0;
    while rnorm >= opts.tol {
        if newton >= opts.max_newton {
            return Err(Error::NonConvergence {
                what: "Newton iteration",
                iterations: newton,
                residual: rnorm,
            });
        }
        newton += 1;
        let rhs: Vec<f64> = pack(&r, cutoff).into_iter().map(|x| -x).collect();
        let mut failure = None;
        let apply = |z: &[f64], out: &mut [f64]| {
            let h = unpack(z, &u);
            match jacobian_apply(&u, &h, params) {
                Ok(jh) => out.copy_from_slice(&pack(&jh, cutoff)),
                Err(e) => {
                    failure.get_or_insert(e);
                    out.fill(0.0);
                }
            }
        };
        let lin = gmres(
            apply,
            precond,
            &rhs,
            opts.krylov_tol,
            opts.krylov_restart,
            opts.krylov_max,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        krylov_total += lin.iterations;
        if !lin.rel_residual.is_finite() || lin.rel_residual >= 1.0 {
            return Err(Error::Singular(format!(
                "Krylov solve made no progress (relative residual {:e})",
                lin.rel_residual
            )));
        }
        let step = unpack(&lin.x, &u);
        let mut alpha = 1.0;
        loop {
            let trial = u.lin_comb(1.0, &step, alpha)?;
            let tr = steady_residual(&trial, params)?;
            let tn = tr.l2();
            if tn.is_finite() && tn <= (1.0 - 1e-4 * alpha) * rnorm {
                u = trial;
                r = tr;
                rnorm = tn;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-6 {
                // at roundoff level the full step cannot improve further
                if rnorm < opts.tol {
                    break;
                }
                return Err(Error::NonConvergence {
                    what: "Newton line search",
                    iterations: newton,
                    residual: rnorm,
                });
            }
        }
    }
    let bounds = steady_bound_checks(&u, params, opts.c_universal);
    Ok(SteadyState {
        u_star: u,
        residual_l2: rnorm,
        newton_iterations: newton,
        krylov_iterations: krylov_total,
        bounds,
    })
}

pub fn steady_bound_checks(
    u: &SpectralField,
    params: &ModelParams,
    c_universal: f64,
) -> SteadyBoundChecks {
    let f = params.forcing.l2();
    let r0 = f / params.gamma;
    let l2 = u.l2();
    let third_sq = u.derivative(3).l2().powi(2);
    let third_sq_bound = 2.0 * c_universal * r0.powi(6) + 16.0 * f * f;
    SteadyBoundChecks {
        l2,
        l2_bound: r0,
        l2_ok: l2 <= r0 + BOUND_SLACK,
        third_sq,
        third_sq_bound,
        third_ok: third_sq <= third_sq_bound * (1.0 + BOUND_SLACK),
    }
}

/// `|S(T) u* - u*|_{H^2}` for the unnudged flow `S`.
pub fn verify_steady_by_flow(
    u_star: &SpectralField,
    params: &ModelParams,
    horizon: f64,
) -> Result<f64> {
    let mut free = params.clone();
    free.mu = 0.0;
    let end = Integrator::new(&free)?.advance(u_star, 0.0, horizon, Control::None)?;
    Ok((&end - u_star).h2())
}

/// Settings of the two-run W-map approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WMapSettings {
    pub seeds: (u64, u64),
    pub initial: InitialData,
    /// Length of the prefix of `v` spent converging onto the bounded
    /// solution; must be a multiple of the sample spacing of `v`.
    pub spinup: f64,
    /// Largest acceptable two-run gap in H2.
    pub tol: f64,
}

impl Default for WMapSettings {
    fn default() -> Self {
        Self {
            seeds: (101, 202),
            initial: InitialData {
                max_mode: 8,
                h2_norm: 1.0,
            },
            spinup: 40.0,
            tol: 1e-8,
        }
    }
}

/// Approximation of `W(v)` on the part of `v`'s span after the spin-up.
#[derive(Debug, Clone)]
pub struct WApproximation {
    pub window: TrajectoryWindow,
    /// Largest H2 distance between the two runs over the window.
    pub gap: f64,
}

/// Integrates the nudged equation driven by `v` from two seeded states and
/// returns the first on `[v.start + spinup, v.end]`.
pub fn approximate_w(
    v: &TrajectoryWindow,
    params: &ModelParams,
    settings: &WMapSettings,
) -> Result<WApproximation> {
    params.validate()?;
    let h = v
        .spacing()
        .ok_or(Error::TooFewSamples { need: 2, have: 1 })?;
    let every = (h / params.dt).round();
    if every < 1.0 || (every * params.dt - h).abs() > 1e-9 * h {
        return Err(invalid(
            "dt",
            "sample spacing of v must be a multiple of the step",
        ));
    }
    let prefix = (settings.spinup / h).round();
    if (prefix * h - settings.spinup).abs() > 1e-9 * h.max(settings.spinup) {
        return Err(invalid(
            "spinup",
            "must be a multiple of the sample spacing of v",
        ));
    }
    let t_a = v.start() + settings.spinup;
    if !(t_a < v.end() - 0.5 * h) {
        return Err(invalid("spinup", "leaves no window inside the span of v"));
    }
    let control = Control::Window(v);
    let grid = *params.grid();
    let run = |seed: u64| -> Result<TrajectoryWindow> {
        let w0 = seeded_field(
            grid,
            seed,
            settings.initial.max_mode,
            settings.initial.h2_norm,
        )?;
        let mut integ = Integrator::new(params)?;
        let start = if settings.spinup > 0.0 {
            integ.advance(&w0, v.start(), t_a, control)?
        } else {
            w0
        };
        integ.integrate(&start, t_a, v.end(), control, every as usize)
    };
    let (first, second) = std::thread::scope(|s| {
        let other = s.spawn(|| run(settings.seeds.1));
        let first = run(settings.seeds.0);
        (first, other.join().expect("W-map worker panicked"))
    });
    let (first, second) = (first?, second?);
    let gap = first
        .states()
        .iter()
        .zip(second.states())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).h2()));
    if !(gap <= settings.tol) {
        return Err(Error::WMapGap {
            gap,
            tol: settings.tol,
        });
    }
    Ok(WApproximation { window: first, gap })
}

/// `|v - P_m W(v)|_X^2` on the certified window.
#[derive(Debug, Clone)]
pub struct DFormRhs {
    pub magnitude: f64,
    pub gap: f64,
    pub w: WApproximation,
}

pub fn dform_rhs_magnitude(
    v: &TrajectoryWindow,
    params: &ModelParams,
    settings: &WMapSettings,
) -> Result<DFormRhs> {
    let w = approximate_w(v, params, settings)?;
    let tail = v.tail_from(w.window.start())?;
    if tail.len() != w.window.len() {
        return Err(Error::LengthMismatch {
            expected: w.window.len(),
            got: tail.len(),
        });
    }
    let sup = tail
        .states()
        .iter()
        .zip(w.window.states())
        .fold(0.0f64, |m, (a, b)| {
            m.max((a - &b.project_low(params.m)).h2())
        });
    Ok(DFormRhs {
        magnitude: sup * sup,
        gap: w.gap,
        w,
    })
}

/// Settings of [`integrate_determining_form`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DFormSettings {
    pub w_map: WMapSettings,
    /// Largest step in `tau`.
    pub d_tau: f64,
    pub tau_end: f64,
    /// Target decrease of `log theta` per step; steps are `min(d_tau, kappa / rho)`.
    pub kappa: f64,
    /// Stop once `rho` falls below this.
    pub rho_stop: f64,
    /// Terminal `theta` at or below this counts as having reached `P_m u*`.
    pub theta_zero: f64,
    pub max_steps: usize,
    /// Radius proxy for the ball condition on `v0`; logged, not enforced.
    pub r_proxy: Option<f64>,
}

impl Default for DFormSettings {
    fn default() -> Self {
        Self {
            w_map: WMapSettings::default(),
            d_tau: 1e12,
            tau_end: 1e15,
            kappa: 0.5,
            rho_stop: 1e-8,
            theta_zero: 1e-2,
            max_steps: 200,
            r_proxy: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DFormState {
    pub tau: f64,
    pub theta: f64,
    pub rho: f64,
    /// Re-evaluated `|v - P_m u* - theta (v0 - P_m u*)|_X` for the
    /// assembled W-map input.
    pub collinearity: f64,
    /// Two-run certificate of the W-map evaluation at this state.
    pub gap: f64,
    /// Step halvings needed to reach this state.
    pub halvings: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DFormOutcome {
    /// `rho` dropped below the stop level with `theta` near zero.
    ReachedSteady,
    /// `rho` dropped below the stop level at a point away from `P_m u*`.
    StationaryOnLine,
    /// `tau_end` or the step budget ran out first.
    Unfinished,
}

#[derive(Debug, Clone)]
pub struct DFormRun {
    pub states: Vec<DFormState>,
    pub outcome: DFormOutcome,
    pub v0: TrajectoryWindow,
    pub u_star_low: SpectralField,
    /// `|v0 - P_m u*|_X` and whether it is below `3 r_proxy`.
    pub ball: (f64, Option<bool>),
    /// `W(v)` at the terminal state.
    pub terminal_w: TrajectoryWindow,
}

impl DFormRun {
    pub fn terminal(&self) -> &DFormState {
        self.states
            .last()
            .expect("a run records at least one state")
    }
}

/// `P_m u* + theta (v0 - P_m u*)` sample by sample.
fn line_point(
    v0: &TrajectoryWindow,
    base: &SpectralField,
    theta: f64,
    m: usize,
) -> Result<(TrajectoryWindow, f64)> {
    let states = v0
        .states()
        .iter()
        .map(|s| base.lin_comb(1.0 - theta, s, theta))
        .collect::<Result<Vec<_>>>()?;
    let window = TrajectoryWindow::low_modes(v0.times().to_vec(), states, m)?;
    let collinearity = window
        .states()
        .iter()
        .zip(v0.states())
        .map(|(v, s)| (&(v - base) - &(s - base).scaled(theta)).h2())
        .fold(0.0, f64::max);
    Ok((window, collinearity))
}

/// Steps `d theta / d tau = -rho(theta) theta` along the invariant line with
/// a trapezoidal exponent, halving the step whenever `rho` changes by more
/// than a factor 4 across it.
pub fn integrate_determining_form(
    v0: &TrajectoryWindow,
    params: &ModelParams,
    u_star: &SpectralField,
    settings: &DFormSettings,
) -> Result<DFormRun> {
    if !(settings.d_tau > 0.0 && settings.tau_end > 0.0 && settings.kappa > 0.0) {
        return Err(invalid("d_tau", "step controls must be positive"));
    }
    let m = params.m;
    let base = u_star.project_low(m);
    let v0 = v0.project_low(m);
    let ball_dist = v0
        .states()
        .iter()
        .fold(0.0f64, |a, s| a.max((s - &base).h2()));
    let ball = (ball_dist, settings.r_proxy.map(|r| ball_dist < 3.0 * r));
    let eval = |theta: f64| -> Result<(f64, f64, f64, TrajectoryWindow)> {
        let (v, coll) = line_point(&v0, &base, theta, m)?;
        let rhs = dform_rhs_magnitude(&v, params, &settings.w_map)?;
        Ok((rhs.magnitude, coll, rhs.gap, rhs.w.window))
    };
    let (mut theta, mut tau) = (1.0f64, 0.0f64);
    let (mut rho, mut coll, mut gap, mut w_now) = eval(theta)?;
    let mut halvings = 0u32;
    let mut states = Vec::new();
    let outcome = loop {
        states.push(DFormState {
            tau,
            theta,
            rho,
            collinearity: coll,
            gap,
            halvings,
        });
        if rho < settings.rho_stop {
            break if theta <= settings.theta_zero {
                DFormOutcome::ReachedSteady
            } else {
                DFormOutcome::StationaryOnLine
            };
        }
        if tau >= settings.tau_end || states.len() > settings.max_steps {
            break DFormOutcome::Unfinished;
        }
        let mut h = settings
            .d_tau
            .min(settings.kappa / rho)
            .min(settings.tau_end - tau);
        halvings = 0;
        let next = loop {
            let predicted = theta * (-rho * h).exp();
            let (rho_p, ..) = eval(predicted)?;
            let ratio = rho_p / rho;
            if (0.25..=4.0).contains(&ratio) || halvings >= 30 {
                break theta * (-0.5 * (rho + rho_p) * h).exp();
            }
            h *= 0.5;
            halvings += 1;
        };
        if !(0.0..=1.0 + 1e-12).contains(&next) || next > theta + 1e-12 {
            return Err(Error::ThetaOutOfRange(next));
        }
        theta = next;
        tau += h;
        (rho, coll, gap, w_now) = eval(theta)?;
    };
    Ok(DFormRun {
        states,
        outcome,
        v0,
        u_star_low: base,
        ball,
        terminal_w: w_now,
    })
}

/// Centered-difference residual of the unnudged equation
///
/// ```text
/// u_t + 1/2 (P_K u^2)_x + u_xxx + gamma u + eps u_xxxx - f = 0
/// ```
///
/// at interior samples, each relative to the largest term.
pub fn kdv_residual(window: &TrajectoryWindow, params: &ModelParams) -> Result<Vec<f64>> {
    if window.len() < 3 {
        return Err(Error::TooFewSamples {
            need: 3,
            have: window.len(),
        });
    }
    let h = window.spacing().unwrap_or(1.0);
    let s = window.states();
    (1..s.len() - 1)
        .map(|i| {
            let u = &s[i];
            let terms = [
                s[i + 1].lin_comb(0.5 / h, &s[i - 1], -0.5 / h)?,
                u.dealias_product(u)?.derivative(1).scaled(0.5),
                u.derivative(3),
                u.scaled(params.gamma),
                u.derivative(4).scaled(params.epsilon),
                params.forcing.scaled(-1.0),
            ];
            let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.l2()));
            let mut sum = terms[0].clone();
            for t in &terms[1..] {
                sum = &sum + t;
            }
            Ok(if scale == 0.0 { 0.0 } else { sum.l2() / scale })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::GridSpec;
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(2.0 * PI, n).unwrap()
    }

    fn params_with(f: SpectralField, gamma: f64) -> ModelParams {
        ModelParams::new(f, gamma, 1e-3)
    }

    fn desk(n: usize) -> ModelParams {
        let f = SpectralField::from_fn(grid(n), |x| x.cos() + 0.3 * (2.0 * x).sin()).unwrap();
        params_with(f, 0.5)
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let p = params_with(SpectralField::zeros(grid(32)), 1.0);
        let s = solve_steady_state(&p, None, &SteadyOptions::default()).unwrap();
        assert_eq!(s.u_star.l2(), 0.0);
        assert_eq!(s.newton_iterations, 0);
        assert_eq!(verify_steady_by_flow(&s.u_star, &p, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn weak_forcing_matches_linear_solve() {
        let a = 1e-3;
        let f = SpectralField::from_fn(grid(32), |x| a * x.cos()).unwrap();
        let p = params_with(f, 1.0);
        let s = solve_steady_state(&p, None, &SteadyOptions::default()).unwrap();
        assert!(s.residual_l2 < 1e-12);
        let lin = linear_steady_state(&p).unwrap();
        let diff = (&s.u_star - &lin).l2();
        // the correction is quadratic in the amplitude
        assert!(diff < 10.0 * a * a, "{diff}");
        assert!(diff > 0.0);
    }

    #[test]
    fn desk_steady_state_checks() {
        let p = desk(64);
        let s = solve_steady_state(&p, None, &SteadyOptions::default()).unwrap();
        assert!(s.residual_l2 < 1e-12);
        assert!(s.bounds.l2_ok && s.bounds.third_ok, "{:?}", s.bounds);
        assert!(verify_steady_by_flow(&s.u_star, &p, 10.0).unwrap() < 1e-8);
    }

    #[test]
    fn guess_off_grid_is_rejected() {
        let p = desk(32);
        let other = SpectralField::zeros(grid(64));
        assert!(matches!(
            solve_steady_state(&p, Some(&other), &SteadyOptions::default()),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let p = desk(32);
        let u = seeded_field(grid(32), 3, 5, 1.0).unwrap();
        let h = seeded_field(grid(32), 4, 5, 1.0).unwrap();
        let eps = 1e-6;
        let plus = steady_residual(&u.lin_comb(1.0, &h, eps).unwrap(), &p).unwrap();
        let minus = steady_residual(&u.lin_comb(1.0, &h, -eps).unwrap(), &p).unwrap();
        let fd = plus.lin_comb(0.5 / eps, &minus, -0.5 / eps).unwrap();
        let exact = jacobian_apply(&u, &h, &p).unwrap();
        assert!((&fd - &exact).l2() < 1e-6 * exact.l2());
    }

    fn small_w_settings() -> WMapSettings {
        WMapSettings::default()
    }

    #[test]
    fn w_of_steady_observation_is_steady_state() {
        let p0 = desk(32);
        let s = solve_steady_state(&p0, None, &SteadyOptions::default()).unwrap();
        let p = p0.with_nudging(10.0, 4);
        let v = TrajectoryWindow::constant(&s.u_star.project_low(4), 0.0, 42.0, 43).unwrap();
        let w = approximate_w(&v, &p, &small_w_settings()).unwrap();
        assert_eq!(w.window.len(), 3);
        assert!(w.gap < 1e-8);
        for st in w.window.states() {
            assert!((st - &s.u_star).h2() < 1e-8);
        }
        let rhs = dform_rhs_magnitude(&v, &p, &small_w_settings()).unwrap();
        assert!(rhs.magnitude < 1e-16);
    }

    #[test]
    fn w_of_zero_without_forcing_is_zero() {
        let p = params_with(SpectralField::zeros(grid(32)), 0.5).with_nudging(100.0, 8);
        let v = TrajectoryWindow::constant(&SpectralField::zeros(grid(32)), 0.0, 42.0, 43).unwrap();
        let w = approximate_w(&v, &p, &small_w_settings()).unwrap();
        assert!(w.window.states().iter().all(|s| s.h2() < 1e-8));
    }

    #[test]
    fn w_gap_above_tolerance_is_an_error() {
        let p = desk(32).with_nudging(10.0, 4);
        let v = TrajectoryWindow::constant(&SpectralField::zeros(grid(32)), 0.0, 3.0, 4).unwrap();
        let settings = WMapSettings {
            spinup: 1.0,
            ..WMapSettings::default()
        };
        assert!(matches!(
            approximate_w(&v, &p, &settings),
            Err(Error::WMapGap { .. })
        ));
    }

    #[test]
    fn rhs_envelope_for_perturbed_input() {
        let p0 = desk(32);
        let s = solve_steady_state(&p0, None, &SteadyOptions::default()).unwrap();
        let p = p0.with_nudging(10.0, 4);
        let pert = SpectralField::from_fn(grid(32), |x| 0.05 * (2.0 * x).cos()).unwrap();
        let a = pert.h2();
        let v =
            TrajectoryWindow::constant(&(&s.u_star.project_low(4) + &pert), 0.0, 42.0, 43).unwrap();
        let rhs = dform_rhs_magnitude(&v, &p, &small_w_settings()).unwrap();
        assert!(rhs.magnitude > 0.0);
        assert!(
            rhs.magnitude <= (a + rhs.gap).powi(2) * 1.000001,
            "{} vs {}",
            rhs.magnitude,
            a * a
        );
    }

    #[test]
    fn determining_form_from_fixed_point_is_constant() {
        let p0 = desk(32);
        let s = solve_steady_state(&p0, None, &SteadyOptions::default()).unwrap();
        let p = p0.with_nudging(10.0, 4);
        let v0 = TrajectoryWindow::constant(&s.u_star.project_low(4), 0.0, 42.0, 43).unwrap();
        let run = integrate_determining_form(
            &v0,
            &p,
            &s.u_star,
            &DFormSettings {
                w_map: small_w_settings(),
                ..DFormSettings::default()
            },
        )
        .unwrap();
        assert_eq!(run.states.len(), 1);
        assert_eq!(run.terminal().theta, 1.0);
        assert_eq!(run.outcome, DFormOutcome::StationaryOnLine);
    }

    #[test]
    fn determining_form_theta_decreases() {
        let p0 = desk(32);
        let s = solve_steady_state(&p0, None, &SteadyOptions::default()).unwrap();
        let p = p0.with_nudging(10.0, 4);
        let pert =
            SpectralField::from_fn(grid(32), |x| 0.2 * x.sin() - 0.1 * (3.0 * x).cos()).unwrap();
        let v0 =
            TrajectoryWindow::constant(&(&s.u_star.project_low(4) + &pert), 0.0, 42.0, 43).unwrap();
        let run = integrate_determining_form(
            &v0,
            &p,
            &s.u_star,
            &DFormSettings {
                w_map: small_w_settings(),
                max_steps: 6,
                ..DFormSettings::default()
            },
        )
        .unwrap();
        assert!(run.states.len() > 3);
        for w in run.states.windows(2) {
            assert!(w[1].theta < w[0].theta);
            assert!(w[1].tau > w[0].tau);
        }
        assert!(run.states.iter().all(|s| s.collinearity < 1e-10));
    }

    #[test]
    fn kdv_residual_vanishes_on_steady_window_and_is_second_order() {
        let p = desk(32);
        let s = solve_steady_state(&p, None, &SteadyOptions::default()).unwrap();
        let w = TrajectoryWindow::constant(&s.u_star, 0.0, 1.0, 11).unwrap();
        assert!(kdv_residual(&w, &p).unwrap().iter().all(|r| *r < 1e-12));
        let u0 = seeded_field(grid(32), 9, 3, 0.5).unwrap();
        let coarse = Integrator::new(&p)
            .unwrap()
            .integrate(&u0, 0.0, 0.08, Control::None, 4)
            .unwrap();
        let fine = Integrator::new(&p)
            .unwrap()
            .integrate(&u0, 0.0, 0.08, Control::None, 2)
            .unwrap();
        let rc = kdv_residual(&coarse, &p)
            .unwrap()
            .into_iter()
            .fold(0.0, f64::max);
        let rf = kdv_residual(&fine, &p)
            .unwrap()
            .into_iter()
            .fold(0.0, f64::max);
        assert!(rc / rf > 3.0 && rc / rf < 5.0, "{rc} {rf}");
    }
}
