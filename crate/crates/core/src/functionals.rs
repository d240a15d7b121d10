//! Energy-type functionals built from the Hamiltonian structure of KdV and
//! the inequalities they satisfy.
//!
//! Cubic and quartic integrands are evaluated on a 2x oversampled grid, which
//! integrates them exactly for dealiased fields.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{Control, ModelParams, TrajectoryWindow};
use crate::spectral::SpectralField;

/// Absolute part of the tolerance applied to inequality slacks.
pub const INEQUALITY_ABS_TOL: f64 = 1e-8;
/// Relative part of the tolerance applied to inequality slacks.
pub const INEQUALITY_REL_TOL: f64 = 1e-10;

/// True if `slack >= -(abs + rel * scale)`.
pub fn slack_ok(slack: f64, scale: f64) -> bool {
    slack >= -(INEQUALITY_ABS_TOL + INEQUALITY_REL_TOL * scale.abs())
}

const OVERSAMPLING: usize = 2;

fn fine(w: &SpectralField) -> Vec<f64> {
    w.samples_oversampled(OVERSAMPLING)
}

fn integrate_samples(w: &SpectralField, values: impl Iterator<Item = f64>) -> f64 {
    let n = w.grid().points() * OVERSAMPLING;
    values.sum::<f64>() * w.grid().length() / n as f64
}

/// `int (w_x^2 - w^3 / 3)`.
pub fn phi1(w: &SpectralField) -> f64 {
    let cubic = integrate_samples(w, fine(w).into_iter().map(|v| v * v * v));
    w.h1().powi(2) - cubic / 3.0
}

/// `int (9/5 w_xx^2 - 3 w w_x^2 + w^4 / 4)`.
pub fn phi2(w: &SpectralField) -> f64 {
    let (u, ux) = (fine(w), fine(&w.derivative(1)));
    let mixed = integrate_samples(w, u.iter().zip(&ux).map(|(a, b)| a * b * b));
    let quartic = integrate_samples(w, u.iter().map(|a| a.powi(4)));
    1.8 * w.h2().powi(2) - 3.0 * mixed + 0.25 * quartic
}

/// `int (delta_x^2 - xi delta^2)`.
pub fn psi(delta: &SpectralField, xi: &SpectralField) -> Result<f64> {
    delta.check_grid(xi)?;
    let (d, x) = (fine(delta), fine(xi));
    let weighted = integrate_samples(delta, d.iter().zip(&x).map(|(a, b)| b * a * a));
    Ok(delta.h1().powi(2) - weighted)
}

/// Slack of `|w_x|^2 <= 2 Phi(w) + 2 |w|^{10/3}`.
pub fn h1_from_phi1_slack(w: &SpectralField) -> f64 {
    2.0 * phi1(w) + 2.0 * w.l2().powf(10.0 / 3.0) - w.h1().powi(2)
}

/// Slack of `|w_x|^2 <= 2 Phi(w) + 2 r0^{10/3}` for a proxy `r0 >= |w|`.
pub fn h1_from_phi1_slack_with_bound(w: &SpectralField, r0: f64) -> f64 {
    2.0 * phi1(w) + 2.0 * r0.powf(10.0 / 3.0) - w.h1().powi(2)
}

/// Slack of `|delta_x|^2 <= Psi(delta) + r_inf |delta|^2`; requires
/// `r_inf >= sup |xi|`.
pub fn psi_lower_slack(delta: &SpectralField, xi: &SpectralField, r_inf: f64) -> Result<f64> {
    let sup = xi.linf();
    if r_inf < sup * (1.0 - 1e-12) {
        return Err(Error::SupProxyTooSmall {
            given: r_inf,
            actual: sup,
        });
    }
    Ok(psi(delta, xi)? + r_inf * delta.l2().powi(2) - delta.h1().powi(2))
}

/// Slack of `|w_xx|^2 <= phi(w) + 45/64 a^3 b` with `a >= |w|`, `b >= |w_x|`.
pub fn phi2_lower_slack(w: &SpectralField, a: f64, b: f64) -> f64 {
    phi2(w) + 45.0 / 64.0 * a.powi(3) * b - w.h2().powi(2)
}

/// First variation of [`phi1`] at `w` along `h`: `int (2 w_x h_x - w^2 h)`.
pub fn phi1_variation(w: &SpectralField, h: &SpectralField) -> Result<f64> {
    w.check_grid(h)?;
    let (u, v) = (fine(w), fine(h));
    let cubic = integrate_samples(w, u.iter().zip(&v).map(|(a, b)| a * a * b));
    Ok(2.0 * w.derivative(1).inner(&h.derivative(1))? - cubic)
}

/// First variation of [`phi2`]:
/// `int (18/5 w_xx h_xx - 3 h w_x^2 - 6 w w_x h_x + w^3 h)`.
pub fn phi2_variation(w: &SpectralField, h: &SpectralField) -> Result<f64> {
    w.check_grid(h)?;
    let (u, ux) = (fine(w), fine(&w.derivative(1)));
    let (v, vx) = (fine(h), fine(&h.derivative(1)));
    let n = u.len();
    let rest = integrate_samples(
        w,
        (0..n).map(|j| {
            -3.0 * v[j] * ux[j] * ux[j] - 6.0 * u[j] * ux[j] * vx[j] + u[j].powi(3) * v[j]
        }),
    );
    Ok(3.6 * w.derivative(2).inner(&h.derivative(2))? + rest)
}

/// First variation of [`psi`] in `delta`: `int (2 delta_x h_x - 2 xi delta h)`.
pub fn psi_variation(delta: &SpectralField, xi: &SpectralField, h: &SpectralField) -> Result<f64> {
    delta.check_grid(xi)?;
    delta.check_grid(h)?;
    let (d, x, v) = (fine(delta), fine(xi), fine(h));
    let n = d.len();
    let weighted = integrate_samples(delta, (0..n).map(|j| x[j] * d[j] * v[j]));
    Ok(2.0 * delta.derivative(1).inner(&h.derivative(1))? - 2.0 * weighted)
}

/// Functionals and inequality slacks at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FunctionalSample {
    pub t: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// `Psi(w - u)` with `xi = (w + u)/2`, when a reference run is given.
    pub psi: Option<f64>,
    pub h1_bound_slack: f64,
    pub h2_bound_slack: f64,
    pub psi_bound_slack: Option<f64>,
}

/// Evaluates the functionals along `traj`. The phi-bound uses the run's
/// largest `|w|` and `|w_x|`; the Psi-bound uses the largest sampled
/// `sup |xi|` as its sup-norm proxy.
pub fn functional_series(
    traj: &TrajectoryWindow,
    reference: Option<&TrajectoryWindow>,
) -> Result<Vec<FunctionalSample>> {
    let a = traj.norms().iter().fold(0.0f64, |m, n| m.max(n.l2));
    let b = traj.norms().iter().fold(0.0f64, |m, n| m.max(n.h1));
    let pairs = match reference {
        Some(r) => {
            if r.len() != traj.len() {
                return Err(Error::LengthMismatch {
                    expected: traj.len(),
                    got: r.len(),
                });
            }
            let mut out = Vec::with_capacity(r.len());
            for (w, u) in traj.states().iter().zip(r.states()) {
                out.push((w - u, w.lin_comb(0.5, u, 0.5)?));
            }
            Some(out)
        }
        None => None,
    };
    let r_inf = pairs
        .as_ref()
        .map(|p| p.iter().fold(0.0f64, |m, (_, xi)| m.max(xi.linf())));
    traj.states()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let (psi_val, psi_slack) = match (&pairs, r_inf) {
                (Some(p), Some(r)) => {
                    let (d, xi) = &p[i];
                    (Some(psi(d, xi)?), Some(psi_lower_slack(d, xi, r)?))
                }
                _ => (None, None),
            };
            Ok(FunctionalSample {
                t: traj.times()[i],
                phi1: phi1(w),
                phi2: phi2(w),
                psi: psi_val,
                h1_bound_slack: h1_from_phi1_slack(w),
                h2_bound_slack: phi2_lower_slack(w, a, b),
                psi_bound_slack: psi_slack,
            })
        })
        .collect()
}

/// Centered-difference residual of the L2 energy balance
///
/// ```text
/// d/dt |w|^2 + 2 gamma |w|^2 + 2 mu |P_m w|^2 + 2 eps |w_xx|^2
///     - 2 (f, w) - 2 mu (v, P_m w) = 0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBalance {
    /// Interior sample times.
    pub times: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Largest magnitude of any individual term, for relative comparisons.
    pub scale: f64,
}

impl EnergyBalance {
    pub fn max_abs(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `max |residual| / scale`, or 0 when every term vanishes.
    pub fn max_relative(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.max_abs() / self.scale
        }
    }
}

pub fn energy_balance_residual(
    traj: &TrajectoryWindow,
    params: &ModelParams,
    control: Control,
) -> Result<EnergyBalance> {
    if traj.len() < 3 {
        return Err(Error::TooFewSamples {
            need: 3,
            have: traj.len(),
        });
    }
    let h = traj.spacing().unwrap_or(1.0);
    let grid = params.grid();
    let energy: Vec<f64> = traj.norms().iter().map(|n| n.l2 * n.l2).collect();
    let mut times = Vec::with_capacity(traj.len() - 2);
    let mut residuals = Vec::with_capacity(traj.len() - 2);
    let mut scale = 0.0f64;
    for i in 1..traj.len() - 1 {
        let t = traj.times()[i];
        let w = &traj.states()[i];
        let low = w.project_low(params.m);
        let mut terms = vec![
            (energy[i + 1] - energy[i - 1]) / (2.0 * h),
            2.0 * params.gamma * energy[i],
            2.0 * params.mu * low.l2().powi(2),
            2.0 * params.epsilon * w.h2().powi(2),
            -2.0 * params.forcing.inner(w)?,
        ];
        if params.mu > 0.0 {
            if let Some(v) = control.value_at(t, grid, params.m)? {
                terms.push(-2.0 * params.mu * v.inner(&low)?);
            }
        }
        scale = terms.iter().fold(scale, |m, x| m.max(x.abs()));
        times.push(t);
        residuals.push(terms.iter().sum());
    }
    Ok(EnergyBalance {
        times,
        residuals,
        scale,
    })
}
