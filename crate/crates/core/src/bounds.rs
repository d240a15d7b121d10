//! Closed-form a-priori bounds for the nudged, damped KdV equation and the
//! conditions on the number of observed modes `m` under which the
//! synchronization and determining-mode arguments go through.
//!
//! Everything here is plain arithmetic on [`BoundInputs`]; no solver is
//! involved. The mode count can be astronomically large, so it is carried as
//! `u128` and converted to `f64` inside the formulas.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::SpectralField;

/// Parameters entering the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub gamma: f64,
    /// Domain length.
    pub length: f64,
    pub mu: f64,
    /// Radius of the ball in which the control is assumed to lie.
    pub rho: f64,
    /// Growth exponent in the first mode-count condition, in `[1, 2)`.
    pub alpha: f64,
    /// Growth exponent in the second mode-count condition, positive.
    pub beta: f64,
    pub epsilon: f64,
    /// Unspecified universal constant multiplying the hyperviscous terms.
    pub c_universal: f64,
    pub f_l2: f64,
    pub f_linf: f64,
    pub f_h2: f64,
}

impl BoundInputs {
    /// Reference inputs: unit damping and forcing norms on `[0, 2 pi)`,
    /// `rho = 4`, `alpha = 1`, `beta = 4/3`, `mu = 100`.
    pub fn reference() -> Self {
        Self {
            gamma: 1.0,
            length: 2.0 * PI,
            mu: 100.0,
            rho: 4.0,
            alpha: 1.0,
            beta: 4.0 / 3.0,
            epsilon: 0.0,
            c_universal: 1.0,
            f_l2: 1.0,
            f_linf: 1.0,
            f_h2: 1.0,
        }
    }

    /// Copies the forcing norms from a field.
    pub fn with_forcing(mut self, f: &SpectralField) -> Self {
        self.f_l2 = f.l2();
        self.f_linf = f.linf();
        self.f_h2 = f.h2();
        self.length = f.grid().length();
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(invalid(
                "gamma",
                format!("must be positive, got {}", self.gamma),
            ));
        }
        if !(self.alpha >= 1.0 && self.alpha < 2.0) {
            return Err(invalid(
                "alpha",
                format!("must lie in [1, 2), got {}", self.alpha),
            ));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(invalid(
                "beta",
                format!("must be positive, got {}", self.beta),
            ));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(invalid(
                "epsilon",
                format!("must lie in [0, 1), got {}", self.epsilon),
            ));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(invalid(
                "length",
                format!("must be positive, got {}", self.length),
            ));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(invalid(
                "rho",
                format!("must be positive, got {}", self.rho),
            ));
        }
        let nonneg = [
            ("mu", self.mu),
            ("c_universal", self.c_universal),
            ("f_l2", self.f_l2),
            ("f_linf", self.f_linf),
            ("f_h2", self.f_h2),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Bounds with the nudging switched off, used by the determining-mode
/// conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnnudgedBounds {
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub r_inf: f64,
    pub r_prime: f64,
    pub c3: f64,
}

/// Every bounding expression, in the order they are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    /// First L2 bound.
    pub r0_tilde: f64,
    /// First H1 bound.
    pub r1_tildetilde: f64,
    /// Improved L2 bound.
    pub r0: f64,
    /// Improved H1 bound built from `r0`.
    pub r1_tilde: f64,
    pub c1_tilde: f64,
    pub c2_tilde: f64,
    /// H2 bound with the constants built from `r1_tilde`.
    pub r2_tilde: f64,
    /// Same expression as `r2_tilde` but with `c1`, `c2` built from `r1`.
    pub r2_tilde_alt: f64,
    /// Final H1 bound.
    pub r1: f64,
    pub c1: f64,
    pub c2: f64,
    /// Final H2 bound.
    pub r2: f64,
    /// Sup-norm bound `sqrt(r0 r1)`.
    pub r_inf: f64,
    /// First time-derivative bound in H^-1.
    pub r_prime_tilde: f64,
    /// Improved time-derivative bound.
    pub r_prime: f64,
    /// `sqrt(r1 r2)`.
    pub c3: f64,
    /// The same chain evaluated at `mu = 0`.
    pub unnudged: UnnudgedBounds,
}

/// `mu^p` with the convention `0^0 = 1`.
fn mu_pow(mu: f64, p: f64) -> f64 {
    if mu == 0.0 {
        if p == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        mu.powf(p)
    }
}

fn c_constants(i: &BoundInputs, r0: f64, r1: f64) -> (f64, f64) {
    let (g, mu, rho) = (i.gamma, i.mu, i.rho);
    let fh2 = i.f_h2 + mu * rho;
    let finf = i.f_linf + mu * rho;
    let core = r0.powf(1.5) * r1.sqrt();
    let c1 = 3.0 * g * core + 3.0 * finf * r0 + 4.5 * mu * core + 3.6 * fh2 + 6.0 * fh2 * r0;
    let c2 = 1.5 * core * fh2 + fh2 * r0.powf(2.5) * r1.sqrt() + mu * r0.powi(3) * r1;
    (c1, c2)
}

fn h2_bound(i: &BoundInputs, r0: f64, c1: f64, c2: f64, r1: f64) -> f64 {
    let g = i.gamma;
    (5.0 / (36.0 * g * g) * c1 * c1
        + c2 / g
        + i.epsilon * i.c_universal * r0.powf(22.0 / 3.0) / g
        + 45.0 / 64.0 * r0.powi(3) * r1)
        .sqrt()
}

fn chain(i: &BoundInputs) -> BoundReport {
    let (g, mu, rho) = (i.gamma, i.mu, i.rho);
    let ce = i.c_universal * i.epsilon;
    let fh2 = i.f_h2 + mu * rho;
    let finf = i.f_linf + mu * rho;
    let g43 = g.powf(4.0 / 3.0);
    let gm43 = (g + mu).powf(4.0 / 3.0);

    let r0_tilde = (i.f_l2 + g.sqrt() * mu.sqrt() * rho) / g;
    let r1_tildetilde = (2.0 * (gm43 + g43) / g43 * r0_tilde.powf(10.0 / 3.0)
        + 2.0 / g * (finf * r0_tilde.powi(2) + 2.0 * fh2 * r0_tilde + ce * r0_tilde.powi(6)))
    .sqrt();

    let r0 = i.f_l2 / g + rho + mu_pow(mu, (i.alpha - 1.0) / 2.0);
    let r1_tilde = (2.0 / g
        * ((gm43 / g.powf(1.0 / 3.0) + g) * r0.powf(10.0 / 3.0)
            + finf * r0.powi(2)
            + 2.0 * fh2 * r0
            + ce * r0_tilde.powi(6)))
    .sqrt();
    let (c1_tilde, c2_tilde) = c_constants(i, r0, r1_tilde);
    let r2_tilde = h2_bound(i, r0, c1_tilde, c2_tilde, r1_tilde);

    let gm = g + mu;
    let r1 = (2.0 / gm * ((gm43 / g.powf(1.0 / 3.0) + gm) * r0.powf(10.0 / 3.0))
        + 2.0 / gm * (fh2 * r0.powi(2) + 2.0 * fh2 * r0 + ce * r0.powi(6) + mu_pow(mu, i.beta)))
    .sqrt();
    let (c1, c2) = c_constants(i, r0, r1);
    let r2 = h2_bound(i, r0, c1, c2, r1);
    let r2_tilde_alt = h2_bound(i, r0, c1, c2, r1_tilde);

    let r_inf = (r0 * r1).sqrt();
    let r_prime_tilde = r2 + 0.5 * r0 * r0 + r1 + gm * r0 + i.f_l2 + mu * rho;
    let r_prime = 0.5 * r0.powf(1.5) * r1.sqrt() + r2 + gm * r0 + i.f_l2 + mu * rho;
    let c3 = (r1 * r2).sqrt();
    BoundReport {
        r0_tilde,
        r1_tildetilde,
        r0,
        r1_tilde,
        c1_tilde,
        c2_tilde,
        r2_tilde,
        r2_tilde_alt,
        r1,
        c1,
        c2,
        r2,
        r_inf,
        r_prime_tilde,
        r_prime,
        c3,
        unnudged: UnnudgedBounds {
            r0,
            r1,
            r2,
            r_inf,
            r_prime,
            c3,
        },
    }
}

/// Evaluates the full chain, plus the same chain at `mu = 0`.
pub fn compute_bounds(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let mut report = chain(inputs);
    report.unnudged = chain(&inputs.with_mu(0.0)).unnudged;
    Ok(report)
}

/// The mode-count conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Poincare tail of the first H1 bound against `mu^alpha`.
    Cond1,
    /// Poincare tail of the first H2 bound against `mu^beta`.
    Cond2,
    /// `C3 <= 2 mu`; independent of `m`.
    Cond3,
    /// Contraction of the synchronization error.
    Cond4,
    /// `C3 <= mu` at `mu = 0` bounds; independent of `m`.
    Cond3p,
    Cond5,
    Cond6,
    /// Determining-modes condition built from the unnudged bounds.
    Cond4p,
}

impl Condition {
    pub const ALL: [Condition; 8] = [
        Condition::Cond1,
        Condition::Cond2,
        Condition::Cond3,
        Condition::Cond4,
        Condition::Cond3p,
        Condition::Cond5,
        Condition::Cond6,
        Condition::Cond4p,
    ];

    /// Conditions needed for synchronization of the nudged system.
    pub const ASSIMILATION: [Condition; 4] = [
        Condition::Cond1,
        Condition::Cond2,
        Condition::Cond3,
        Condition::Cond4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Cond1 => "cond1",
            Condition::Cond2 => "cond2",
            Condition::Cond3 => "cond3",
            Condition::Cond4 => "cond4",
            Condition::Cond3p => "cond3p",
            Condition::Cond5 => "cond5",
            Condition::Cond6 => "cond6",
            Condition::Cond4p => "cond4p",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// True for the conditions that no choice of `m` can repair.
    pub fn is_mode_independent(self) -> bool {
        matches!(self, Condition::Cond3 | Condition::Cond3p)
    }
}

/// Left and right side of one condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl ConditionCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            pass: lhs <= rhs,
        }
    }
}

/// All conditions at one mode count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionTable {
    pub m: u128,
    pub cond1: ConditionCheck,
    pub cond2: ConditionCheck,
    pub cond3: ConditionCheck,
    pub cond4: ConditionCheck,
    pub cond3p: ConditionCheck,
    pub cond5: ConditionCheck,
    pub cond6: ConditionCheck,
    pub cond4p: ConditionCheck,
    /// Lipschitz constant of the W-map at this `m`.
    pub lw: f64,
}

impl ConditionTable {
    pub fn get(&self, c: Condition) -> &ConditionCheck {
        match c {
            Condition::Cond1 => &self.cond1,
            Condition::Cond2 => &self.cond2,
            Condition::Cond3 => &self.cond3,
            Condition::Cond4 => &self.cond4,
            Condition::Cond3p => &self.cond3p,
            Condition::Cond5 => &self.cond5,
            Condition::Cond6 => &self.cond6,
            Condition::Cond4p => &self.cond4p,
        }
    }

    pub fn all_pass(&self, which: &[Condition]) -> bool {
        which.iter().all(|&c| self.get(c).pass)
    }
}

/// Evaluates every condition at mode count `m >= 1`.
pub fn check_conditions(report: &BoundReport, inputs: &BoundInputs, m: u128) -> ConditionTable {
    let (g, mu, l) = (inputs.gamma, inputs.mu, inputs.length);
    let mf = m.max(1) as f64;
    let tail = l * l / (PI * PI * (mf + 1.0).powi(2));
    let zero = &report.unnudged;
    let contraction =
        (2.0 * g + 2.0 * mu) * report.r_inf + 2.0 * report.r_prime.powi(4) / g.powi(3);
    ConditionTable {
        m: m.max(1),
        cond1: ConditionCheck::new(
            mu * tail / 2.0 * report.r1_tildetilde.powi(2),
            mu_pow(mu, inputs.alpha),
        ),
        cond2: ConditionCheck::new(
            mu * tail / 4.0 * report.r2_tilde.powi(2),
            mu_pow(mu, inputs.beta),
        ),
        cond3: ConditionCheck::new(report.c3, 2.0 * mu),
        cond4: ConditionCheck::new(report.c3 * tail / 8.0 / (g * g) * contraction, 0.5),
        cond3p: ConditionCheck::new(zero.c3, mu),
        cond5: ConditionCheck::new(zero.c3 * tail / 4.0, g / (2.0 * mf)),
        cond6: ConditionCheck::new(
            ((g + 2.0 * mu) * report.r_inf + 2.0 * report.r_prime.powi(4) / g.powi(3)) / mf,
            g / 2.0,
        ),
        cond4p: ConditionCheck::new(
            tail / 4.0 / g * (2.0 * g * zero.r_inf + 2.0 * zero.r_prime.powi(4) / g.powi(3)),
            0.5,
        ),
        lw: lipschitz_constant(report, inputs, m.max(1)),
    }
}

/// Lipschitz constant of the W-map on the observed modes.
pub fn lipschitz_constant(report: &BoundReport, inputs: &BoundInputs, m: u128) -> f64 {
    let (g, mu, l) = (inputs.gamma, inputs.mu, inputs.length);
    let mf = m as f64;
    let prefactor = 4.0 * PI * PI * mf * mf / (l * l);
    prefactor
        * (report.c3 * l * l / (2.0 * PI * PI * g * (mf + 1.0).powi(2)) * (mu + mu * report.r_inf)
            + 2.0 * mu / g)
}

/// Largest mode count searched before declaring a condition set infeasible.
pub const MAX_MODES: u128 = 1 << 126;

/// Smallest `m` satisfying all of `which`, by doubling then bisection.
pub fn minimal_m(inputs: &BoundInputs, which: &[Condition]) -> Result<u128> {
    let report = compute_bounds(inputs)?;
    let holds = |m: u128| check_conditions(&report, inputs, m).all_pass(which);
    let first = check_conditions(&report, inputs, 1);
    for &c in which.iter().filter(|c| c.is_mode_independent()) {
        let check = first.get(c);
        if !check.pass {
            return Err(Error::Infeasible(format!(
                "{} fails independently of m ({:e} > {:e})",
                c.name(),
                check.lhs,
                check.rhs
            )));
        }
    }
    let mut hi: u128 = 1;
    while !holds(hi) {
        if hi >= MAX_MODES {
            return Err(Error::Infeasible(format!(
                "no m up to {MAX_MODES} satisfies the conditions"
            )));
        }
        hi *= 2;
    }
    if hi == 1 {
        return Ok(1);
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest `m <= limit` satisfying `which`, by linear scan. Slow; meant as a
/// cross-check for [`minimal_m`].
pub fn minimal_m_by_scan(
    inputs: &BoundInputs,
    which: &[Condition],
    limit: u128,
) -> Result<Option<u128>> {
    let report = compute_bounds(inputs)?;
    Ok((1..=limit).find(|&m| check_conditions(&report, inputs, m).all_pass(which)))
}

/// Parameter varied in a scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingTarget {
    Mu,
    Gamma,
    /// All three forcing norms scaled together, keeping the template's ratios
    /// to `f_h2`.
    ForcingH2,
}

impl ScalingTarget {
    pub fn apply(self, template: &BoundInputs, value: f64) -> BoundInputs {
        let mut i = *template;
        match self {
            ScalingTarget::Mu => i.mu = value,
            ScalingTarget::Gamma => i.gamma = value,
            ScalingTarget::ForcingH2 => {
                let s = value / template.f_h2;
                i.f_l2 *= s;
                i.f_linf *= s;
                i.f_h2 = value;
            }
        }
        i
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            have: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid("sweep", "log-log fit needs finite positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateSweep("all sweep values coincide".into()));
    }
    Ok(sxy / sxx)
}

fn check_sweep(sweep: &[f64]) -> Result<()> {
    if sweep.len() < 3 {
        return Err(Error::DegenerateSweep(format!(
            "need at least 3 points, got {}",
            sweep.len()
        )));
    }
    if sweep.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::DegenerateSweep(
            "sweep values must be positive".into(),
        ));
    }
    let lo = sweep.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sweep.iter().cloned().fold(0.0, f64::max);
    if hi / lo < 1e3 * (1.0 - 1e-12) {
        return Err(Error::DegenerateSweep(format!(
            "sweep spans {:.2} decades, need at least 3",
            (hi / lo).log10()
        )));
    }
    Ok(())
}

/// Minimal mode counts along a sweep and the fitted power law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub values: Vec<f64>,
    pub minimal_m: Vec<u128>,
}

pub fn scaling_exponent(
    template: &BoundInputs,
    sweep: &[f64],
    target: ScalingTarget,
    which: &[Condition],
) -> Result<ScalingFit> {
    check_sweep(sweep)?;
    let ms = sweep
        .iter()
        .map(|&v| minimal_m(&target.apply(template, v), which))
        .collect::<Result<Vec<u128>>>()?;
    let ys: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
    Ok(ScalingFit {
        exponent: loglog_slope(sweep, &ys)?,
        values: sweep.to_vec(),
        minimal_m: ms,
    })
}

/// Fitted power of one report entry along a sweep.
pub fn bound_exponent(
    template: &BoundInputs,
    sweep: &[f64],
    target: ScalingTarget,
    entry: impl Fn(&BoundReport) -> f64,
) -> Result<f64> {
    check_sweep(sweep)?;
    let ys = sweep
        .iter()
        .map(|&v| compute_bounds(&target.apply(template, v)).map(|r| entry(&r)))
        .collect::<Result<Vec<f64>>>()?;
    loglog_slope(sweep, &ys)
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Outcome of iterating `rho -> 4 R2(rho)` at `mu = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoFixedPoint {
    pub converged: bool,
    pub rho: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Looks for a ball radius consistent with its own unnudged H2 bound.
/// Non-convergence is reported, not raised.
pub fn rho_fixed_point(
    template: &BoundInputs,
    max_iter: usize,
    rel_tol: f64,
) -> Result<RhoFixedPoint> {
    let mut inputs = template.with_mu(0.0);
    inputs.validate()?;
    let mut history = vec![inputs.rho];
    for it in 1..=max_iter {
        let mut next = 4.0 * compute_bounds(&inputs)?.unnudged.r2;
        if next.is_nan() {
            // overflow inside the chain
            next = f64::INFINITY;
        }
        history.push(next);
        if !next.is_finite() || next > 1e300 {
            return Ok(RhoFixedPoint {
                converged: false,
                rho: next,
                iterations: it,
                history,
            });
        }
        let done = (next - inputs.rho).abs() <= rel_tol * next;
        inputs.rho = next;
        if done {
            return Ok(RhoFixedPoint {
                converged: true,
                rho: next,
                iterations: it,
                history,
            });
        }
    }
    Ok(RhoFixedPoint {
        converged: false,
        rho: inputs.rho,
        iterations: max_iter,
        history,
    })
}
