//! Fast invariant checks across every core module, on small fixed grids.
//! The config is ignored so the result only depends on the build.

use std::f64::consts::PI;
use std::path::Path;

use kdvda_core::assimilation::{
    fit_decay, run_assimilation, AssimilationRun, InitialData, DEFAULT_FLOOR_GUARD,
};
use kdvda_core::attractor::{
    dform_rhs_magnitude, solve_steady_state, steady_residual, SteadyOptions, WMapSettings,
};
use kdvda_core::bounds::{compute_bounds, minimal_m, minimal_m_by_scan, BoundInputs, Condition};
use kdvda_core::functionals::{energy_balance_residual, h1_from_phi1_slack, psi_lower_slack};
use kdvda_core::integrator::{integrate, Control, ModelParams, TrajectoryWindow};
use kdvda_core::{seeded_field, GridSpec, SpectralField};

use crate::export::{export_csv, Cell};
use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

type Check = fn() -> Result<(bool, String), CliError>;

fn grid(n: usize) -> Result<GridSpec, CliError> {
    Ok(GridSpec::new(2.0 * PI, n)?)
}

fn forcing(n: usize) -> Result<SpectralField, CliError> {
    Ok(SpectralField::from_fn(grid(n)?, |x| {
        x.cos() + 0.3 * (2.0 * x).sin()
    })?)
}

fn derivative_exact() -> Result<(bool, String), CliError> {
    let g = grid(64)?;
    let u = SpectralField::from_fn(g, |x| (5.0 * x).cos())?;
    let want = SpectralField::from_fn(g, |x| -25.0 * (5.0 * x).cos())?;
    let err = (&u.derivative(2) - &want).linf();
    Ok((err < 1e-11, format!("max error {err:.1e}")))
}

fn samples_round_trip() -> Result<(bool, String), CliError> {
    let u = seeded_field(grid(64)?, 3, 10, 2.0)?;
    let back = SpectralField::from_samples(*u.grid(), &u.samples())?;
    let err = (&back - &u).l2();
    Ok((err < 1e-13, format!("round-trip error {err:.1e}")))
}

fn linear_damping_law() -> Result<(bool, String), CliError> {
    let g = grid(32)?;
    let mut p = ModelParams::new(SpectralField::zeros(g), 0.5, 1e-2);
    p.advection = false;
    let u0 = seeded_field(g, 4, 6, 1.0)?;
    let traj = integrate(&u0, 0.0, 2.0, &p, Control::None, 20)?;
    let err = traj
        .times()
        .iter()
        .zip(traj.norms())
        .map(|(t, n)| (n.l2 - (-0.5 * t).exp() * u0.l2()).abs())
        .fold(0.0, f64::max);
    Ok((
        err < 1e-12,
        format!("max deviation from exp(-gamma t) {err:.1e}"),
    ))
}

fn energy_balance() -> Result<(bool, String), CliError> {
    let p = ModelParams::new(forcing(32)?, 0.5, 1e-3);
    let u0 = seeded_field(*p.grid(), 5, 4, 2.0)?;
    let traj = integrate(&u0, 0.0, 0.5, &p, Control::None, 10)?;
    let rel = energy_balance_residual(&traj, &p, Control::None)?.max_relative();
    Ok((rel < 1e-3, format!("relative residual {rel:.1e}")))
}

fn functional_inequalities() -> Result<(bool, String), CliError> {
    let g = grid(64)?;
    let mut worst = f64::INFINITY;
    for seed in 0..8 {
        let w = seeded_field(g, seed, 10, 3.0)?;
        let u = seeded_field(g, seed + 100, 10, 3.0)?;
        let xi = w.lin_comb(0.5, &u, 0.5)?;
        worst = worst
            .min(h1_from_phi1_slack(&w))
            .min(psi_lower_slack(&(&w - &u), &xi, xi.linf())?);
    }
    Ok((worst >= -1e-8, format!("smallest slack {worst:.3e}")))
}

fn bounds_bisection() -> Result<(bool, String), CliError> {
    let inputs = BoundInputs {
        gamma: 2.0,
        length: 0.1,
        rho: 0.5,
        f_l2: 0.1,
        f_linf: 0.1,
        f_h2: 0.1,
        ..BoundInputs::reference()
    };
    let which = [Condition::Cond4p, Condition::Cond5];
    let m = minimal_m(&inputs, &which)?;
    let scan = minimal_m_by_scan(&inputs, &which, 100_000)?;
    Ok((scan == Some(m), format!("bisection {m}, scan {scan:?}")))
}

fn bounds_ordering() -> Result<(bool, String), CliError> {
    let r = compute_bounds(&BoundInputs::reference())?;
    let ok = r.r0 <= r.r0_tilde && r.r_inf == (r.r0 * r.r1).sqrt() && r.c3 == (r.r1 * r.r2).sqrt();
    Ok((
        ok,
        format!("r0 {:.3e}, r1 {:.3e}, r2 {:.3e}", r.r0, r.r1, r.r2),
    ))
}

fn assimilation_sync() -> Result<(bool, String), CliError> {
    let params = ModelParams::new(forcing(32)?, 0.5, 1e-3).with_nudging(10.0, 8);
    let run = AssimilationRun {
        spinup: 20.0,
        horizon: 30.0,
        obs_stride: 10,
        initial: InitialData {
            max_mode: 6,
            h2_norm: 2.0,
        },
        ..AssimilationRun::new(params, 1, 2)
    };
    let result = run_assimilation(&run)?;
    let fit = fit_decay(&result.l2_series(), DEFAULT_FLOOR_GUARD)?;
    Ok((
        fit.rate >= 0.125 && result.terminal_error() < 1e-6,
        format!(
            "rate {:.3}, terminal {:.1e}",
            fit.rate,
            result.terminal_error()
        ),
    ))
}

fn steady_state() -> Result<(bool, String), CliError> {
    let p = ModelParams::new(forcing(32)?, 0.5, 1e-3);
    let s = solve_steady_state(&p, None, &SteadyOptions::default())?;
    let res = steady_residual(&s.u_star, &p)?.l2();
    let ok = res < 1e-10 && s.bounds.l2_ok && s.bounds.third_ok;
    Ok((
        ok,
        format!("residual {res:.1e}, {} Newton steps", s.newton_iterations),
    ))
}

fn w_map_fixed_point() -> Result<(bool, String), CliError> {
    let base = ModelParams::new(forcing(32)?, 0.5, 1e-3);
    let s = solve_steady_state(&base, None, &SteadyOptions::default())?;
    let params = base.with_nudging(10.0, 4);
    let v = TrajectoryWindow::constant(&s.u_star.project_low(4), 0.0, 42.0, 43)?;
    let rhs = dform_rhs_magnitude(&v, &params, &WMapSettings::default())?;
    Ok((
        rhs.magnitude <= 1e-6 + rhs.gap,
        format!("|v - P W(v)| {:.1e}, gap {:.1e}", rhs.magnitude, rhs.gap),
    ))
}

pub const CHECKS: [(&str, &str, Check); 10] = [
    ("spectral", "second derivative exact", derivative_exact),
    ("spectral", "sample round trip", samples_round_trip),
    ("integrator", "linear damping law", linear_damping_law),
    ("functionals", "energy balance", energy_balance),
    (
        "functionals",
        "functional inequalities",
        functional_inequalities,
    ),
    ("bounds", "bisection matches scan", bounds_bisection),
    ("bounds", "bound chain ordering", bounds_ordering),
    (
        "assimilation",
        "nudged copy synchronizes",
        assimilation_sync,
    ),
    ("attractor", "steady state", steady_state),
    ("attractor", "W-map fixed point", w_map_fixed_point),
];

pub fn run_checks() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|&(module, name, check)| {
            let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
            CheckResult {
                module,
                name,
                pass,
                detail,
            }
        })
        .collect()
}

pub fn render_table(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "{:<5} {:<13} {:<26} {}\n",
            if r.pass { "PASS" } else { "FAIL" },
            r.module,
            r.name,
            r.detail
        ));
    }
    s
}

pub fn selftest(out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let results = run_checks();
    print!("{}", render_table(&results));
    export_csv(
        &out.join("selftest.csv"),
        &["module", "check", "pass", "detail"],
        results.iter().map(|r| {
            vec![
                r.module.into(),
                r.name.into(),
                r.pass.into(),
                Cell::Text(r.detail.clone()),
            ]
        }),
    )?;
    manifest.files.push("selftest.csv".into());
    let failed = results.iter().filter(|r| !r.pass).count();
    manifest.record("checks", results.len() as i64)?;
    manifest.record("failed", failed as i64)?;
    if failed > 0 {
        return Err(CliError::SelftestFailed(failed));
    }
    Ok(())
}
