//! Parameter sweeps. Points run on a bounded rayon pool; rows are sorted by
//! the swept value before writing so the CSV does not depend on scheduling.

use std::path::Path;

use kdvda_core::assimilation::{
    determining_modes_probe, fit_decay, run_assimilation, sign_changes, smallest_determining,
    DeterminingModesReport, InitialData, ProbeSettings,
};
use kdvda_core::bounds::{
    compute_bounds, loglog_slope, minimal_m, BoundInputs, Condition, ScalingTarget,
};
use kdvda_core::Error as CoreError;
use rayon::prelude::*;

use crate::commands::assimilation_run;
use crate::config::{parse_conditions, RunConfig, SweepKind};
use crate::export::{export_csv, Cell};
use crate::manifest::RunManifest;
use crate::{CliError, WORKERS_ENV};

/// Worker count from the environment; `None` leaves the choice to rayon.
pub fn workers_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(None),
    }
}

fn pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers_from_env()? {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Config(e.to_string()))
}

pub fn columns(kind: SweepKind) -> &'static [&'static str] {
    match kind {
        SweepKind::AssimilationMu | SweepKind::AssimilationM => &[
            "value",
            "initial_dl2",
            "terminal_dl2",
            "rate",
            "r_squared",
            "floor",
            "case",
            "sign_changes",
        ],
        SweepKind::Modes => &[
            "m",
            "initial_error",
            "terminal_error",
            "terminal_high_error",
            "synchronized",
            "cond4p_lhs",
            "cond4p_rhs",
        ],
        SweepKind::BoundsMu | SweepKind::BoundsGamma | SweepKind::BoundsForcing => &[
            "value",
            "minimal_m",
            "status",
            "r0",
            "r1",
            "r2",
            "r_inf",
            "c3",
        ],
    }
}

fn as_mode_count(v: f64) -> Result<usize, CliError> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(CliError::Config(format!(
            "mode count sweeps need nonnegative integers, got {v}"
        )))
    }
}

/// One finished point; `key` orders the rows.
struct Point {
    key: f64,
    row: Vec<Cell>,
    minimal: Option<u128>,
    probe: Option<DeterminingModesReport>,
}

fn bounds_point(
    template: &BoundInputs,
    target: ScalingTarget,
    which: &[Condition],
    v: f64,
) -> Result<Point, CliError> {
    let inputs = target.apply(template, v);
    let report = compute_bounds(&inputs)?;
    let (minimal, status) = match minimal_m(&inputs, which) {
        Ok(m) => (Some(m), "ok"),
        Err(CoreError::Infeasible(_)) => (None, "infeasible"),
        Err(e) => return Err(e.into()),
    };
    Ok(Point {
        key: v,
        row: vec![
            v.into(),
            minimal.map_or(Cell::Empty, Cell::Count),
            status.into(),
            report.r0.into(),
            report.r1.into(),
            report.r2.into(),
            report.r_inf.into(),
            report.c3.into(),
        ],
        minimal,
        probe: None,
    })
}

fn assimilation_point(cfg: &RunConfig, kind: SweepKind, v: f64) -> Result<Point, CliError> {
    let a = &cfg.assimilate;
    let (mu, m) = match kind {
        SweepKind::AssimilationMu => (v, a.m),
        _ => (a.mu, as_mode_count(v)?),
    };
    let result = run_assimilation(&assimilation_run(cfg, mu, m)?)?;
    let fit = fit_decay(&result.l2_series(), a.floor_guard).ok();
    Ok(Point {
        key: v,
        row: vec![
            v.into(),
            result.errors.first().map_or(0.0, |e| e.dl2).into(),
            result.terminal_error().into(),
            fit.map(|f| f.rate).into(),
            fit.map(|f| f.r_squared).into(),
            fit.map(|f| f.floor).into(),
            result.case.label().into(),
            sign_changes(&result.errors).into(),
        ],
        minimal: None,
        probe: None,
    })
}

fn modes_point(cfg: &RunConfig, v: f64) -> Result<Point, CliError> {
    let a = &cfg.assimilate;
    let m = as_mode_count(v)?;
    let params = cfg.model.params()?.with_nudging(a.mu, m);
    let settings = ProbeSettings {
        seeds: (a.ref_seed, a.nudged_seed),
        initial: InitialData {
            max_mode: a.init_max_mode,
            h2_norm: a.init_h2,
        },
        spinup: a.spinup,
        horizon: a.horizon,
        obs_stride: a.obs_stride,
        sync_tol: cfg.sweep.sync_tol,
        bound_inputs: cfg.assimilation_inputs()?,
    };
    let r = determining_modes_probe(&params, m, &settings)?;
    Ok(Point {
        key: v,
        row: vec![
            m.into(),
            r.initial_error.into(),
            r.terminal_error.into(),
            r.terminal_high_error.into(),
            r.synchronized.into(),
            r.cond4p.lhs.into(),
            r.cond4p.rhs.into(),
        ],
        minimal: None,
        probe: Some(r),
    })
}

pub fn sweep(cfg: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let s = &cfg.sweep;
    if s.values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Config("sweep values must be finite".into()));
    }
    let which = parse_conditions(&s.conditions)?;
    let template = cfg.bounds_inputs()?;
    let target = match s.kind {
        SweepKind::BoundsMu => Some(ScalingTarget::Mu),
        SweepKind::BoundsGamma => Some(ScalingTarget::Gamma),
        SweepKind::BoundsForcing => Some(ScalingTarget::ForcingH2),
        _ => None,
    };
    let point = |v: f64| -> Result<Point, CliError> {
        match (s.kind, target) {
            (_, Some(t)) => bounds_point(&template, t, &which, v),
            (SweepKind::Modes, _) => modes_point(cfg, v),
            (kind, _) => assimilation_point(cfg, kind, v),
        }
    };
    let results: Vec<Result<Point, CliError>> =
        pool()?.install(|| s.values.par_iter().map(|&v| point(v)).collect());
    let mut points = results
        .into_iter()
        .collect::<Result<Vec<Point>, CliError>>()?;
    points.sort_by(|a, b| a.key.total_cmp(&b.key));

    export_csv(
        &out.join("sweep.csv"),
        columns(s.kind),
        points.iter().map(|p| p.row.clone()),
    )?;
    manifest.files.push("sweep.csv".into());
    manifest.record("points", points.len() as i64)?;
    if target.is_some() {
        let feasible: Vec<(f64, f64)> = points
            .iter()
            .filter_map(|p| p.minimal.map(|m| (p.key, m as f64)))
            .collect();
        manifest.record("infeasible_points", (points.len() - feasible.len()) as i64)?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = feasible.into_iter().unzip();
        let spans = xs.len() >= 3 && xs.iter().all(|&x| x > 0.0) && xs[xs.len() - 1] / xs[0] >= 1e3;
        if spans {
            manifest.record("fitted_exponent", loglog_slope(&xs, &ys)?)?;
        }
    }
    if s.kind == SweepKind::Modes {
        let reports: Vec<DeterminingModesReport> = points.iter().filter_map(|p| p.probe).collect();
        if let Some(m) = smallest_determining(&reports) {
            manifest.record("smallest_synchronizing_m", m as i64)?;
        }
    }
    Ok(())
}
