//! One function per subcommand. Each writes its data files into the output
//! directory and fills the manifest summary.

use std::path::Path;
use std::time::Instant;

use kdvda_core::assimilation::{
    fit_decay, run_assimilation, sign_changes, AssimilationResult, AssimilationRun, InitialData,
    NudgedStart,
};
use kdvda_core::attractor::{
    integrate_determining_form, kdv_residual, solve_steady_state, verify_steady_by_flow,
    DFormSettings, SteadyOptions, SteadyState, WMapSettings,
};
use kdvda_core::bounds::{check_conditions, compute_bounds, minimal_m, Condition, ConditionTable};
use kdvda_core::functionals::{energy_balance_residual, functional_series};
use kdvda_core::integrator::{integrate, Control, TrajectoryWindow};
use kdvda_core::seeded_field;
use serde::Serialize;

use crate::config::{field_from_terms, parse_conditions, RunConfig, Subcommand};
use crate::export::{export_csv, write_text, Cell};
use crate::manifest::{load_source, RunManifest, MANIFEST_FILE};
use crate::{selftest, sweep, CliError};

/// Reads the config (or a manifest), applies overrides, runs `sub` and
/// writes everything into `out`.
pub fn run(
    sub: Subcommand,
    config: Option<&Path>,
    overrides: &[String],
    out: &Path,
) -> Result<RunManifest, CliError> {
    let (table, from_manifest) = match config {
        Some(p) => load_source(&std::fs::read_to_string(p)?)?,
        None => (toml::Table::new(), None),
    };
    if let Some(s) = from_manifest {
        if s != sub {
            return Err(CliError::Config(format!(
                "manifest was written by `{s}`, not `{sub}`"
            )));
        }
    }
    let cfg = crate::config::config_from_table(table, overrides)?;
    dispatch(sub, &cfg, out)
}

/// Runs one experiment with a validated config.
pub fn dispatch(sub: Subcommand, cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let clock = Instant::now();
    let mut manifest = RunManifest::new(sub, cfg, seeds_for(sub, cfg))?;
    let result = match sub {
        Subcommand::Simulate => simulate(cfg, out, &mut manifest),
        Subcommand::Assimilate => assimilate(cfg, out, &mut manifest),
        Subcommand::Steady => steady(cfg, out, &mut manifest),
        Subcommand::Bounds => bounds(cfg, out, &mut manifest),
        Subcommand::Dform => dform(cfg, out, &mut manifest),
        Subcommand::Sweep => sweep::sweep(cfg, out, &mut manifest),
        Subcommand::Selftest => selftest::selftest(out, &mut manifest),
    };
    manifest.wall_clock_seconds = clock.elapsed().as_secs_f64();
    if let Err(e) = &result {
        manifest.record("error", e.to_string())?;
    }
    manifest.files.push(MANIFEST_FILE.into());
    manifest.write(out)?;
    result.map(|_| manifest)
}

fn seeds_for(sub: Subcommand, cfg: &RunConfig) -> Vec<u64> {
    match sub {
        Subcommand::Simulate => vec![cfg.simulate.seed],
        Subcommand::Assimilate | Subcommand::Sweep => {
            vec![cfg.assimilate.ref_seed, cfg.assimilate.nudged_seed]
        }
        Subcommand::Dform => vec![cfg.dform.w_seeds.0, cfg.dform.w_seeds.1],
        _ => Vec::new(),
    }
}

/// Columns shared by every trajectory file.
pub const TRAJECTORY_COLUMNS: [&str; 9] = [
    "t",
    "l2",
    "h1",
    "h2",
    "linf",
    "phi1",
    "phi2",
    "h1_bound_slack",
    "h2_bound_slack",
];

fn trajectory_rows(
    traj: &TrajectoryWindow,
    reference: Option<&TrajectoryWindow>,
) -> Result<Vec<Vec<Cell>>, CliError> {
    let samples = functional_series(traj, reference)?;
    Ok(samples
        .iter()
        .zip(traj.norms())
        .map(|(s, n)| {
            let mut row: Vec<Cell> = vec![
                s.t.into(),
                n.l2.into(),
                n.h1.into(),
                n.h2.into(),
                n.linf.into(),
                s.phi1.into(),
                s.phi2.into(),
                s.h1_bound_slack.into(),
                s.h2_bound_slack.into(),
            ];
            if reference.is_some() {
                row.push(s.psi.into());
                row.push(s.psi_bound_slack.into());
            }
            row
        })
        .collect())
}

fn simulate(cfg: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let s = &cfg.simulate;
    let params = cfg.model.params()?;
    let u0 = seeded_field(*params.grid(), s.seed, s.init_max_mode, s.init_h2)?;
    let traj = integrate(&u0, 0.0, s.t_end, &params, Control::None, s.sample_every)?;
    export_csv(
        &out.join("trajectory.csv"),
        &TRAJECTORY_COLUMNS,
        trajectory_rows(&traj, None)?,
    )?;
    manifest.files.push("trajectory.csv".into());
    if s.write_final_state {
        write_text(&out.join("state_final.txt"), &traj.last().to_text())?;
        manifest.files.push("state_final.txt".into());
    }
    let last = traj
        .norms()
        .last()
        .copied()
        .expect("trajectory has samples");
    manifest.record("samples", traj.len() as i64)?;
    manifest.record("final_norms", last)?;
    manifest.record("sup_h2", traj.x_norm())?;
    if traj.len() >= 3 {
        let balance = energy_balance_residual(&traj, &params, Control::None)?;
        manifest.record("energy_balance_max_relative", balance.max_relative())?;
    }
    Ok(())
}

/// Condition table with the mode count rendered as text.
#[derive(Serialize)]
struct TableSummary {
    m: String,
    all_assimilation_conditions_hold: bool,
    conditions: toml::Table,
    lipschitz: f64,
}

fn table_summary(t: &ConditionTable) -> Result<TableSummary, CliError> {
    let mut conditions = toml::Table::new();
    for c in Condition::ALL {
        let v = toml::Value::try_from(t.get(c)).map_err(|e| CliError::Config(e.to_string()))?;
        conditions.insert(c.name().into(), v);
    }
    Ok(TableSummary {
        m: t.m.to_string(),
        all_assimilation_conditions_hold: t.all_pass(&Condition::ASSIMILATION),
        conditions,
        lipschitz: t.lw,
    })
}

pub fn assimilation_run(cfg: &RunConfig, mu: f64, m: usize) -> Result<AssimilationRun, CliError> {
    let a = &cfg.assimilate;
    Ok(AssimilationRun {
        params: cfg.model.params()?.with_nudging(mu, m),
        ref_seed: a.ref_seed,
        nudged_start: NudgedStart::Seeded(a.nudged_seed),
        initial: InitialData {
            max_mode: a.init_max_mode,
            h2_norm: a.init_h2,
        },
        spinup: a.spinup,
        obs_stride: a.obs_stride,
        horizon: a.horizon,
    })
}

pub const ERROR_COLUMNS: [&str; 6] = ["t", "dl2", "dh1", "dh2", "psi", "case"];

pub fn error_rows(result: &AssimilationResult) -> Vec<Vec<Cell>> {
    result
        .errors
        .iter()
        .map(|e| {
            vec![
                e.t.into(),
                e.dl2.into(),
                e.dh1.into(),
                e.dh2.into(),
                e.psi.into(),
                e.case.label().into(),
            ]
        })
        .collect()
}

fn assimilate(cfg: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let a = &cfg.assimilate;
    let result = run_assimilation(&assimilation_run(cfg, a.mu, a.m)?)?;
    export_csv(&out.join("errors.csv"), &ERROR_COLUMNS, error_rows(&result))?;
    let mut columns = TRAJECTORY_COLUMNS.to_vec();
    columns.extend(["psi", "psi_bound_slack"]);
    export_csv(
        &out.join("trajectory.csv"),
        &columns,
        trajectory_rows(&result.nudged, Some(&result.reference))?,
    )?;
    manifest
        .files
        .extend(["errors.csv".into(), "trajectory.csv".into()]);

    match fit_decay(&result.l2_series(), a.floor_guard) {
        Ok(fit) => manifest.record("decay_fit", fit)?,
        Err(e) => manifest.record("decay_fit_error", e.to_string())?,
    }
    manifest.record(
        "initial_error",
        result.errors.first().map_or(0.0, |e| e.dl2),
    )?;
    manifest.record("terminal_error", result.terminal_error())?;
    manifest.record("run_case", format!("{:?}", result.case))?;
    manifest.record("sign_changes", sign_changes(&result.errors) as i64)?;
    manifest.record("observed_sup_h2", result.observed_sup_h2())?;

    let inputs = cfg.assimilation_inputs()?;
    let report = compute_bounds(&inputs)?;
    let table = check_conditions(&report, &inputs, a.m as u128);
    manifest.record("condition_table", table_summary(&table)?)?;
    manifest.record("rho_covers_observations", result.observed_sup_h2() <= a.rho)?;
    match minimal_m(&inputs, &Condition::ASSIMILATION) {
        Ok(m) => manifest.record("theoretical_minimal_m", m.to_string())?,
        Err(e) => manifest.record("theoretical_minimal_m", e.to_string())?,
    }
    Ok(())
}

fn steady_options(cfg: &RunConfig) -> SteadyOptions {
    let s = &cfg.steady;
    SteadyOptions {
        tol: s.tol,
        max_newton: s.max_newton,
        krylov_tol: s.krylov_tol,
        krylov_restart: s.krylov_restart,
        krylov_max: s.krylov_max,
        c_universal: s.c_universal,
    }
}

#[derive(Serialize)]
struct SteadySummary {
    residual_l2: f64,
    newton_iterations: usize,
    krylov_iterations: usize,
    norms: kdvda_core::NormSet,
    mean: f64,
}

fn record_steady(manifest: &mut RunManifest, s: &SteadyState) -> Result<(), CliError> {
    manifest.record(
        "steady_state",
        SteadySummary {
            residual_l2: s.residual_l2,
            newton_iterations: s.newton_iterations,
            krylov_iterations: s.krylov_iterations,
            norms: s.u_star.norms(),
            mean: s.u_star.mean(),
        },
    )?;
    manifest.record("steady_bound_checks", s.bounds)
}

fn steady(cfg: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let params = cfg.model.params()?;
    let s = solve_steady_state(&params, None, &steady_options(cfg))?;
    write_text(&out.join("steady_state.txt"), &s.u_star.to_text())?;
    manifest.files.push("steady_state.txt".into());
    record_steady(manifest, &s)?;
    if cfg.steady.flow_time > 0.0 {
        let drift = verify_steady_by_flow(&s.u_star, &params, cfg.steady.flow_time)?;
        manifest.record("flow_drift_h2", drift)?;
    }
    Ok(())
}

/// Header of `conditions.csv`: the mode count, then lhs, rhs and pass for
/// every condition, then the Lipschitz constant.
pub fn condition_columns() -> Vec<String> {
    let mut cols = vec!["m".to_string()];
    for c in Condition::ALL {
        for part in ["lhs", "rhs", "pass"] {
            cols.push(format!("{}_{part}", c.name()));
        }
    }
    cols.push("lipschitz".into());
    cols
}

fn condition_row(t: &ConditionTable) -> Vec<Cell> {
    let mut row = vec![Cell::Count(t.m)];
    for c in Condition::ALL {
        let check = t.get(c);
        row.extend([check.lhs.into(), check.rhs.into(), check.pass.into()]);
    }
    row.push(t.lw.into());
    row
}

fn bounds(cfg: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let inputs = cfg.bounds_inputs()?;
    let report = compute_bounds(&inputs)?;
    manifest.record("inputs", inputs)?;
    manifest.record("bound_report", report)?;
    let cols = condition_columns();
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let tables: Vec<ConditionTable> = cfg
        .bounds
        .m_values
        .iter()
        .map(|&m| check_conditions(&report, &inputs, m as u128))
        .collect();
    export_csv(
        &out.join("conditions.csv"),
        &cols,
        tables.iter().map(condition_row),
    )?;
    manifest.files.push("conditions.csv".into());
    let which = parse_conditions(&cfg.bounds.minimal_for)?;
    if !which.is_empty() {
        let m = minimal_m(&inputs, &which)?;
        manifest.record("minimal_m", m.to_string())?;
        manifest.record(
            "condition_table_at_minimal_m",
            table_summary(&check_conditions(&report, &inputs, m))?,
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DformSummary {
    outcome: String,
    steps: usize,
    terminal: kdvda_core::attractor::DFormState,
    ball_distance: f64,
    inside_ball: Option<bool>,
    max_collinearity: f64,
    terminal_kdv_residual: Option<f64>,
}

pub const DFORM_COLUMNS: [&str; 6] = ["tau", "theta", "rho", "collinearity", "gap", "halvings"];

fn dform(cfg: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let d = &cfg.dform;
    let base = cfg.model.params()?;
    let s = solve_steady_state(&base, None, &steady_options(cfg))?;
    record_steady(manifest, &s)?;
    let params = base.with_nudging(d.mu, d.m);
    let settings = DFormSettings {
        w_map: WMapSettings {
            seeds: d.w_seeds,
            spinup: d.w_spinup,
            tol: d.w_tol,
            ..WMapSettings::default()
        },
        d_tau: d.d_tau,
        tau_end: d.tau_end,
        kappa: d.kappa,
        rho_stop: d.rho_stop,
        theta_zero: d.theta_zero,
        max_steps: d.max_steps,
        r_proxy: d.r_proxy,
    };
    let span = d.w_spinup + d.window;
    let samples = (span / d.spacing).round() as usize + 1;
    let pert = field_from_terms(*params.grid(), &d.perturbation)?;
    let start = &s.u_star.project_low(d.m) + &pert;
    let v0 = TrajectoryWindow::constant(&start, 0.0, span, samples)?;
    let run = integrate_determining_form(&v0, &params, &s.u_star, &settings)?;

    let rows = run.states.iter().map(|st| {
        vec![
            st.tau.into(),
            st.theta.into(),
            st.rho.into(),
            st.collinearity.into(),
            st.gap.into(),
            Cell::Int(st.halvings as i64),
        ]
    });
    export_csv(&out.join("dform.csv"), &DFORM_COLUMNS, rows)?;
    write_text(&out.join("steady_state.txt"), &s.u_star.to_text())?;
    write_text(
        &out.join("w_terminal.txt"),
        &run.terminal_w.last().to_text(),
    )?;
    manifest.files.extend([
        "dform.csv".into(),
        "steady_state.txt".into(),
        "w_terminal.txt".into(),
    ]);

    let term = *run.terminal();
    let residual = if term.rho < d.rho_stop {
        Some(
            kdv_residual(&run.terminal_w, &params)?
                .into_iter()
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    manifest.record(
        "dform",
        DformSummary {
            outcome: format!("{:?}", run.outcome),
            steps: run.states.len(),
            terminal: term,
            ball_distance: run.ball.0,
            inside_ball: run.ball.1,
            max_collinearity: run.states.iter().fold(0.0, |m, st| m.max(st.collinearity)),
            terminal_kdv_residual: residual,
        },
    )
}
