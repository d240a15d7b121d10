use std::f64::consts::PI;

use kdvda_core::assimilation::{
    determining_modes_probe, envelope_ratio, fit_decay, run_assimilation, sign_changes,
    smallest_determining, AssimilationRun, InitialData, ProbeSettings, PsiCase,
    DEFAULT_FLOOR_GUARD,
};
use kdvda_core::attractor::{
    approximate_w, dform_rhs_magnitude, solve_steady_state, SteadyOptions, WMapSettings,
};
use kdvda_core::bounds::{minimal_m, minimal_m_by_scan, BoundInputs, Condition};
use kdvda_core::integrator::{ModelParams, TrajectoryWindow};
use kdvda_core::{GridSpec, SpectralField};
use proptest::prelude::*;

fn forcing(n: usize) -> SpectralField {
    let g = GridSpec::new(2.0 * PI, n).unwrap();
    SpectralField::from_fn(g, |x| x.cos() + 0.3 * (2.0 * x).sin()).unwrap()
}

fn short_desk(n: usize, mu: f64, m: usize) -> AssimilationRun {
    let params = ModelParams::new(forcing(n), 0.5, 1e-3).with_nudging(mu, m);
    AssimilationRun {
        spinup: 20.0,
        horizon: 30.0,
        obs_stride: 10,
        initial: InitialData {
            max_mode: 6,
            h2_norm: 2.0,
        },
        ..AssimilationRun::new(params, 1, 2)
    }
}

#[test]
fn error_decays_no_slower_than_quarter_damping() {
    let run = run_assimilation(&short_desk(64, 10.0, 8)).unwrap();
    let series = run.l2_series();
    let fit = fit_decay(&series, DEFAULT_FLOOR_GUARD).unwrap();
    assert!(fit.rate >= 0.125, "{fit:?}");
    // no sustained growth against the guaranteed rate
    assert!(envelope_ratio(&series, &fit, 0.125) < 10.0);
}

#[test]
fn case_labels_change_only_through_crossings() {
    let run = run_assimilation(&short_desk(64, 10.0, 8)).unwrap();
    let labelled = run
        .errors
        .iter()
        .filter(|e| e.case != PsiCase::Crossing)
        .count();
    assert!(labelled > 0);
    for pair in run.errors.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.case != b.case && a.case != PsiCase::Crossing && b.case != PsiCase::Crossing {
            // a sign flip between samples means Psi crossed zero in between
            assert!(a.psi * b.psi < 0.0);
        }
    }
    assert!(sign_changes(&run.errors) <= run.errors.len());
}

#[test]
fn more_observed_modes_never_hurt() {
    let params = ModelParams::new(forcing(32), 0.5, 1e-3).with_nudging(20.0, 0);
    let settings = ProbeSettings {
        spinup: 10.0,
        horizon: 10.0,
        ..ProbeSettings::default()
    };
    let reports: Vec<_> = (1..=6)
        .map(|m| determining_modes_probe(&params, m, &settings).unwrap())
        .collect();
    for w in reports.windows(2) {
        let (a, b) = (
            w[0].terminal_error.max(DEFAULT_FLOOR_GUARD),
            w[1].terminal_error.max(DEFAULT_FLOOR_GUARD),
        );
        assert!(b <= 1.1 * a, "m={} {a:e} -> {b:e}", w[1].m);
    }
    // the empirical count is far below what the theory demands
    let empirical = smallest_determining(&reports);
    let mut inputs = BoundInputs::reference().with_forcing(&params.forcing);
    inputs.gamma = 0.5;
    let theory = minimal_m(&inputs, &[Condition::Cond4p]).unwrap();
    if let Some(m) = empirical {
        assert!((m as u128) <= theory);
    }
}

#[test]
fn w_map_contracts_near_fixed_point() {
    let base = ModelParams::new(forcing(32), 0.5, 1e-3);
    let s = solve_steady_state(&base, None, &SteadyOptions::default()).unwrap();
    let params = base.with_nudging(10.0, 4);
    let settings = WMapSettings::default();
    let pert = SpectralField::from_fn(*params.grid(), |x| 0.05 * (3.0 * x).sin()).unwrap();
    let v = TrajectoryWindow::constant(&(&s.u_star.project_low(4) + &pert), 0.0, 42.0, 43).unwrap();
    let first = dform_rhs_magnitude(&v, &params, &settings).unwrap();
    let w = approximate_w(&v, &params, &settings).unwrap();
    let pw = TrajectoryWindow::constant(&w.window.last().project_low(4), 0.0, 42.0, 43).unwrap();
    let second = dform_rhs_magnitude(&pw, &params, &settings).unwrap();
    assert!(second.magnitude <= first.magnitude + first.gap + second.gap);
}

fn inputs() -> impl Strategy<Value = BoundInputs> {
    (0.2f64..3.0, 0.01f64..0.3, 0.1f64..3.0, 0.0f64..3.0).prop_map(|(gamma, length, rho, f)| {
        BoundInputs {
            gamma,
            length,
            rho,
            f_l2: f,
            f_linf: f,
            f_h2: f,
            ..BoundInputs::reference()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bisection_matches_linear_scan(i in inputs()) {
        let which = [Condition::Cond4p, Condition::Cond5];
        let m = minimal_m(&i, &which).unwrap();
        prop_assume!(m <= 50_000);
        prop_assert_eq!(minimal_m_by_scan(&i, &which, 50_000).unwrap(), Some(m));
    }
}
