//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use kdvda_core::assimilation::{
    decay_envelope, fit_decay, run_assimilation, AssimilationRun, InitialData, DEFAULT_FLOOR_GUARD,
};
use kdvda_core::attractor::{
    integrate_determining_form, kdv_residual, solve_steady_state, verify_steady_by_flow,
    DFormSettings, SteadyOptions, WMapSettings,
};
use kdvda_core::bounds::{
    bound_exponent, log_grid, scaling_exponent, BoundInputs, Condition, ScalingTarget,
};
use kdvda_core::functionals::{energy_balance_residual, functional_series, phi1};
use kdvda_core::integrator::{Control, Integrator, ModelParams, TrajectoryWindow};
use kdvda_core::{seeded_field, GridSpec, MeanPolicy, SpectralField};

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = Result<Outcome, kdvda_core::Error>;

fn outcome(pass: bool, detail: String) -> Check {
    Ok(Outcome { pass, detail })
}

fn desk_forcing(n: usize) -> SpectralField {
    let g = GridSpec::new(2.0 * PI, n).unwrap();
    SpectralField::from_fn(g, |x| x.cos() + 0.3 * (2.0 * x).sin()).unwrap()
}

fn spectral_exactness() -> Check {
    let g = GridSpec::new(2.0 * PI, 64)?;
    let u = SpectralField::from_fn(g, |x| (5.0 * x).cos())?;
    let expect = SpectralField::from_fn(g, |x| -25.0 * (5.0 * x).cos())?;
    let d2 = u.derivative(2);
    let err = d2
        .coeffs()
        .iter()
        .zip(expect.coeffs())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
    outcome(err < 1e-12, format!("max coefficient error {err:.3e}"))
}

fn pure_kdv_conservation() -> Check {
    let g = GridSpec::new(2.0 * PI, 256)?;
    // Free mean with a nonzero offset, so that mean conservation is tested
    // on something other than an enforced zero.
    let base = seeded_field(g, 1, 4, 5.0)?;
    let mut coeffs = base.coeffs().to_vec();
    coeffs[0].re = 0.3;
    let u0 = SpectralField::from_coeffs(g, coeffs, MeanPolicy::Free)?;
    let params = ModelParams::new(SpectralField::zeros(g), 0.0, 1e-3);
    let u = Integrator::new(&params)?.advance(&u0, 0.0, 10.0, Control::None)?;
    let mean_drift = u.mean() - u0.mean();
    let l2 = (u.l2().powi(2) / u0.l2().powi(2) - 1.0).abs();
    let phi = (phi1(&u) / phi1(&u0) - 1.0).abs();
    outcome(
        mean_drift == 0.0 && l2 < 1e-8 && phi < 1e-6,
        format!("mean drift {mean_drift:e}, |u|^2 drift {l2:.3e}, Phi drift {phi:.3e}"),
    )
}

fn damping_law() -> Check {
    let g = GridSpec::new(2.0 * PI, 128)?;
    let u0 = seeded_field(g, 5, 4, 3.0)?;
    let params = ModelParams::new(SpectralField::zeros(g), 0.5, 1e-3);
    let u = Integrator::new(&params)?.advance(&u0, 0.0, 5.0, Control::None)?;
    let rel = (u.l2() - (-2.5f64).exp() * u0.l2()).abs() / u0.l2();
    outcome(rel < 1e-8, format!("relative deviation {rel:.3e}"))
}

fn soliton_profile(g: GridSpec, c: f64, center: f64) -> Result<SpectralField, kdvda_core::Error> {
    let l = g.length();
    let samples: Vec<f64> = g
        .nodes()
        .into_iter()
        .map(|x| {
            // sum over periodic images
            (-3..=3)
                .map(|j| {
                    let s = c.sqrt() * (x - center - j as f64 * l) / 2.0;
                    3.0 * c / s.cosh().powi(2)
                })
                .sum()
        })
        .collect();
    SpectralField::from_samples_with_policy(g, &samples, MeanPolicy::Free)
}

fn soliton() -> Check {
    let l = 40.0 * PI;
    let g = GridSpec::new(l, 1024)?;
    let (c, x0, t) = (1.0, l / 4.0, 10.0);
    let u0 = soliton_profile(g, c, x0)?;
    let params = ModelParams::new(SpectralField::zeros(g), 0.0, 1e-3);
    let u = Integrator::new(&params)?.advance(&u0, 0.0, t, Control::None)?;
    let exact = soliton_profile(g, c, x0 + c * t)?;
    let err = (&u - &exact).l2() / exact.l2();
    outcome(err < 1e-4, format!("relative L2 profile error {err:.3e}"))
}

fn temporal_order() -> Check {
    let f = desk_forcing(128);
    let u0 = seeded_field(*f.grid(), 2, 8, 2.0)?;
    let t = 2.0;
    let run = |dt: f64| -> Result<SpectralField, kdvda_core::Error> {
        let p = ModelParams::new(f.clone(), 0.5, dt);
        Integrator::new(&p)?.advance(&u0, 0.0, t, Control::None)
    };
    let reference = run(3.125e-5)?;
    let dts = [4e-3, 2e-3, 1e-3, 5e-4];
    let errs = dts
        .iter()
        .map(|&dt| run(dt).map(|u| (&u - &reference).l2()))
        .collect::<Result<Vec<f64>, _>>()?;
    let slope = kdvda_core::bounds::loglog_slope(&dts, &errs)?;
    outcome(
        (3.8..=4.2).contains(&slope),
        format!(
            "slope {slope:.3} (errors {:.2e} {:.2e} {:.2e} {:.2e})",
            errs[0], errs[1], errs[2], errs[3]
        ),
    )
}

fn desk_assimilation(mu: f64) -> AssimilationRun {
    let params = ModelParams::new(desk_forcing(128), 0.5, 1e-3).with_nudging(mu, 8);
    AssimilationRun {
        initial: InitialData {
            max_mode: 8,
            h2_norm: 2.0,
        },
        spinup: 50.0,
        horizon: 100.0,
        obs_stride: 2,
        ..AssimilationRun::new(params, 1, 2)
    }
}

fn assimilation_and_inequalities() -> Result<(Outcome, Outcome), kdvda_core::Error> {
    let run = run_assimilation(&desk_assimilation(10.0))?;
    let series = run.l2_series();
    let min_err = series.iter().fold(f64::INFINITY, |m, p| m.min(p.1));
    let fit = fit_decay(&series, DEFAULT_FLOOR_GUARD)?;
    let control = run_assimilation(&desk_assimilation(0.0))?;
    let envelope = decay_envelope(&control.l2_series(), 0.5, DEFAULT_FLOOR_GUARD)?;
    let six = Outcome {
        pass: min_err < 1e-9 && fit.rate >= 0.125 && envelope > 1e-3,
        detail: format!(
            "min |delta| {min_err:.3e}, fitted rate {:.4} (r2 {:.4}, window {:.1}-{:.1}), \
             control envelope {envelope:.3e}, control terminal |delta| {:.3e}",
            fit.rate,
            fit.r_squared,
            fit.window.0,
            fit.window.1,
            control.terminal_error()
        ),
    };

    let samples = functional_series(&run.nudged, Some(&run.reference))?;
    let worst_h1 = samples
        .iter()
        .fold(f64::INFINITY, |m, s| m.min(s.h1_bound_slack));
    let worst_psi = samples
        .iter()
        .filter_map(|s| s.psi_bound_slack)
        .fold(f64::INFINITY, f64::min);
    let balance = energy_balance_residual(
        &run.nudged,
        &run.run.params,
        Control::Window(&run.observations),
    )?;
    let rel = balance.max_relative();
    let seven = Outcome {
        pass: worst_h1 >= -1e-8 && worst_psi >= -1e-8 && rel < 1e-3,
        detail: format!(
            "min H1-from-Phi slack {worst_h1:.3e}, min Psi slack {worst_psi:.3e}, energy balance {rel:.3e}"
        ),
    };
    Ok((six, seven))
}

fn steady_state() -> Check {
    let params = ModelParams::new(desk_forcing(128), 0.5, 1e-3);
    let s = solve_steady_state(&params, None, &SteadyOptions::default())?;
    let flow = verify_steady_by_flow(&s.u_star, &params, 10.0)?;
    let slack = s.bounds.l2_bound - s.bounds.l2;
    outcome(
        s.residual_l2 < 1e-12 && slack >= -1e-12 && flow < 1e-8,
        format!(
            "residual {:.3e} after {} Newton steps, |f|/gamma - |u*| = {slack:.4}, flow drift {flow:.3e}",
            s.residual_l2, s.newton_iterations
        ),
    )
}

fn determining_form() -> Check {
    let base = ModelParams::new(desk_forcing(64), 0.5, 1e-3);
    let s = solve_steady_state(&base, None, &SteadyOptions::default())?;
    let params = base.with_nudging(10.0, 8);
    let grid = *params.grid();
    let settings = DFormSettings {
        w_map: WMapSettings::default(),
        ..DFormSettings::default()
    };
    let span = settings.w_map.spinup + 2.0;
    let samples = (span / 0.05).round() as usize + 1;

    let fixed = TrajectoryWindow::constant(&s.u_star.project_low(8), 0.0, span, samples)?;
    let at_fixed = integrate_determining_form(&fixed, &params, &s.u_star, &settings)?;
    let fixed_ok = at_fixed.states.iter().all(|st| st.theta == 1.0);

    let pert = SpectralField::from_fn(grid, |x| {
        0.3 * x.sin() - 0.2 * (3.0 * x).cos() + 0.1 * (7.0 * x).sin()
    })?;
    let v0 = TrajectoryWindow::constant(&(&s.u_star.project_low(8) + &pert), 0.0, span, samples)?;
    let run = integrate_determining_form(&v0, &params, &s.u_star, &settings)?;
    let monotone = run
        .states
        .windows(2)
        .all(|w| w[1].theta <= w[0].theta + 1e-12);
    let collinear = run
        .states
        .iter()
        .fold(0.0f64, |m, st| m.max(st.collinearity));
    let term = run.terminal();
    let h = run.terminal_w.spacing().unwrap_or(1.0);
    let residual = if term.rho < 1e-8 {
        Some(
            kdv_residual(&run.terminal_w, &params)?
                .into_iter()
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    let residual_ok = residual.is_none_or(|r| r <= h * h);
    outcome(
        fixed_ok && monotone && collinear < 1e-10 && residual_ok,
        format!(
            "{} steps, theta {:.3e}, rho {:.3e} ({:?}), collinearity {collinear:.1e}, \
             terminal KdV residual {} (spacing^2 {:.1e}), fixed-point run theta {}",
            run.states.len(),
            term.theta,
            term.rho,
            run.outcome,
            residual.map_or("n/a".into(), |r| format!("{r:.2e}")),
            h * h,
            at_fixed.terminal().theta,
        ),
    )
}

fn scaling_laws() -> Check {
    let t = BoundInputs::reference();
    let mu = scaling_exponent(
        &t,
        &log_grid(1e8, 1e12, 9),
        ScalingTarget::Mu,
        &Condition::ASSIMILATION,
    )?;
    let gamma = scaling_exponent(
        &t,
        &log_grid(1e-5, 1e-2, 7),
        ScalingTarget::Gamma,
        &[Condition::Cond4p],
    )?;
    let force = scaling_exponent(
        &t,
        &log_grid(1e3, 1e6, 7),
        ScalingTarget::ForcingH2,
        &[Condition::Cond4p],
    )?;
    let ok_mu = (mu.exponent - 119.0 / 48.0).abs() <= 0.05;
    let ok_gamma = (gamma.exponent + 26.0 / 3.0).abs() <= 0.1;
    let ok_force = (force.exponent - 14.0 / 3.0).abs() <= 0.1;
    outcome(
        ok_mu && ok_gamma && ok_force,
        format!(
            "mu {:.4} (want 2.4792) {}, gamma {:.4} (want -8.6667) {}, |f|_H2 {:.4} (want 4.6667) {}",
            mu.exponent,
            if ok_mu { "ok" } else { "off" },
            gamma.exponent,
            if ok_gamma { "ok" } else { "off" },
            force.exponent,
            if ok_force { "ok" } else { "off" },
        ),
    )
}

fn bound_orders() -> Check {
    let t = BoundInputs::reference();
    let grid = log_grid(1e8, 1e12, 9);
    let fit = |e: fn(&kdvda_core::bounds::BoundReport) -> f64| {
        bound_exponent(&t, &grid, ScalingTarget::Mu, e)
    };
    let got = [
        fit(|r| r.r0)?,
        fit(|r| r.r1)?,
        fit(|r| r.r2)?,
        fit(|r| r.r_inf)?,
    ];
    let want = [0.0, 1.0 / 6.0, 13.0 / 12.0, 1.0 / 12.0];
    let pass = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.02);
    outcome(
        pass,
        format!(
            "R0 {:.4}, R1 {:.4}, R2 {:.4}, Rinf {:.4}",
            got[0], got[1], got[2], got[3]
        ),
    )
}

fn report(
    id: &str,
    name: &str,
    budget: Duration,
    elapsed: Duration,
    res: Check,
    failures: &mut usize,
) {
    let (pass, detail) = match res {
        Ok(o) => (o.pass && elapsed <= budget, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if !pass {
        *failures += 1;
    }
    println!(
        "criterion {id:>2} {} {name}: {detail} [{:.2}s / {}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn main() {
    let mut failures = 0;
    let s = Duration::from_secs;
    let simple: [(&str, &str, Duration, fn() -> Check); 6] = [
        ("1", "spectral exactness", s(1), spectral_exactness),
        ("2", "pure KdV conservation", s(30), pure_kdv_conservation),
        ("3", "exact damping law", s(10), damping_law),
        ("4", "soliton validation", s(120), soliton),
        ("5", "temporal order", s(120), temporal_order),
        ("8", "steady state", s(60), steady_state),
    ];
    for (id, name, budget, f) in &simple[..5] {
        let (res, el) = timed(f);
        report(id, name, *budget, el, res, &mut failures);
    }
    let (res, el) = timed(assimilation_and_inequalities);
    match res {
        Ok((six, seven)) => {
            report("6", "data assimilation", s(180), el, Ok(six), &mut failures);
            report(
                "7",
                "inequalities along the run",
                s(180),
                el,
                Ok(seven),
                &mut failures,
            );
        }
        Err(e) => {
            report(
                "6",
                "data assimilation",
                s(180),
                el,
                Err(e.clone()),
                &mut failures,
            );
            report(
                "7",
                "inequalities along the run",
                s(180),
                el,
                Err(e),
                &mut failures,
            );
        }
    }
    let (id, name, budget, f) = &simple[5];
    let (res, el) = timed(f);
    report(id, name, *budget, el, res, &mut failures);
    let rest: [(&str, &str, Duration, fn() -> Check); 3] = [
        ("9", "determining form", s(300), determining_form),
        ("10", "scaling laws", s(10), scaling_laws),
        ("11", "bound orders", s(10), bound_orders),
    ];
    for (id, name, budget, f) in rest {
        let (res, el) = timed(f);
        report(id, name, budget, el, res, &mut failures);
    }
    println!("{} of 11 criteria passed", 11 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
