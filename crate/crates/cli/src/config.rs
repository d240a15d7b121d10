//! Run configuration: sectioned TOML with every default spelled out.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use kdvda_core::bounds::{BoundInputs, Condition};
use kdvda_core::integrator::{ModelParams, DEFAULT_BLOWUP_GUARD};
use kdvda_core::{GridSpec, SpectralField};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Simulate,
    Assimilate,
    Steady,
    Bounds,
    Dform,
    Sweep,
    Selftest,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Self::Simulate,
        Self::Assimilate,
        Self::Steady,
        Self::Bounds,
        Self::Dform,
        Self::Sweep,
        Self::Selftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Assimilate => "assimilate",
            Self::Steady => "steady",
            Self::Bounds => "bounds",
            Self::Dform => "dform",
            Self::Sweep => "sweep",
            Self::Selftest => "selftest",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown subcommand `{s}`")))
    }
}

/// One forcing component `amplitude * cos(k x' + phase)` with
/// `x' = 2 pi x / L`, written as `[k, amplitude, phase]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcingTerm(pub usize, pub f64, pub f64);

/// Half-spectrum coefficients of a list of cosine components.
pub fn field_from_terms(grid: GridSpec, terms: &[ForcingTerm]) -> Result<SpectralField, CliError> {
    let mut modes: Vec<(usize, Complex64)> = Vec::with_capacity(terms.len());
    for &ForcingTerm(k, amp, phase) in terms {
        if k == 0 || k > grid.cutoff() {
            return Err(CliError::Config(format!(
                "forcing mode {k} must lie in 1..={}",
                grid.cutoff()
            )));
        }
        if !amp.is_finite() || !phase.is_finite() {
            return Err(CliError::Config(format!(
                "forcing term for mode {k} is not finite"
            )));
        }
        let c = Complex64::from_polar(0.5 * amp, phase);
        match modes.iter_mut().find(|(j, _)| *j == k) {
            Some((_, acc)) => *acc += c,
            None => modes.push((k, c)),
        }
    }
    Ok(SpectralField::from_modes(grid, &modes)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub length: f64,
    pub points: usize,
    /// Dealiasing cutoff; `None` means `floor((points - 1) / 3)`.
    pub cutoff: Option<usize>,
    pub gamma: f64,
    pub epsilon: f64,
    pub dt: f64,
    pub blowup_guard: f64,
    pub forcing: Vec<ForcingTerm>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            length: 2.0 * PI,
            points: 128,
            cutoff: None,
            gamma: 0.5,
            epsilon: 0.0,
            dt: 1e-3,
            blowup_guard: DEFAULT_BLOWUP_GUARD,
            forcing: vec![ForcingTerm(1, 1.0, 0.0)],
        }
    }
}

impl ModelSection {
    pub fn grid(&self) -> Result<GridSpec, CliError> {
        Ok(match self.cutoff {
            Some(c) => GridSpec::with_cutoff(self.length, self.points, c)?,
            None => GridSpec::new(self.length, self.points)?,
        })
    }

    pub fn forcing_field(&self) -> Result<SpectralField, CliError> {
        field_from_terms(self.grid()?, &self.forcing)
    }

    /// Unnudged parameters.
    pub fn params(&self) -> Result<ModelParams, CliError> {
        let mut p = ModelParams::new(self.forcing_field()?, self.gamma, self.dt);
        p.epsilon = self.epsilon;
        p.blowup_guard = self.blowup_guard;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub t_end: f64,
    pub seed: u64,
    pub init_max_mode: usize,
    pub init_h2: f64,
    /// Steps between stored samples.
    pub sample_every: usize,
    pub write_final_state: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            seed: 1,
            init_max_mode: 8,
            init_h2: 2.0,
            sample_every: 100,
            write_final_state: true,
        }
    }
}

/// Constants of the mode-count conditions shared by several sections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionConstants {
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c_universal: f64,
}

impl Default for ConditionConstants {
    fn default() -> Self {
        let r = BoundInputs::reference();
        Self {
            rho: r.rho,
            alpha: r.alpha,
            beta: r.beta,
            c_universal: r.c_universal,
        }
    }
}

impl ConditionConstants {
    fn check(&self, section: &str) -> Result<(), CliError> {
        if !(self.alpha >= 1.0 && self.alpha < 2.0) {
            return Err(CliError::Config(format!(
                "{section}.alpha must lie in [1, 2), got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0) {
            return Err(CliError::Config(format!(
                "{section}.beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.rho > 0.0) {
            return Err(CliError::Config(format!(
                "{section}.rho must be positive, got {}",
                self.rho
            )));
        }
        if !(self.c_universal > 0.0) {
            return Err(CliError::Config(format!(
                "{section}.c_universal must be positive, got {}",
                self.c_universal
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssimilateSection {
    pub mu: f64,
    pub m: usize,
    pub ref_seed: u64,
    pub nudged_seed: u64,
    pub init_max_mode: usize,
    pub init_h2: f64,
    pub spinup: f64,
    pub horizon: f64,
    /// Steps between stored observations.
    pub obs_stride: usize,
    pub floor_guard: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c_universal: f64,
}

impl AssimilateSection {
    pub fn constants(&self) -> ConditionConstants {
        ConditionConstants {
            rho: self.rho,
            alpha: self.alpha,
            beta: self.beta,
            c_universal: self.c_universal,
        }
    }
}

impl Default for AssimilateSection {
    fn default() -> Self {
        Self {
            mu: 10.0,
            m: 8,
            ref_seed: 1,
            nudged_seed: 2,
            init_max_mode: 8,
            init_h2: 2.0,
            spinup: 50.0,
            horizon: 100.0,
            obs_stride: 2,
            floor_guard: 1e-11,
            rho: 4.0,
            alpha: 1.0,
            beta: 4.0 / 3.0,
            c_universal: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadySection {
    pub tol: f64,
    pub max_newton: usize,
    pub krylov_tol: f64,
    pub krylov_restart: usize,
    pub krylov_max: usize,
    pub c_universal: f64,
    /// Length of the confirming flow run; zero skips it.
    pub flow_time: f64,
}

impl Default for SteadySection {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_newton: 50,
            krylov_tol: 1e-3,
            krylov_restart: 60,
            krylov_max: 600,
            c_universal: 1.0,
            flow_time: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    pub mu: f64,
    /// Overrides for the model-derived inputs.
    pub gamma: Option<f64>,
    pub f_l2: Option<f64>,
    pub f_linf: Option<f64>,
    pub f_h2: Option<f64>,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c_universal: f64,
    /// Mode counts tabulated in `conditions.csv`.
    pub m_values: Vec<u64>,
    /// Conditions whose joint minimal mode count is reported.
    pub minimal_for: Vec<String>,
}

impl BoundsSection {
    pub fn constants(&self) -> ConditionConstants {
        ConditionConstants {
            rho: self.rho,
            alpha: self.alpha,
            beta: self.beta,
            c_universal: self.c_universal,
        }
    }
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            mu: 100.0,
            gamma: None,
            f_l2: None,
            f_linf: None,
            f_h2: None,
            rho: 4.0,
            alpha: 1.0,
            beta: 4.0 / 3.0,
            c_universal: 1.0,
            m_values: vec![1, 10, 100, 1000, 10000],
            minimal_for: vec!["cond4p".into(), "cond5".into(), "cond6".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DformSection {
    pub mu: f64,
    pub m: usize,
    /// Span of `v0` beyond the W-map spin-up.
    pub window: f64,
    pub spacing: f64,
    /// Low-mode offset of `v0` from the projected steady state.
    pub perturbation: Vec<ForcingTerm>,
    pub w_seeds: (u64, u64),
    pub w_spinup: f64,
    pub w_tol: f64,
    pub d_tau: f64,
    pub tau_end: f64,
    pub kappa: f64,
    pub rho_stop: f64,
    pub theta_zero: f64,
    pub max_steps: usize,
    pub r_proxy: Option<f64>,
}

impl Default for DformSection {
    fn default() -> Self {
        Self {
            mu: 10.0,
            m: 8,
            window: 2.0,
            spacing: 0.05,
            perturbation: vec![
                ForcingTerm(1, 0.3, -0.5 * PI),
                ForcingTerm(3, -0.2, 0.0),
                ForcingTerm(7, 0.1, -0.5 * PI),
            ],
            w_seeds: (101, 202),
            w_spinup: 40.0,
            w_tol: 1e-8,
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Nudging gain of an assimilation run.
    AssimilationMu,
    /// Observed modes of an assimilation run.
    AssimilationM,
    /// Observed modes of a strong-nudging synchronization probe.
    Modes,
    /// Minimal mode count against `mu`.
    BoundsMu,
    /// Minimal mode count against `gamma`.
    BoundsGamma,
    /// Minimal mode count against the forcing size.
    BoundsForcing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub kind: SweepKind,
    pub values: Vec<f64>,
    /// Conditions used by the bounds sweeps.
    pub conditions: Vec<String>,
    /// Synchronization threshold of the `modes` sweep.
    pub sync_tol: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            kind: SweepKind::BoundsMu,
            values: vec![1e8, 1e9, 1e10, 1e11, 1e12],
            conditions: vec![
                "cond1".into(),
                "cond2".into(),
                "cond3".into(),
                "cond4".into(),
            ],
            sync_tol: 1e-9,
        }
    }
}

/// Resolved configuration of one run. The subcommand comes from the command
/// line and is echoed into the manifest, not stored here.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub simulate: SimulateSection,
    pub assimilate: AssimilateSection,
    pub steady: SteadySection,
    pub bounds: BoundsSection,
    pub dform: DformSection,
    pub sweep: SweepSection,
}

pub fn parse_conditions(names: &[String]) -> Result<Vec<Condition>, CliError> {
    names
        .iter()
        .map(|n| {
            Condition::parse(n).ok_or_else(|| CliError::Config(format!("unknown condition `{n}`")))
        })
        .collect()
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.params()?;
        self.assimilate.constants().check("assimilate")?;
        self.bounds.constants().check("bounds")?;
        self.bounds_inputs()?;
        parse_conditions(&self.bounds.minimal_for)?;
        parse_conditions(&self.sweep.conditions)?;
        let positive = [
            ("simulate.t_end", self.simulate.t_end),
            ("assimilate.horizon", self.assimilate.horizon),
            ("dform.window", self.dform.window),
            ("dform.spacing", self.dform.spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.simulate.sample_every == 0 || self.assimilate.obs_stride == 0 {
            return Err(CliError::Config("sample strides must be at least 1".into()));
        }
        Ok(())
    }

    /// Bound inputs for the `bounds` subcommand.
    pub fn bounds_inputs(&self) -> Result<BoundInputs, CliError> {
        let f = self.model.forcing_field()?;
        let c = self.bounds.constants();
        let mut inputs = BoundInputs {
            gamma: self.bounds.gamma.unwrap_or(self.model.gamma),
            length: self.model.length,
            mu: self.bounds.mu,
            rho: c.rho,
            alpha: c.alpha,
            beta: c.beta,
            epsilon: self.model.epsilon,
            c_universal: c.c_universal,
            ..BoundInputs::reference()
        }
        .with_forcing(&f);
        inputs.length = self.model.length;
        if let Some(v) = self.bounds.f_l2 {
            inputs.f_l2 = v;
        }
        if let Some(v) = self.bounds.f_linf {
            inputs.f_linf = v;
        }
        if let Some(v) = self.bounds.f_h2 {
            inputs.f_h2 = v;
        }
        inputs.validate()?;
        Ok(inputs)
    }

    /// Bound inputs matching an assimilation run.
    pub fn assimilation_inputs(&self) -> Result<BoundInputs, CliError> {
        let c = self.assimilate.constants();
        let inputs = BoundInputs {
            gamma: self.model.gamma,
            length: self.model.length,
            mu: self.assimilate.mu,
            rho: c.rho,
            alpha: c.alpha,
            beta: c.beta,
            epsilon: self.model.epsilon,
            c_universal: c.c_universal,
            ..BoundInputs::reference()
        }
        .with_forcing(&self.model.forcing_field()?);
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Parses config text with defaults applied and unknown keys rejected.
pub fn parse_config(source: &str) -> Result<RunConfig, CliError> {
    parse_with_overrides(source, &[])
}

/// Like [`parse_config`], after applying `section.key=value` overrides.
/// Values are read as TOML and fall back to bare strings.
pub fn parse_with_overrides(source: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let table: toml::Table = source
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    config_from_table(table, overrides)
}

pub fn config_from_table(
    mut table: toml::Table,
    overrides: &[String],
) -> Result<RunConfig, CliError> {
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields one item");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.model.length, 2.0 * PI);
        assert_eq!(cfg.model.points, 128);
        assert_eq!(cfg.model.gamma, 0.5);
        assert_eq!(cfg.model.dt, 1e-3);
        assert_eq!(cfg.simulate.t_end, 10.0);
        let f = cfg.model.forcing_field().unwrap();
        let want = SpectralField::from_fn(cfg.model.grid().unwrap(), f64::cos).unwrap();
        assert!((&f - &want).l2() < 1e-14);
    }

    #[test]
    fn alpha_out_of_range_is_named() {
        let err = parse_config("[bounds]\nalpha = 2.5\n").unwrap_err();
        assert!(
            err.to_string().contains("alpha must lie in [1, 2)"),
            "{err}"
        );
        let err = parse_with_overrides("", &["assimilate.alpha=2".into()]).unwrap_err();
        assert!(err.to_string().contains("[1, 2)"));
    }

    #[test]
    fn unknown_keys_and_type_mismatch_rejected() {
        assert!(parse_config("[model]\nviscosity = 1.0\n").is_err());
        assert!(parse_config("[nope]\n").is_err());
        assert!(parse_config("[model]\npoints = \"many\"\n").is_err());
    }

    #[test]
    fn round_trip() {
        let src =
            "[model]\npoints = 64\nforcing = [[1, 1.0, 0.0], [2, 0.3, -1.5707963267948966]]\n\
                   [sweep]\nkind = \"modes\"\nvalues = [1.0, 2.0]\n[bounds]\nf_h2 = 3.5\n";
        let a = parse_config(src).unwrap();
        let b = parse_config(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.sweep.kind, SweepKind::Modes);
        assert_eq!(b.bounds.f_h2, Some(3.5));
    }

    #[test]
    fn overrides_apply() {
        let cfg = parse_with_overrides(
            "",
            &[
                "model.gamma=0.25".into(),
                "sweep.kind=assimilation_mu".into(),
                "model.forcing=[[2, 1.0, 0.0]]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.gamma, 0.25);
        assert_eq!(cfg.sweep.kind, SweepKind::AssimilationMu);
        assert_eq!(cfg.model.forcing, vec![ForcingTerm(2, 1.0, 0.0)]);
        assert!(parse_with_overrides("", &["model".into()]).is_err());
    }

    #[test]
    fn forcing_terms_match_pointwise() {
        let grid = GridSpec::new(2.0 * PI, 64).unwrap();
        let f = field_from_terms(
            grid,
            &[ForcingTerm(1, 1.0, 0.0), ForcingTerm(2, 0.3, -0.5 * PI)],
        )
        .unwrap();
        let want = SpectralField::from_fn(grid, |x| x.cos() + 0.3 * (2.0 * x).sin()).unwrap();
        assert!((&f - &want).l2() < 1e-14);
        assert!(field_from_terms(grid, &[ForcingTerm(0, 1.0, 0.0)]).is_err());
        assert!(field_from_terms(grid, &[ForcingTerm(40, 1.0, 0.0)]).is_err());
    }

    #[test]
    fn subcommand_names_round_trip() {
        for c in Subcommand::ALL {
            assert_eq!(c.name().parse::<Subcommand>().unwrap(), c);
        }
        assert!("plot".parse::<Subcommand>().is_err());
    }
}
