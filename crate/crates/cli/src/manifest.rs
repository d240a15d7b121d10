//! Run manifest: the resolved config plus everything needed to replay it.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use kdvda_core::integrator::CONTOUR_POINTS;
use kdvda_core::spectral::{GENERATOR_NAME, LINF_OVERSAMPLING};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Subcommand};
use crate::export::write_text;
use crate::CliError;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Build identity; set `KDVDA_BUILD_ID` at compile time to pin a commit.
pub fn build_id() -> &'static str {
    option_env!("KDVDA_BUILD_ID").unwrap_or(concat!("v", env!("CARGO_PKG_VERSION")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeInfo {
    pub time_stepper: String,
    pub contour_points: usize,
    pub dealias_cutoff: usize,
    pub linf_oversampling: usize,
    pub float_note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub subcommand: Subcommand,
    pub artifact_version: String,
    pub build_id: String,
    pub generator: String,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
    pub scheme: SchemeInfo,
    pub config: RunConfig,
    /// Experiment-specific numbers; replaying must reproduce them exactly.
    pub summary: toml::Table,
}

impl RunManifest {
    pub fn new(
        subcommand: Subcommand,
        config: &RunConfig,
        seeds: Vec<u64>,
    ) -> Result<Self, CliError> {
        let cutoff = config.model.grid()?.cutoff();
        Ok(Self {
            manifest_version: MANIFEST_VERSION,
            subcommand,
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            build_id: build_id().into(),
            generator: GENERATOR_NAME.into(),
            seeds,
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            wall_clock_seconds: 0.0,
            files: Vec::new(),
            scheme: SchemeInfo {
                time_stepper: "ETDRK4, contour-integral coefficients".into(),
                contour_points: CONTOUR_POINTS,
                dealias_cutoff: cutoff,
                linf_oversampling: LINF_OVERSAMPLING,
                float_note: "bit-exact only for the same build on the same machine; \
                             FFT and summation order follow rustfft and sequential loops"
                    .into(),
            },
            config: config.clone(),
            summary: toml::Table::new(),
        })
    }

    /// Stores any serializable value under `key`; `u128` and other values
    /// TOML cannot hold must be converted by the caller first.
    pub fn record<T: Serialize>(&mut self, key: &str, value: T) -> Result<(), CliError> {
        let v = toml::Value::try_from(value)
            .map_err(|e| CliError::Config(format!("summary `{key}`: {e}")))?;
        self.summary.insert(key.into(), v);
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_text(&dir.join(MANIFEST_FILE), &self.to_toml()?)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Splits config text into the config table and, for a manifest, the
/// subcommand it was produced by.
pub fn load_source(text: &str) -> Result<(toml::Table, Option<Subcommand>), CliError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    if !table.contains_key("manifest_version") {
        return Ok((table, None));
    }
    let sub = table
        .get("subcommand")
        .and_then(toml::Value::as_str)
        .ok_or_else(|| CliError::Config("manifest has no subcommand".into()))?
        .parse()?;
    match table.remove("config") {
        Some(toml::Value::Table(t)) => Ok((t, Some(sub))),
        _ => Err(CliError::Config("manifest has no [config] table".into())),
    }
}
