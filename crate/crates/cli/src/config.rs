//! Declarative TOML configuration for `run` and `plan`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uavmon::sim::{PipelineSettings, ScenarioSpec, SweepSpec};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "UAVMON_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            plots: true,
        }
    }
}

/// Configuration of a `run` sweep.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: OutputConfig,
    pub sweep: SweepSpec,
    pub scenario: ScenarioSpec,
    pub settings: PipelineSettings,
}

/// Configuration of a single-edge `plan`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub seed: u64,
    pub output: OutputConfig,
    pub scenario: ScenarioSpec,
    pub settings: PipelineSettings,
}

/// A configuration that could not be read or does not satisfy the schema.
#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    Schema(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            ConfigError::Schema(m) => f.write_str(m),
        }
    }
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, ConfigError> {
    // toml reports the line and column of the offending key or value
    toml::from_str(text).map_err(|e| ConfigError::Schema(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))
}

fn invalid(path: &Path, section: &str, e: uavmon::Error) -> ConfigError {
    ConfigError::Schema(format!("{}: [{section}] {e}", path.display()))
}

impl RunConfig {
    pub fn from_toml(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = parse(path, text)?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(path, &read(path)?)
    }

    pub fn validate(&self, path: &Path) -> Result<(), ConfigError> {
        self.sweep.validate().map_err(|e| invalid(path, "sweep", e))?;
        self.scenario.validate().map_err(|e| invalid(path, "scenario", e))?;
        self.settings.validate().map_err(|e| invalid(path, "settings", e))?;
        // every cell of the sweep must describe a valid scenario
        for key in self.sweep.keys().iter().filter(|k| k.trial == 0) {
            let mut spec = self.scenario.clone();
            if let Some(k) = key.cell_known {
                spec.n_known = k;
            }
            if let Some(p) = key.cell_pseudo {
                spec.cvt.n_pseudo = p;
            }
            spec.validate().map_err(|e| invalid(path, "sweep", e))?;
        }
        Ok(())
    }
}

impl PlanConfig {
    pub fn from_toml(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = parse(path, text)?;
        cfg.scenario.validate().map_err(|e| invalid(path, "scenario", e))?;
        cfg.settings.validate().map_err(|e| invalid(path, "settings", e))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(path, &read(path)?)
    }
}

/// Output directory: the `--out` flag, then [`OUT_ENV`], then the config.
pub fn resolve_out_dir(flag: Option<&Path>, config: &OutputConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => config.dir.clone(),
    }
}
