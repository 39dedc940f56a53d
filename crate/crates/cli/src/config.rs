//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dsse_crb::experiment::{PowerFlowOptions, StudyConfig};
use dsse_crb::measmodel::DEFAULT_SENSOR_SEED;
use serde::Deserialize;

pub const OUT_ENV: &str = "DSSE_CRB_OUT";
pub const DEFAULT_OUT: &str = "results";

/// Every field is optional; absent fields fall back to flags, then defaults.
#[derive(Debug, Default, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub network: Option<PathBuf>,
    pub plan: Option<String>,
    pub variants: Option<String>,
    pub n_scenarios_crb: Option<usize>,
    pub n_scenarios_coverage: Option<usize>,
    pub master_seed: Option<u64>,
    pub sensor_seed: Option<u64>,
    pub pf_tol_mva: Option<f64>,
    pub pf_max_iter: Option<usize>,
    pub wls_step_tol: Option<f64>,
    pub wls_max_iter: Option<usize>,
    pub wls_damping: Option<bool>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Field-wise overlay: values set in `top` win.
    pub fn overlay(self, top: ConfigFile) -> ConfigFile {
        ConfigFile {
            network: top.network.or(self.network),
            plan: top.plan.or(self.plan),
            variants: top.variants.or(self.variants),
            n_scenarios_crb: top.n_scenarios_crb.or(self.n_scenarios_crb),
            n_scenarios_coverage: top.n_scenarios_coverage.or(self.n_scenarios_coverage),
            master_seed: top.master_seed.or(self.master_seed),
            sensor_seed: top.sensor_seed.or(self.sensor_seed),
            pf_tol_mva: top.pf_tol_mva.or(self.pf_tol_mva),
            pf_max_iter: top.pf_max_iter.or(self.pf_max_iter),
            wls_step_tol: top.wls_step_tol.or(self.wls_step_tol),
            wls_max_iter: top.wls_max_iter.or(self.wls_max_iter),
            wls_damping: top.wls_damping.or(self.wls_damping),
            out: top.out.or(self.out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanSource {
    Default { sensor_seed: u64 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum VariantSource {
    Table1,
    GaussianOnly,
    File(PathBuf),
}

impl VariantSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "table1" => VariantSource::Table1,
            "gaussian-only" => VariantSource::GaussianOnly,
            path => VariantSource::File(PathBuf::from(path)),
        }
    }
}

/// Fully resolved sweep configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `None` selects the bundled fixture.
    pub network: Option<PathBuf>,
    pub plan: PlanSource,
    pub variants: VariantSource,
    pub study: StudyConfig,
    pub out: PathBuf,
}

/// Output directory: flag or file, then the environment, then the default.
pub fn resolve_out(merged: Option<PathBuf>, env: Option<String>) -> PathBuf {
    merged
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

impl RunConfig {
    pub fn resolve(c: ConfigFile, env_out: Option<String>) -> Result<Self> {
        let defaults = StudyConfig::default();
        let study = StudyConfig {
            master_seed: c.master_seed.unwrap_or(defaults.master_seed),
            n_scenarios_crb: c.n_scenarios_crb.unwrap_or(defaults.n_scenarios_crb),
            n_scenarios_coverage: c
                .n_scenarios_coverage
                .unwrap_or(defaults.n_scenarios_coverage),
            power_flow: PowerFlowOptions {
                tol_mva: c.pf_tol_mva.unwrap_or(defaults.power_flow.tol_mva),
                max_iter: c.pf_max_iter.unwrap_or(defaults.power_flow.max_iter),
            },
            wls_step_tol: c.wls_step_tol.unwrap_or(defaults.wls_step_tol),
            wls_max_iter: c.wls_max_iter.unwrap_or(defaults.wls_max_iter),
            wls_damping: c.wls_damping.unwrap_or(defaults.wls_damping),
        };
        let plan = match c.plan.as_deref() {
            None | Some("default") => PlanSource::Default {
                sensor_seed: c.sensor_seed.unwrap_or(DEFAULT_SENSOR_SEED),
            },
            Some(path) => PlanSource::File(PathBuf::from(path)),
        };
        let config = RunConfig {
            network: c.network,
            plan,
            variants: VariantSource::parse(c.variants.as_deref().unwrap_or("table1")),
            study,
            out: resolve_out(c.out, env_out),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let s = &self.study;
        if s.n_scenarios_crb == 0 || s.n_scenarios_coverage == 0 {
            bail!("scenario counts must be positive");
        }
        if s.power_flow.max_iter == 0 || s.wls_max_iter == 0 {
            bail!("iteration limits must be positive");
        }
        for (name, tol) in [
            ("power-flow tolerance", s.power_flow.tol_mva),
            ("WLS step tolerance", s.wls_step_tol),
        ] {
            if !(tol.is_finite() && tol > 0.0) {
                bail!("{name} must be positive, got {tol}");
            }
        }
        Ok(())
    }
}
