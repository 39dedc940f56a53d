//! CSV artifacts and the run manifest.
//!
//! Every CSV starts with one comment line `# dsse-crb-schema: <table>/<version>`
//! followed by a header row. Readers refuse a file whose schema line is missing
//! or names another table or version.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    CoverageLevel, CoverageRow, FailedCell, PowerFlowOptions, RmseRow, StudyConfig, StudyOutput,
};
use crate::crb::CrbReport;
use crate::error::{Error, Result};
use crate::measmodel::{MeasurementPlan, Source};
use crate::netmodel::Network;
use crate::noise::Variant;

pub const SCHEMA_PREFIX: &str = "# dsse-crb-schema: ";
pub const CRB_SCHEMA: &str = "crb_ratios/1";
pub const COVERAGE_SCHEMA: &str = "coverage/1";
pub const RMSE_SCHEMA: &str = "rmse/1";
pub const MANIFEST_SCHEMA: &str = "manifest/1";

pub const CRB_FILE: &str = "crb_ratios.csv";
pub const COVERAGE_FILE: &str = "coverage.csv";
pub const RMSE_FILE: &str = "rmse.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const CRB_COLUMNS: [&str; 8] = [
    "variant_id",
    "scenario_id",
    "lambda",
    "bus_id",
    "state_kind",
    "assumed_var",
    "true_var",
    "rho",
];
pub const COVERAGE_COLUMNS: [&str; 5] =
    ["variant_id", "level", "cov_wls", "cov_true", "n_scenarios"];
pub const RMSE_COLUMNS: [&str; 4] = ["variant_id", "scenario_id", "lambda", "rmse_vmag"];

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn table<W: Write>(out: W, schema: &str, columns: &[&str]) -> io::Result<csv::Writer<W>> {
    let mut out = out;
    writeln!(out, "{SCHEMA_PREFIX}{schema}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns)?;
    Ok(w)
}

pub fn write_crb_csv<W: Write>(out: W, reports: &[CrbReport]) -> io::Result<()> {
    let mut w = table(out, CRB_SCHEMA, &CRB_COLUMNS)?;
    for r in reports {
        for s in &r.states {
            w.write_record([
                r.variant_id.clone(),
                r.scenario_id.to_string(),
                r.lambda.to_string(),
                s.bus_id.to_string(),
                s.state_kind.as_str().to_owned(),
                s.assumed_var.to_string(),
                s.true_var.to_string(),
                s.rho.to_string(),
            ])?;
        }
    }
    w.flush()
}

pub fn write_coverage_csv<W: Write>(out: W, rows: &[CoverageRow]) -> io::Result<()> {
    let mut w = table(out, COVERAGE_SCHEMA, &COVERAGE_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.variant_id.clone(),
            r.level.to_string(),
            r.cov_wls.to_string(),
            r.cov_true.to_string(),
            r.n_scenarios.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_rmse_csv<W: Write>(out: W, rows: &[RmseRow]) -> io::Result<()> {
    let mut w = table(out, RMSE_SCHEMA, &RMSE_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.variant_id.clone(),
            r.scenario_id.to_string(),
            r.lambda.to_string(),
            r.rmse_vmag.to_string(),
        ])?;
    }
    w.flush()
}

/// Parsed CSV artifact: header plus string records.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of one column parsed as `f64`.
    pub fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .column(name)
            .ok_or_else(|| Error::Schema(format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[k].parse()
                    .map_err(|_| Error::Schema(format!("column {name}: not a number: {}", r[k])))
            })
            .collect()
    }
}

/// Parses an artifact, checking its schema line and header.
pub fn read_table(text: &str, schema: &str, columns: &[&str]) -> Result<Table> {
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    let found = first
        .strip_prefix(SCHEMA_PREFIX)
        .ok_or_else(|| Error::Schema("missing schema line".into()))?;
    if found.trim_end() != schema {
        return Err(Error::Schema(format!(
            "expected {schema}, found {}",
            found.trim_end()
        )));
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != columns {
        return Err(Error::Schema(format!("unexpected columns {header:?}")));
    }
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|rec| rec.iter().map(str::to_owned).collect())
                .map_err(|e| Error::Schema(e.to_string()))
        })
        .collect::<Result<_>>()?;
    Ok(Table {
        columns: header,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkInfo {
    pub name: Option<String>,
    pub source: String,
    pub sha256: String,
    pub n_buses: usize,
    pub n_states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanInfo {
    pub source: String,
    pub sensor_seed: Option<u64>,
    pub sha256: String,
    pub n_measurements: usize,
    pub n_real: usize,
    pub n_pseudo: usize,
}

impl PlanInfo {
    pub fn new(
        plan: &MeasurementPlan,
        source: impl Into<String>,
        sensor_seed: Option<u64>,
    ) -> Self {
        PlanInfo {
            source: source.into(),
            sensor_seed,
            sha256: sha256_hex(plan.to_json().as_bytes()),
            n_measurements: plan.len(),
            n_real: plan.count(Source::Real),
            n_pseudo: plan.count(Source::Pseudo),
        }
    }
}

impl NetworkInfo {
    /// `bytes` are the network file as read, or the bundled fixture.
    pub fn new(net: &Network, source: impl Into<String>, bytes: &[u8]) -> Self {
        NetworkInfo {
            name: net.name().map(str::to_owned),
            source: source.into(),
            sha256: sha256_hex(bytes),
            n_buses: net.n_buses(),
            n_states: net.n_states(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub total: usize,
    pub converged: usize,
    pub failed: Vec<FailedCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub version: String,
    pub master_seed: u64,
    pub n_scenarios_crb: usize,
    pub n_scenarios_coverage: usize,
    pub power_flow: PowerFlowOptions,
    pub wls_step_tol: f64,
    pub wls_max_iter: usize,
    pub wls_damping: bool,
    pub coverage_levels: Vec<CoverageLevel>,
    /// `None` when the run stopped before its inputs resolved.
    pub network: Option<NetworkInfo>,
    pub plan: Option<PlanInfo>,
    pub variants: Vec<Variant>,
    pub outputs: Vec<OutputFile>,
    pub cells: Option<CellSummary>,
    /// Set when the run stopped before the sweep finished.
    pub error: Option<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub schema: String,
}

pub const NOTES: [&str; 5] = [
    "Not reproduced: the reference minimum rho of 0.255 at bus 12 and the threshold fractions 92.2%, 42.7% and 10.7% for Student-t pseudo-measurements. They depend on unpublished line impedances and seeds, and the closed-form Fisher information of a variance-matched t(3) equals that of the Laplace law (2/sigma^2), so rho for t(3) is bounded below by 0.5 like Laplace.",
    "The measurement vector has 37 entries (17 real, 20 pseudo including one zero-injection pair), following the itemised plan; the stated total of 36 is inconsistent with that enumeration.",
    "Real-sensor accuracies are drawn once from the sensor seed and shared by every scenario and every variant.",
    "Measurement noise for scenario s and measurement i comes from a stream keyed by (master_seed, s, i), independent of the variant, so variants are compared under common random numbers.",
    "Pseudo-measurement laws describe the bus consumption -z*, so a right-skewed law models demand spikes; a biased law shifts the consumption mean by bias_pct.",
];

impl RunManifest {
    pub fn new(
        config: &StudyConfig,
        network: NetworkInfo,
        plan: PlanInfo,
        variants: &[Variant],
    ) -> Self {
        Self::base(config, Some(network), Some(plan), variants)
    }

    fn base(
        config: &StudyConfig,
        network: Option<NetworkInfo>,
        plan: Option<PlanInfo>,
        variants: &[Variant],
    ) -> Self {
        RunManifest {
            schema: MANIFEST_SCHEMA.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            master_seed: config.master_seed,
            n_scenarios_crb: config.n_scenarios_crb,
            n_scenarios_coverage: config.n_scenarios_coverage,
            power_flow: config.power_flow.clone(),
            wls_step_tol: config.wls_step_tol,
            wls_max_iter: config.wls_max_iter,
            wls_damping: config.wls_damping,
            coverage_levels: super::COVERAGE_LEVELS.to_vec(),
            network,
            plan,
            variants: variants.to_vec(),
            outputs: Vec::new(),
            cells: None,
            error: None,
            notes: NOTES.iter().map(|s| (*s).to_owned()).collect(),
        }
    }

    /// Manifest for a run whose network, plan or variant grid failed to load.
    pub fn unresolved(config: &StudyConfig, error: impl Into<String>) -> Self {
        RunManifest {
            error: Some(error.into()),
            ..Self::base(config, None, None, &[])
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(text).map_err(|e| Error::parse("manifest", e))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Schema(format!(
                "expected {MANIFEST_SCHEMA}, found {}",
                m.schema
            )));
        }
        Ok(m)
    }
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

type CsvWriter<'a> = dyn Fn(&mut dyn Write) -> io::Result<()> + 'a;

/// Writes the three CSVs into `dir` and records them in the manifest.
pub fn write_study(
    dir: &Path,
    output: &StudyOutput,
    manifest: &mut RunManifest,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let files: [(&str, &str, &CsvWriter); 3] = [
        (CRB_FILE, CRB_SCHEMA, &|w| write_crb_csv(w, &output.crb)),
        (COVERAGE_FILE, COVERAGE_SCHEMA, &|w| {
            write_coverage_csv(w, &output.coverage)
        }),
        (RMSE_FILE, RMSE_SCHEMA, &|w| write_rmse_csv(w, &output.rmse)),
    ];
    for (name, schema, write) in files {
        let path = dir.join(name);
        let mut f = create(&path)?;
        write(&mut f)
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&path, e))?;
        manifest.outputs.push(OutputFile {
            file: name.to_owned(),
            schema: schema.to_owned(),
        });
        written.push(path);
    }
    let sweep = &output.sweep;
    let total = sweep.variants.len() * sweep.scenarios.len();
    manifest.cells = Some(CellSummary {
        total,
        converged: total - sweep.failed.len(),
        failed: sweep.failed.clone(),
    });
    Ok(written)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
