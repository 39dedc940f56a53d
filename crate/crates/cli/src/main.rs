//! `dsse-crb`: runs the CRB-ratio study and its diagnostics.
//!
//! Exit status: 0 on success, 1 when the run could not complete, 2 on usage
//! errors, 3 when the sweep finished but some cells failed to converge.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dsse_crb::experiment::output::{
    write_manifest, write_study, NetworkInfo, PlanInfo, RunManifest,
};
use dsse_crb::experiment::{run_study, StudyConfig, StudyContext};
use dsse_crb::measmodel::{default_plan, load_plan, MeasurementPlan, DEFAULT_SENSOR_SEED};
use dsse_crb::netmodel::{cigre_mv, Network, CIGRE_MV_JSON};
use dsse_crb::noise::{
    gaussian_only, load_variants, table1, CalibratedNoise, DistributionSpec, Variant,
};
use dsse_crb::powerflow::{DEFAULT_MAX_ITER as PF_MAX_ITER, DEFAULT_TOLERANCE_MVA};
use dsse_crb::{build_ybus, solve_power_flow, AdmittanceMatrix};
use log::info;

use config::{ConfigFile, PlanSource, RunConfig, VariantSource, OUT_ENV};

const EXIT_RUN_ERROR: u8 = 1;
const EXIT_FAILED_CELLS: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dsse-crb",
    version,
    about = "CRB-ratio study of WLS state estimation under non-Gaussian pseudo-measurements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the variant sweep and write CSVs plus a run manifest
    Sweep(Box<SweepArgs>),
    /// Print the Fisher information of one calibrated noise law
    Fisher(FisherArgs),
    /// Print the default measurement plan as JSON
    Plan(PlanArgs),
    /// Solve one power flow and print the bus voltages
    Powerflow(PowerflowArgs),
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// JSON config file; flags override its fields
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Network JSON file [default: bundled CIGRE MV fixture]
    #[arg(long, value_name = "PATH")]
    network: Option<PathBuf>,
    /// Measurement plan JSON file, or "default"
    #[arg(long, value_name = "PATH|default")]
    plan: Option<String>,
    /// Variant grid: "table1", "gaussian-only" or a JSON file
    #[arg(long, value_name = "table1|gaussian-only|PATH")]
    variants: Option<String>,
    /// Scenarios for CRB ratios and RMSE [default: 100]
    #[arg(long, value_name = "N")]
    scenarios: Option<usize>,
    /// Scenarios for empirical coverage [default: 1000]
    #[arg(long, value_name = "N")]
    coverage_scenarios: Option<usize>,
    /// Master seed for loading and noise streams [default: 42]
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Seed for the default plan's sensor accuracies [default: 7]
    #[arg(long, value_name = "N")]
    sensor_seed: Option<u64>,
    /// Power-flow mismatch tolerance in MVA [default: 1e-8]
    #[arg(long, value_name = "MVA")]
    pf_tol: Option<f64>,
    /// Power-flow iteration limit [default: 30]
    #[arg(long, value_name = "N")]
    pf_max_iter: Option<usize>,
    /// WLS step tolerance on the state infinity norm [default: 1e-8]
    #[arg(long, value_name = "TOL")]
    wls_tol: Option<f64>,
    /// WLS iteration limit [default: 100]
    #[arg(long, value_name = "N")]
    wls_max_iter: Option<usize>,
    /// Halve WLS steps that increase the objective
    #[arg(long)]
    damping: bool,
    /// Output directory [default: $DSSE_CRB_OUT, else "results"]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl SweepArgs {
    fn as_overrides(&self) -> ConfigFile {
        ConfigFile {
            network: self.network.clone(),
            plan: self.plan.clone(),
            variants: self.variants.clone(),
            n_scenarios_crb: self.scenarios,
            n_scenarios_coverage: self.coverage_scenarios,
            master_seed: self.seed,
            sensor_seed: self.sensor_seed,
            pf_tol_mva: self.pf_tol,
            pf_max_iter: self.pf_max_iter,
            wls_step_tol: self.wls_tol,
            wls_max_iter: self.wls_max_iter,
            wls_damping: self.damping.then_some(true),
            out: self.out.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    #[value(alias = "student_t")]
    StudentT,
    Laplace,
    #[value(alias = "skew_normal")]
    SkewNormal,
    #[value(alias = "biased_gaussian")]
    BiasedGaussian,
}

#[derive(Debug, Args)]
struct FisherArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Absolute standard deviation
    #[arg(long)]
    sigma: f64,
    /// True value the law is calibrated to
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Student-t degrees of freedom
    #[arg(long, default_value_t = 3.0)]
    nu: f64,
    /// Skew-normal shape
    #[arg(long, default_value_t = 5.0)]
    alpha: f64,
    /// Biased-Gaussian mean shift as a fraction of mu
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    bias: f64,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Network JSON file [default: bundled CIGRE MV fixture]
    #[arg(long, value_name = "PATH")]
    network: Option<PathBuf>,
    /// Seed for the sensor accuracies
    #[arg(long, value_name = "N", default_value_t = DEFAULT_SENSOR_SEED)]
    sensor_seed: u64,
}

#[derive(Debug, Args)]
struct PowerflowArgs {
    /// Network JSON file [default: bundled CIGRE MV fixture]
    #[arg(long, value_name = "PATH")]
    network: Option<PathBuf>,
    /// Load scaling factor
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Mismatch tolerance in MVA
    #[arg(long, value_name = "MVA", default_value_t = DEFAULT_TOLERANCE_MVA)]
    tol: f64,
    #[arg(long, value_name = "N", default_value_t = PF_MAX_ITER)]
    max_iter: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(args) => return cmd_sweep(&args),
        Command::Fisher(args) => cmd_fisher(&args),
        Command::Plan(args) => cmd_plan(&args),
        Command::Powerflow(args) => cmd_powerflow(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUN_ERROR)
        }
    }
}

/// Network plus the bytes its hash is taken over.
fn read_network(path: Option<&Path>) -> Result<(Network, NetworkInfo)> {
    match path {
        None => {
            let net = cigre_mv();
            let info = NetworkInfo::new(&net, "builtin:cigre_mv", CIGRE_MV_JSON.as_bytes());
            Ok((net, info))
        }
        Some(p) => {
            let bytes =
                std::fs::read(p).with_context(|| format!("reading network {}", p.display()))?;
            let text = std::str::from_utf8(&bytes)
                .with_context(|| format!("network {} is not UTF-8", p.display()))?;
            let net = Network::from_json(text)
                .with_context(|| format!("loading network {}", p.display()))?;
            let info = NetworkInfo::new(&net, p.display().to_string(), &bytes);
            Ok((net, info))
        }
    }
}

fn read_plan(
    net: &Network,
    y: &AdmittanceMatrix,
    source: &PlanSource,
) -> Result<(MeasurementPlan, PlanInfo)> {
    match source {
        PlanSource::Default { sensor_seed } => {
            let plan = default_plan(net, y, *sensor_seed).context("building default plan")?;
            let info = PlanInfo::new(&plan, "default", Some(*sensor_seed));
            Ok((plan, info))
        }
        PlanSource::File(p) => {
            let plan =
                load_plan(net, y, p).with_context(|| format!("loading plan {}", p.display()))?;
            let info = PlanInfo::new(&plan, p.display().to_string(), None);
            Ok((plan, info))
        }
    }
}

fn read_variants(source: &VariantSource) -> Result<Vec<Variant>> {
    match source {
        VariantSource::Table1 => Ok(table1()),
        VariantSource::GaussianOnly => Ok(gaussian_only()),
        VariantSource::File(p) => {
            load_variants(p).with_context(|| format!("loading variants {}", p.display()))
        }
    }
}

/// Config from the file (if any) overlaid by flags. On a bad file the flags
/// alone still give the output directory for the failure manifest.
fn resolve_config(
    args: &SweepArgs,
) -> std::result::Result<RunConfig, (StudyConfig, PathBuf, anyhow::Error)> {
    let env_out = std::env::var(OUT_ENV).ok();
    let flags = args.as_overrides();
    let file = match &args.config {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    };
    let merged = file.map(|f| f.overlay(flags.clone()));
    match merged.and_then(|c| RunConfig::resolve(c, env_out.clone())) {
        Ok(c) => Ok(c),
        Err(e) => {
            let study = RunConfig::resolve(flags.clone(), None)
                .map(|c| c.study)
                .unwrap_or_default();
            Err((study, config::resolve_out(flags.out, env_out), e))
        }
    }
}

fn cmd_sweep(args: &SweepArgs) -> ExitCode {
    let config = match resolve_config(args) {
        Ok(c) => c,
        Err((study, out, e)) => {
            return fail(&out, RunManifest::unresolved(&study, format!("{e:#}")), e)
        }
    };
    let inputs = read_network(config.network.as_deref()).and_then(|(net, net_info)| {
        let y = build_ybus(&net);
        let (plan, plan_info) = read_plan(&net, &y, &config.plan)?;
        let variants = read_variants(&config.variants)?;
        Ok((net, net_info, y, plan, plan_info, variants))
    });
    let (net, net_info, y, plan, plan_info, variants) = match inputs {
        Ok(v) => v,
        Err(e) => {
            let manifest = RunManifest::unresolved(&config.study, format!("{e:#}"));
            return fail(&config.out, manifest, e);
        }
    };
    let mut manifest = RunManifest::new(&config.study, net_info, plan_info, &variants);

    info!(
        "sweep: {} variants, {} scenarios",
        variants.len(),
        config
            .study
            .n_scenarios_crb
            .max(config.study.n_scenarios_coverage)
    );
    let ctx = StudyContext {
        net: &net,
        y: &y,
        plan: &plan,
    };
    let output = match run_study(&ctx, &variants, &config.study) {
        Ok(o) => o,
        Err(e) => {
            manifest.error = Some(e.to_string());
            return fail(&config.out, manifest, e.into());
        }
    };
    if let Err(e) = write_study(&config.out, &output, &mut manifest) {
        manifest.error = Some(e.to_string());
        return fail(&config.out, manifest, e.into());
    }
    if let Err(e) = write_manifest(&config.out, &manifest) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_RUN_ERROR);
    }

    let failed = &output.sweep.failed;
    let total = output.sweep.variants.len() * output.sweep.scenarios.len();
    println!(
        "wrote {} ({} cells, {} failed)",
        config.out.display(),
        total,
        failed.len()
    );
    for f in failed {
        eprintln!(
            "failed cell {} / scenario {}: {}",
            f.variant_id, f.scenario_id, f.reason
        );
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED_CELLS)
    }
}

/// Reports `err`, records it in the manifest, and exits with the run-error status.
fn fail(out: &Path, manifest: RunManifest, err: anyhow::Error) -> ExitCode {
    eprintln!("error: {err:#}");
    if let Err(e) = write_manifest(out, &manifest) {
        eprintln!("error: could not write manifest: {e}");
    }
    ExitCode::from(EXIT_RUN_ERROR)
}

/// Writes command output in one piece; a closed pipe is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn cmd_fisher(a: &FisherArgs) -> Result<()> {
    if a.mu == 0.0 {
        return Err(anyhow!("--mu must be nonzero (spreads are relative to it)"));
    }
    let sigma_pct = a.sigma / a.mu.abs();
    let spec = match a.family {
        FamilyArg::Gaussian => DistributionSpec::Gaussian { sigma_pct },
        FamilyArg::StudentT => DistributionSpec::StudentT {
            sigma_pct,
            nu: a.nu,
        },
        FamilyArg::Laplace => DistributionSpec::Laplace { sigma_pct },
        FamilyArg::SkewNormal => DistributionSpec::SkewNormal {
            sigma_pct,
            alpha: a.alpha,
        },
        FamilyArg::BiasedGaussian => DistributionSpec::BiasedGaussian {
            sigma_pct,
            bias_pct: a.bias,
        },
    };
    let cn = CalibratedNoise::with_sigma(spec, a.mu, a.sigma)?;
    let quad = cn.quadrature_fisher();
    let f = cn.fisher_information()?;
    let closed = cn
        .closed_form_fisher()
        .map_or_else(|| "n/a".to_owned(), |c| c.to_string());
    emit(&format!(
        "family       {}\nmu           {}\nsigma        {}\nparams       {}\nF closed     {closed}\n\
         F quadrature {} (error bound {:.1e})\nF sigma^2    {}\n",
        spec.family(),
        a.mu,
        a.sigma,
        serde_json::to_string(&cn.params)?,
        quad.value,
        quad.error,
        f * a.sigma * a.sigma,
    ))
}

fn cmd_plan(a: &PlanArgs) -> Result<()> {
    let (net, _) = read_network(a.network.as_deref())?;
    let y = build_ybus(&net);
    let plan = default_plan(&net, &y, a.sensor_seed)?;
    emit(&(plan.to_json() + "\n"))
}

fn cmd_powerflow(a: &PowerflowArgs) -> Result<()> {
    use std::fmt::Write;
    if !(a.lambda > 0.0 && a.tol > 0.0) {
        return Err(anyhow!("--lambda and --tol must be positive"));
    }
    let (net, _) = read_network(a.network.as_deref())?;
    let y = build_ybus(&net);
    let sol = solve_power_flow(&net, &y, a.lambda, a.tol, a.max_iter)?;
    let mut text = format!(
        "iterations {}, max mismatch {:.3e} MVA\n",
        sol.iterations, sol.max_mismatch
    );
    writeln!(text, "{:>4} {:>10} {:>11}", "bus", "vm_pu", "va_deg")?;
    let v = sol.state.bus_voltages(&net);
    for (pos, bus) in net.buses().iter().enumerate() {
        writeln!(
            text,
            "{:>4} {:>10.6} {:>11.6}",
            bus.id,
            v.vm[pos],
            v.va[pos].to_degrees()
        )?;
    }
    emit(&text)
}
