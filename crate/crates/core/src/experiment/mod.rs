//! Monte Carlo study: load scenarios, a parallel sweep over
//! `(variant, scenario)` cells, and the CRB, coverage and RMSE summaries.
//!
//! Scenario `i` is the same operating point for every scenario count, and its
//! measurement noise is keyed by `(master_seed, i, measurement)` only, so all
//! variants see common random numbers and the first `n` scenarios of a larger
//! run reproduce a smaller run exactly.

pub mod output;

use log::{debug, warn};
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crb::{build_true_weights, crb_ratio, CrbDiagonal, CrbReport};
use crate::error::{Error, Result};
use crate::measmodel::{evaluate_h, sample_measurements, MeasurementPlan, NoiseLibrary};
use crate::netmodel::{AdmittanceMatrix, Network};
use crate::noise::{Family, Variant};
use crate::powerflow::{self, solve_power_flow, StateVector};
use crate::rng::{self, Domain};
use crate::wls::{self, build_weights, estimate, WlsOptions};

pub const DEFAULT_MASTER_SEED: u64 = 42;
pub const LAMBDA_RANGE: (f64, f64) = (0.5, 1.5);
/// Resampling budget per requested scenario.
pub const ATTEMPTS_PER_SCENARIO: usize = 10;

/// Two-sided interval multipliers.
pub const COVERAGE_LEVELS: [CoverageLevel; 2] = [
    CoverageLevel {
        level: 0.68,
        z: 1.0,
    },
    CoverageLevel {
        level: 0.95,
        z: 1.96,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageLevel {
    pub level: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowOptions {
    pub tol_mva: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tol_mva: powerflow::DEFAULT_TOLERANCE_MVA,
            max_iter: powerflow::DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: u64,
    pub lambda: f64,
    /// Draws rejected before this one converged.
    pub attempt: u64,
    pub x_star: StateVector,
}

/// Draws `n` converged operating points with `lambda ~ U(0.5, 1.5)`. A draw
/// whose power flow fails is replaced by the next draw of the same scenario.
pub fn generate_scenarios(
    net: &Network,
    y: &AdmittanceMatrix,
    n: usize,
    master_seed: u64,
    pf: &PowerFlowOptions,
) -> Result<Vec<Scenario>> {
    assert!(n > 0, "need at least one scenario");
    let budget = ATTEMPTS_PER_SCENARIO * n;
    let mut attempts = 0;
    let mut out = Vec::with_capacity(n);
    for id in 0..n as u64 {
        for attempt in 0.. {
            if attempts == budget {
                return Err(Error::ScenarioBudget {
                    attempts,
                    converged: out.len(),
                    requested: n,
                });
            }
            attempts += 1;
            let lambda = rng::stream(master_seed, Domain::LoadScale, id, attempt)
                .random_range(LAMBDA_RANGE.0..LAMBDA_RANGE.1);
            match solve_power_flow(net, y, lambda, pf.tol_mva, pf.max_iter) {
                Ok(sol) => {
                    out.push(Scenario {
                        id,
                        lambda,
                        attempt,
                        x_star: sol.state,
                    });
                    break;
                }
                Err(e) => debug!("scenario {id} attempt {attempt} (lambda {lambda}) rejected: {e}"),
            }
        }
    }
    Ok(out)
}

/// Network, admittance and plan shared by every cell.
pub struct StudyContext<'a> {
    pub net: &'a Network,
    pub y: &'a AdmittanceMatrix,
    pub plan: &'a MeasurementPlan,
}

/// Outcome of one converged `(variant, scenario)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub crb: CrbDiagonal,
    /// `|V|_hat - |V|*` over non-slack buses.
    pub vmag_error: DVector<f64>,
    pub iterations: usize,
}

impl CellResult {
    pub fn rmse_vmag(&self) -> f64 {
        (self.vmag_error.norm_squared() / self.vmag_error.len() as f64).sqrt()
    }

    /// Number of `|V|` states whose error lies inside `z * sqrt(var)`, for
    /// the assumed and the true variances.
    pub fn covered(&self, z: f64) -> (usize, usize) {
        let n = self.vmag_error.len();
        let mut wls = 0;
        let mut truth = 0;
        for (k, e) in self.vmag_error.iter().enumerate() {
            let e = e.abs();
            wls += usize::from(e <= z * self.crb.assumed_var[n + k].sqrt());
            truth += usize::from(e <= z * self.crb.true_var[n + k].sqrt());
        }
        (wls, truth)
    }
}

pub fn run_cell(
    ctx: &StudyContext,
    variant: &Variant,
    scenario: &Scenario,
    master_seed: u64,
    opts: &WlsOptions,
) -> Result<CellResult> {
    let z_true = evaluate_h(ctx.net, ctx.y, ctx.plan, &scenario.x_star);
    let library = NoiseLibrary::build(ctx.plan, &z_true, &variant.spec)?;
    let w_assumed = build_weights(ctx.plan, &library);
    let w_true = build_true_weights(ctx.plan, &library)?;
    let z = sample_measurements(&library, master_seed, scenario.id);
    let est = estimate(
        ctx.net,
        ctx.y,
        ctx.plan,
        &z,
        &w_assumed,
        &StateVector::flat(ctx.net),
        opts,
    )?;
    if !est.converged {
        return Err(Error::EstimationDiverged {
            iterations: est.iterations,
            step_norm: est.final_step_norm,
        });
    }
    let crb = crb_ratio(&est.jacobian, &w_assumed, &w_true)?;
    let n = scenario.x_star.vmag.len();
    let vmag_error = DVector::from_iterator(
        n,
        (0..n).map(|k| est.x_hat[n + k] - scenario.x_star.vmag[k]),
    );
    Ok(CellResult {
        crb,
        vmag_error,
        iterations: est.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedCell {
    pub variant_id: String,
    pub scenario_id: u64,
    pub reason: String,
}

/// Results of a sweep, indexed `[variant][scenario]`.
#[derive(Debug, Clone)]
pub struct SweepResults {
    pub variants: Vec<Variant>,
    pub scenarios: Vec<Scenario>,
    pub cells: Vec<Vec<Option<CellResult>>>,
    pub failed: Vec<FailedCell>,
}

/// Runs every `(variant, scenario)` cell in parallel. Cells that fail are
/// recorded in `failed` and left empty.
pub fn run_sweep(
    ctx: &StudyContext,
    variants: &[Variant],
    scenarios: &[Scenario],
    master_seed: u64,
    opts: &WlsOptions,
) -> SweepResults {
    let ns = scenarios.len();
    let flat: Vec<Result<CellResult>> = (0..variants.len() * ns)
        .into_par_iter()
        .map(|i| {
            run_cell(
                ctx,
                &variants[i / ns],
                &scenarios[i % ns],
                master_seed,
                opts,
            )
        })
        .collect();

    let mut cells: Vec<Vec<Option<CellResult>>> = Vec::with_capacity(variants.len());
    let mut failed = Vec::new();
    let mut it = flat.into_iter();
    for v in variants {
        let mut row = Vec::with_capacity(ns);
        for s in scenarios {
            match it.next().expect("one result per cell") {
                Ok(cell) => row.push(Some(cell)),
                Err(e) => {
                    warn!("cell ({}, {}) failed: {e}", v.id, s.id);
                    failed.push(FailedCell {
                        variant_id: v.id.clone(),
                        scenario_id: s.id,
                        reason: e.to_string(),
                    });
                    row.push(None);
                }
            }
        }
        cells.push(row);
    }
    SweepResults {
        variants: variants.to_vec(),
        scenarios: scenarios.to_vec(),
        cells,
        failed,
    }
}

impl SweepResults {
    fn converged(
        &self,
        v: usize,
        limit: usize,
    ) -> impl Iterator<Item = (&Scenario, &CellResult)> + '_ {
        self.scenarios
            .iter()
            .zip(&self.cells[v])
            .take(limit)
            .filter_map(|(s, c)| c.as_ref().map(|c| (s, c)))
    }

    /// CRB reports for the first `limit` scenarios, variant-major.
    pub fn crb_reports(&self, net: &Network, limit: usize) -> Vec<CrbReport> {
        let mut out = Vec::new();
        for (v, variant) in self.variants.iter().enumerate() {
            for (s, c) in self.converged(v, limit) {
                out.push(CrbReport::new(net, &variant.id, s.id, s.lambda, &c.crb));
            }
        }
        out
    }

    pub fn rmse_summary(&self, limit: usize) -> Vec<RmseRow> {
        let mut out = Vec::new();
        for (v, variant) in self.variants.iter().enumerate() {
            for (s, c) in self.converged(v, limit) {
                out.push(RmseRow {
                    variant_id: variant.id.clone(),
                    scenario_id: s.id,
                    lambda: s.lambda,
                    rmse_vmag: c.rmse_vmag(),
                });
            }
        }
        out
    }

    /// Coverage over the first `limit` scenarios, averaged over buses and
    /// converged scenarios.
    pub fn empirical_coverage(&self, limit: usize, levels: &[CoverageLevel]) -> Vec<CoverageRow> {
        let mut out = Vec::new();
        for (v, variant) in self.variants.iter().enumerate() {
            for lvl in levels {
                let mut n_scenarios = 0;
                let mut n_states = 0;
                let mut hits = (0, 0);
                for (_, c) in self.converged(v, limit) {
                    let (w, t) = c.covered(lvl.z);
                    hits.0 += w;
                    hits.1 += t;
                    n_states += c.vmag_error.len();
                    n_scenarios += 1;
                }
                let frac = |k: usize| {
                    if n_states == 0 {
                        f64::NAN
                    } else {
                        k as f64 / n_states as f64
                    }
                };
                out.push(CoverageRow {
                    variant_id: variant.id.clone(),
                    level: lvl.level,
                    cov_wls: frac(hits.0),
                    cov_true: frac(hits.1),
                    n_scenarios,
                });
            }
        }
        out
    }

    /// Smallest `|V|` ratio over the first `limit` scenarios of one variant.
    pub fn min_vmag_rho(&self, v: usize, limit: usize) -> Option<(f64, &Scenario)> {
        self.converged(v, limit)
            .map(|(s, c)| {
                let n = c.vmag_error.len();
                let rho = c.crb.rho();
                (rho.rows(n, n).min(), s)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub variant_id: String,
    pub level: f64,
    pub cov_wls: f64,
    pub cov_true: f64,
    pub n_scenarios: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseRow {
    pub variant_id: String,
    pub scenario_id: u64,
    pub lambda: f64,
    pub rmse_vmag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub master_seed: u64,
    pub n_scenarios_crb: usize,
    pub n_scenarios_coverage: usize,
    pub power_flow: PowerFlowOptions,
    pub wls_step_tol: f64,
    pub wls_max_iter: usize,
    pub wls_damping: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            master_seed: DEFAULT_MASTER_SEED,
            n_scenarios_crb: 100,
            n_scenarios_coverage: 1000,
            power_flow: PowerFlowOptions::default(),
            wls_step_tol: wls::DEFAULT_STEP_TOL,
            wls_max_iter: wls::DEFAULT_MAX_ITER,
            wls_damping: false,
        }
    }
}

impl StudyConfig {
    pub fn wls_options(&self) -> WlsOptions {
        WlsOptions {
            step_tol: self.wls_step_tol,
            max_iter: self.wls_max_iter,
            damping: self.wls_damping,
        }
    }
}

/// Everything a study emits.
#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub crb: Vec<CrbReport>,
    pub coverage: Vec<CoverageRow>,
    pub rmse: Vec<RmseRow>,
    pub sweep: SweepResults,
}

/// One sweep over `max(n_crb, n_coverage)` scenarios; CRB ratios and RMSE come
/// from the first `n_crb`, coverage from the first `n_coverage`.
pub fn run_study(
    ctx: &StudyContext,
    variants: &[Variant],
    config: &StudyConfig,
) -> Result<StudyOutput> {
    let n = config.n_scenarios_crb.max(config.n_scenarios_coverage);
    let scenarios = generate_scenarios(ctx.net, ctx.y, n, config.master_seed, &config.power_flow)?;
    let sweep = run_sweep(
        ctx,
        variants,
        &scenarios,
        config.master_seed,
        &config.wls_options(),
    );
    Ok(StudyOutput {
        crb: sweep.crb_reports(ctx.net, config.n_scenarios_crb),
        coverage: sweep.empirical_coverage(config.n_scenarios_coverage, &COVERAGE_LEVELS),
        rmse: sweep.rmse_summary(config.n_scenarios_crb),
        sweep,
    })
}

/// True for the families whose pseudo-measurement law has zero mean error.
pub fn is_centred_non_gaussian(family: Family) -> bool {
    matches!(family, Family::StudentT | Family::Laplace)
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
