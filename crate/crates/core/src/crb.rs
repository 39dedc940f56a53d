//! Cramér–Rao bound ratio between the true-law gain `H' W_true H` and the
//! Gaussian-assumed gain `H' W H`.
//!
//! `W_true` carries the scalar Fisher information of each measurement's actual
//! error law. Since `F >= 1/sigma^2` for any law of a given variance, `rho < 1`
//! means the WLS covariance overstates the achievable variance.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measmodel::{matrix_rank, MeasurementPlan, NoiseLibrary, ZERO_INJECTION_VARIANCE};
use crate::netmodel::Network;
use crate::wls::{EstimationResult, WeightMatrix};

/// Relative tolerance of the Gaussian FIM-equals-gain identity.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// `diag(F_i)`: Gaussian rows keep `1/sigma^2`, variant pseudos take the
/// Fisher information of their law.
pub fn build_true_weights(plan: &MeasurementPlan, library: &NoiseLibrary) -> Result<WeightMatrix> {
    assert_eq!(plan.len(), library.len());
    let w = library
        .entries()
        .iter()
        .map(|e| {
            if e.zero_injection {
                Ok(1.0 / ZERO_INJECTION_VARIANCE)
            } else {
                e.law.fisher_information()
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightMatrix::new(DVector::from_vec(w)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainPair {
    pub g_wls: DMatrix<f64>,
    pub g_true: DMatrix<f64>,
}

impl GainPair {
    pub fn new(h: &DMatrix<f64>, w_assumed: &WeightMatrix, w_true: &WeightMatrix) -> Self {
        GainPair {
            g_wls: w_assumed.gain(h),
            g_true: w_true.gain(h),
        }
    }

    /// Full inverses `(G_wls^-1, G_true^-1)`.
    pub fn covariances(&self) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let a = self.g_wls.clone().cholesky()?.inverse();
        let t = self.g_true.clone().cholesky()?.inverse();
        Some((a, t))
    }
}

/// Diagonals of both inverse gains, in state-vector order.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbDiagonal {
    pub assumed_var: DVector<f64>,
    pub true_var: DVector<f64>,
}

impl CrbDiagonal {
    pub fn rho(&self) -> DVector<f64> {
        self.true_var.component_div(&self.assumed_var)
    }
}

pub fn crb_ratio(
    h: &DMatrix<f64>,
    w_assumed: &WeightMatrix,
    w_true: &WeightMatrix,
) -> Result<CrbDiagonal> {
    let pair = GainPair::new(h, w_assumed, w_true);
    let (a, t) = pair.covariances().ok_or_else(|| Error::Unobservable {
        rank: matrix_rank(h),
        required: h.ncols(),
    })?;
    Ok(CrbDiagonal {
        assumed_var: a.diagonal(),
        true_var: t.diagonal(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Theta,
    Vmag,
}

impl StateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StateKind::Theta => "theta",
            StateKind::Vmag => "vmag",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateCrb {
    pub bus_id: usize,
    pub state_kind: StateKind,
    pub assumed_var: f64,
    pub true_var: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrbReport {
    pub variant_id: String,
    pub scenario_id: u64,
    pub lambda: f64,
    /// Angle block first, then magnitudes, each in bus order.
    pub states: Vec<StateCrb>,
}

impl CrbReport {
    pub fn new(
        net: &Network,
        variant_id: &str,
        scenario_id: u64,
        lambda: f64,
        diag: &CrbDiagonal,
    ) -> Self {
        let ids: Vec<usize> = net.non_slack().map(|p| net.buses()[p].id).collect();
        let n = ids.len();
        assert_eq!(diag.assumed_var.len(), 2 * n);
        let rho = diag.rho();
        let states = (0..2 * n)
            .map(|k| StateCrb {
                bus_id: ids[k % n],
                state_kind: if k < n {
                    StateKind::Theta
                } else {
                    StateKind::Vmag
                },
                assumed_var: diag.assumed_var[k],
                true_var: diag.true_var[k],
                rho: rho[k],
            })
            .collect();
        CrbReport {
            variant_id: variant_id.to_owned(),
            scenario_id,
            lambda,
            states,
        }
    }

    pub fn block(&self, kind: StateKind) -> impl Iterator<Item = &StateCrb> + '_ {
        self.states.iter().filter(move |s| s.state_kind == kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub holds: bool,
    /// Largest elementwise `|g_true - g_wls| / max(|g_true|, |g_wls|)`.
    pub max_rel_diff: f64,
    /// Largest `g_true[k,k] / g_wls[k,k]`.
    pub max_diag_ratio: f64,
}

/// Checks that the Fisher information matrix equals the WLS gain, which holds
/// exactly when every error law is Gaussian with the assumed variance.
pub fn fim_gain_identity_check(result: &EstimationResult, pair: &GainPair) -> IdentityCheck {
    let rel = |a: f64, b: f64| {
        let scale = a.abs().max(b.abs());
        if scale == 0.0 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    };
    let drift = result
        .gain
        .iter()
        .zip(pair.g_wls.iter())
        .map(|(&a, &b)| rel(a, b))
        .fold(0.0, f64::max);
    let max_rel_diff = pair
        .g_true
        .iter()
        .zip(pair.g_wls.iter())
        .map(|(&a, &b)| rel(a, b))
        .fold(drift, f64::max);
    let max_diag_ratio = pair
        .g_true
        .diagonal()
        .component_div(&pair.g_wls.diagonal())
        .max();
    IdentityCheck {
        holds: max_rel_diff < IDENTITY_TOLERANCE,
        max_rel_diff,
        max_diag_ratio,
    }
}
