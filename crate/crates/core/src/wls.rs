//! Weighted least squares state estimation by Gauss–Newton on the normal
//! equations `G dx = H' W (z - h(x))`, `G = H' W H`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measmodel::{
    evaluate_h, evaluate_jacobian, matrix_rank, MeasurementPlan, NoiseLibrary,
    ZERO_INJECTION_VARIANCE,
};
use crate::netmodel::{AdmittanceMatrix, Network};
use crate::powerflow::StateVector;

pub const DEFAULT_STEP_TOL: f64 = 1e-8;
// Heavy-tailed pseudo outliers make Gauss-Newton contract linearly; the slowest
// fixture cell needs 70 steps.
pub const DEFAULT_MAX_ITER: usize = 100;

/// Diagonal weight matrix, stored as its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(pub DVector<f64>);

impl WeightMatrix {
    pub fn new(w: DVector<f64>) -> Self {
        assert!(
            w.iter().all(|v| v.is_finite() && *v > 0.0),
            "weights must be positive and finite"
        );
        WeightMatrix(w)
    }

    pub fn diagonal(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `H' W H`.
    pub fn gain(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut wh = h.clone();
        for (mut row, &w) in wh.row_iter_mut().zip(self.0.iter()) {
            row *= w;
        }
        h.transpose() * wh
    }
}

/// Gaussian (assumed) weights `1 / sigma_i^2`; zero-injection rows get `1 / sigma_floor^2`.
pub fn build_weights(plan: &MeasurementPlan, library: &NoiseLibrary) -> WeightMatrix {
    assert_eq!(plan.len(), library.len());
    WeightMatrix::new(DVector::from_iterator(
        plan.len(),
        library.entries().iter().map(|e| {
            if e.zero_injection {
                1.0 / ZERO_INJECTION_VARIANCE
            } else {
                let s = e.sigma();
                1.0 / (s * s)
            }
        }),
    ))
}

/// Anything that maps a state vector to measurements with a Jacobian.
pub trait MeasurementModel {
    fn n_states(&self) -> usize;
    fn n_measurements(&self) -> usize;
    fn h(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// The AC measurement model of a network and plan.
pub struct NetworkModel<'a> {
    pub net: &'a Network,
    pub y: &'a AdmittanceMatrix,
    pub plan: &'a MeasurementPlan,
}

impl MeasurementModel for NetworkModel<'_> {
    fn n_states(&self) -> usize {
        self.net.n_states()
    }

    fn n_measurements(&self) -> usize {
        self.plan.len()
    }

    fn h(&self, x: &DVector<f64>) -> DVector<f64> {
        evaluate_h(self.net, self.y, self.plan, &StateVector::from_vector(x))
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        evaluate_jacobian(self.net, self.y, self.plan, &StateVector::from_vector(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsOptions {
    pub step_tol: f64,
    pub max_iter: usize,
    /// Halve the step while the objective increases.
    pub damping: bool,
}

impl Default for WlsOptions {
    fn default() -> Self {
        WlsOptions {
            step_tol: DEFAULT_STEP_TOL,
            max_iter: DEFAULT_MAX_ITER,
            damping: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    /// Objective before the step.
    pub objective: f64,
    pub step_norm: f64,
    pub step_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub x_hat: DVector<f64>,
    /// `H(x_hat)`.
    pub jacobian: DMatrix<f64>,
    /// `H' W H` at `x_hat`.
    pub gain: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_step_norm: f64,
    pub trace: Vec<IterationRecord>,
}

impl EstimationResult {
    pub fn state(&self) -> StateVector {
        StateVector::from_vector(&self.x_hat)
    }
}

fn objective(z: &DVector<f64>, h: &DVector<f64>, w: &WeightMatrix) -> f64 {
    (z - h).iter().zip(w.0.iter()).map(|(r, w)| w * r * r).sum()
}

pub fn estimate_with<M: MeasurementModel>(
    model: &M,
    z: &DVector<f64>,
    w: &WeightMatrix,
    x0: DVector<f64>,
    opts: &WlsOptions,
) -> Result<EstimationResult> {
    assert_eq!(z.len(), model.n_measurements());
    assert_eq!(w.len(), model.n_measurements());
    assert_eq!(x0.len(), model.n_states());

    let mut x = x0;
    let mut hx = model.h(&x);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut final_step_norm = f64::INFINITY;

    let (jacobian, gain) = loop {
        let jac = model.jacobian(&x);
        let gain = w.gain(&jac);
        let mut residual = z - &hx;
        residual.component_mul_assign(&w.0);
        let grad = jac.transpose() * residual;
        if final_step_norm < opts.step_tol {
            converged = true;
            break (jac, gain);
        }
        if trace.len() == opts.max_iter || (!trace.is_empty() && !final_step_norm.is_finite()) {
            break (jac, gain);
        }
        let Some(chol) = gain.clone().cholesky() else {
            return Err(Error::Unobservable {
                rank: matrix_rank(&jac),
                required: model.n_states(),
            });
        };
        let dx = chol.solve(&grad);

        let before = objective(z, &hx, w);
        let mut scale = 1.0;
        let mut candidate = &x + &dx;
        let mut h_candidate = model.h(&candidate);
        if opts.damping {
            for _ in 0..30 {
                if objective(z, &h_candidate, w) <= before {
                    break;
                }
                scale *= 0.5;
                candidate = &x + &dx * scale;
                h_candidate = model.h(&candidate);
            }
        }
        final_step_norm = (&dx * scale).amax();
        trace.push(IterationRecord {
            objective: before,
            step_norm: final_step_norm,
            step_scale: scale,
        });
        x = candidate;
        hx = h_candidate;
    };

    Ok(EstimationResult {
        objective: objective(z, &hx, w),
        x_hat: x,
        jacobian,
        gain,
        iterations: trace.len(),
        converged,
        final_step_norm,
        trace,
    })
}

/// WLS estimate on the AC measurement model of `net` and `plan`.
pub fn estimate(
    net: &Network,
    y: &AdmittanceMatrix,
    plan: &MeasurementPlan,
    z: &DVector<f64>,
    w: &WeightMatrix,
    x0: &StateVector,
    opts: &WlsOptions,
) -> Result<EstimationResult> {
    estimate_with(&NetworkModel { net, y, plan }, z, w, x0.to_vector(), opts)
}
