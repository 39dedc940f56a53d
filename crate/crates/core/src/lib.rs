//! Sensitivity of WLS distribution-system state estimation uncertainty to the
//! assumed pseudo-measurement noise law.
//!
//! The pipeline runs a Newton–Raphson power flow per loading scenario, samples
//! real and pseudo measurements, solves the WLS estimate, and compares the
//! covariance WLS claims (inverse gain under Gaussian weights) with the
//! Cramér–Rao bound implied by the true per-measurement Fisher information.

pub mod crb;
pub mod error;
pub mod experiment;
pub mod measmodel;
pub mod netmodel;
pub mod noise;
pub mod power;
pub mod powerflow;
pub mod rng;
pub mod wls;

pub use error::{Error, Result};
pub use netmodel::{build_ybus, load_network, AdmittanceMatrix, Network};
pub use powerflow::{solve_power_flow, PowerFlowSolution, StateVector};
