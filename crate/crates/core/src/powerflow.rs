//! Newton–Raphson AC power flow for networks with one slack and PQ buses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{AdmittanceMatrix, Network};
use crate::power::{injection, injection_partials, BusVoltages};

pub const DEFAULT_TOLERANCE_MVA: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 30;

/// Angles (rad) and magnitudes (p.u.) at the non-slack buses, in bus order.
///
/// As a flat vector the layout is `[theta_1 .. theta_{n-1}, |V_1| .. |V_{n-1}|]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub theta: Vec<f64>,
    pub vmag: Vec<f64>,
}

impl StateVector {
    pub fn flat(net: &Network) -> Self {
        let n = net.n_buses() - 1;
        StateVector {
            theta: vec![0.0; n],
            vmag: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len() + self.vmag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.theta.iter().chain(self.vmag.iter()).copied(),
        )
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        StateVector {
            theta: x.rows(0, n).iter().copied().collect(),
            vmag: x.rows(n, n).iter().copied().collect(),
        }
    }

    /// Full bus voltage profile with the slack inserted at its position.
    pub fn bus_voltages(&self, net: &Network) -> BusVoltages {
        let slack = net.slack_position();
        let mut vm = Vec::with_capacity(net.n_buses());
        let mut va = Vec::with_capacity(net.n_buses());
        for pos in 0..net.n_buses() {
            match net.state_slot(pos) {
                Some(k) => {
                    vm.push(self.vmag[k]);
                    va.push(self.theta[k]);
                }
                None => {
                    debug_assert_eq!(pos, slack);
                    vm.push(net.slack_voltage());
                    va.push(0.0);
                }
            }
        }
        BusVoltages { vm, va }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub state: StateVector,
    pub iterations: usize,
    /// Largest complex power mismatch magnitude over non-slack buses, in MVA.
    pub max_mismatch: f64,
    pub converged: bool,
}

/// Jacobian of the non-slack injections `[P; Q]` with respect to the state.
pub(crate) fn injection_jacobian(
    net: &Network,
    y: &AdmittanceMatrix,
    v: &BusVoltages,
) -> DMatrix<f64> {
    let n = net.n_buses() - 1;
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for (row, pos) in net.non_slack().enumerate() {
        let (dp, dq) = injection_partials(y, v, pos);
        for (offset, partials) in [(0, dp), (n, dq)] {
            for (bus, d_theta, d_v) in partials {
                if let Some(col) = net.state_slot(bus) {
                    jac[(offset + row, col)] += d_theta;
                    jac[(offset + row, n + col)] += d_v;
                }
            }
        }
    }
    jac
}

/// Mismatch vector `[dP; dQ]` (scheduled minus computed, p.u.) and its largest
/// per-bus complex magnitude in MVA.
fn mismatch(
    net: &Network,
    y: &AdmittanceMatrix,
    v: &BusVoltages,
    load_scale: f64,
) -> (DVector<f64>, f64) {
    let n = net.n_buses() - 1;
    let mut f = DVector::zeros(2 * n);
    let mut worst: f64 = 0.0;
    for (row, pos) in net.non_slack().enumerate() {
        let s = net.scheduled_injection(pos, load_scale);
        let (p, q) = injection(y, v, pos);
        f[row] = s.re - p;
        f[n + row] = s.im - q;
        worst = worst.max(f[row].hypot(f[n + row]));
    }
    (f, worst * net.s_base_mva())
}

/// Solves the AC power flow with every load scaled by `load_scale`, from a flat start.
pub fn solve_power_flow(
    net: &Network,
    y: &AdmittanceMatrix,
    load_scale: f64,
    tol_mva: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution> {
    assert!(tol_mva > 0.0, "tolerance must be positive");
    assert!(load_scale > 0.0, "load scale must be positive");

    let mut x = StateVector::flat(net).to_vector();
    let mut iterations = 0;
    loop {
        let state = StateVector::from_vector(&x);
        let v = state.bus_voltages(net);
        let (f, worst) = mismatch(net, y, &v, load_scale);
        if !worst.is_finite() {
            break Err(Error::PowerFlowDiverged {
                iterations,
                max_mismatch: worst,
            });
        }
        if worst < tol_mva {
            break Ok(PowerFlowSolution {
                state,
                iterations,
                max_mismatch: worst,
                converged: true,
            });
        }
        if iterations == max_iter {
            break Err(Error::PowerFlowDiverged {
                iterations,
                max_mismatch: worst,
            });
        }
        let jac = injection_jacobian(net, y, &v);
        let Some(dx) = jac.lu().solve(&f) else {
            break Err(Error::PowerFlowDiverged {
                iterations,
                max_mismatch: worst,
            });
        };
        x += dx;
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_ybus, cigre_mv};
    use crate::power::branch_flow;
    use crate::test_networks::{triangle, two_bus};

    /// Receiving-end magnitude of a lossless two-bus line by bisection on
    /// `V^4 + (2 Q X - V0^2) V^2 + (P^2 + Q^2) X^2 = 0`, upper (stable) root.
    fn two_bus_oracle(x: f64, p: f64, q: f64) -> (f64, f64) {
        let f = |v: f64| v.powi(4) + (2.0 * q * x - 1.0) * v * v + (p * p + q * q) * x * x;
        // the stable root lies above the minimum of f at V^2 = (1 - 2QX) / 2
        let (mut lo, mut hi) = (((1.0 - 2.0 * q * x) / 2.0).sqrt(), 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let v = 0.5 * (lo + hi);
        let theta = -(p * x / v).asin();
        (v, theta)
    }

    #[test]
    fn no_load_flat_solution() {
        let net = two_bus(0.0, 0.1, 0.0, 0.0);
        let sol = solve_power_flow(&net, &build_ybus(&net), 1.0, 1e-8, 30).unwrap();
        assert_eq!(sol.state.vmag, vec![1.0]);
        assert_eq!(sol.state.theta, vec![0.0]);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn two_bus_matches_bisection_oracle() {
        let net = two_bus(0.0, 0.1, 0.1, 0.0);
        let y = build_ybus(&net);
        let sol = solve_power_flow(&net, &y, 1.0, 1e-10, 30).unwrap();
        let (v, theta) = two_bus_oracle(0.1, 0.1, 0.0);
        assert!((sol.state.vmag[0] - v).abs() < 1e-8);
        assert!((sol.state.theta[0] - theta).abs() < 1e-8);
        assert!(sol.max_mismatch < 1e-10);

        // sending-end flow is the load plus I^2 X reactive losses
        let vs = sol.state.bus_voltages(&net);
        let (p0, q0) = branch_flow(&net.branch_pu(0), &vs, 0);
        let i2 = 0.1f64.powi(2) / (v * v);
        assert!((p0 - 0.1).abs() < 1e-9);
        assert!((q0 - i2 * 0.1).abs() < 1e-9);
    }

    #[test]
    fn fixture_converges_quickly() {
        let net = cigre_mv();
        let y = build_ybus(&net);
        let sol = solve_power_flow(&net, &y, 1.0, DEFAULT_TOLERANCE_MVA, DEFAULT_MAX_ITER).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 10, "took {} iterations", sol.iterations);
        assert!(sol.max_mismatch < DEFAULT_TOLERANCE_MVA);
    }

    #[test]
    fn heavier_loading_lowers_min_voltage() {
        let net = cigre_mv();
        let y = build_ybus(&net);
        let min_v: Vec<f64> = [0.5, 1.0, 1.5]
            .iter()
            .map(|&l| {
                let sol = solve_power_flow(&net, &y, l, 1e-8, 30).unwrap();
                sol.state.vmag.iter().copied().fold(f64::INFINITY, f64::min)
            })
            .collect();
        assert!(min_v[0] >= min_v[1] && min_v[1] >= min_v[2], "{min_v:?}");
    }

    #[test]
    fn residual_reproduces_schedule() {
        let net = triangle();
        let y = build_ybus(&net);
        let sol = solve_power_flow(&net, &y, 1.3, 1e-10, 30).unwrap();
        let v = sol.state.bus_voltages(&net);
        for pos in net.non_slack() {
            let s = net.scheduled_injection(pos, 1.3);
            let (p, q) = injection(&y, &v, pos);
            assert!((p - s.re).abs() < 1e-10 && (q - s.im).abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic() {
        let net = cigre_mv();
        let y = build_ybus(&net);
        let a = solve_power_flow(&net, &y, 0.77, 1e-8, 30).unwrap();
        let b = solve_power_flow(&net, &y, 0.77, 1e-8, 30).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_load_reports_divergence() {
        // far beyond the nose of the PV curve (max transfer 1 / (2 X) = 5 p.u.)
        let net = two_bus(0.0, 0.1, 50.0, 0.0);
        let err = solve_power_flow(&net, &build_ybus(&net), 1.0, 1e-8, 30).unwrap_err();
        assert!(matches!(err, Error::PowerFlowDiverged { .. }));
    }
}
