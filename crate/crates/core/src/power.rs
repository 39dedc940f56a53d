//! Polar-form AC power equations and their partial derivatives.
//!
//! Bus quantities are indexed by bus position. Partials are returned as
//! `(bus, d/dtheta, d/d|V|)` triples so callers can scatter them into whatever
//! column layout they use.

use crate::netmodel::{AdmittanceMatrix, BranchPu};

/// Voltage magnitude and angle at every bus, slack included.
#[derive(Debug, Clone, PartialEq)]
pub struct BusVoltages {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
}

pub type Partial = (usize, f64, f64);

/// Active and reactive injection at bus `i`.
pub fn injection(y: &AdmittanceMatrix, v: &BusVoltages, i: usize) -> (f64, f64) {
    let (mut p, mut q) = (0.0, 0.0);
    for j in 0..y.dim() {
        let yij = y.get(i, j);
        if yij.re == 0.0 && yij.im == 0.0 {
            continue;
        }
        let (s, c) = (v.va[i] - v.va[j]).sin_cos();
        p += v.vm[j] * (yij.re * c + yij.im * s);
        q += v.vm[j] * (yij.re * s - yij.im * c);
    }
    (v.vm[i] * p, v.vm[i] * q)
}

/// Partials of `(P_i, Q_i)` with respect to every coupled bus.
pub fn injection_partials(
    y: &AdmittanceMatrix,
    v: &BusVoltages,
    i: usize,
) -> (Vec<Partial>, Vec<Partial>) {
    let (p_i, q_i) = injection(y, v, i);
    let yii = y.get(i, i);
    let vi = v.vm[i];
    let mut dp = vec![(i, -q_i - yii.im * vi * vi, p_i / vi + yii.re * vi)];
    let mut dq = vec![(i, p_i - yii.re * vi * vi, q_i / vi - yii.im * vi)];
    for j in 0..y.dim() {
        let yij = y.get(i, j);
        if j == i || (yij.re == 0.0 && yij.im == 0.0) {
            continue;
        }
        let (s, c) = (v.va[i] - v.va[j]).sin_cos();
        let a = yij.re * c + yij.im * s;
        let b = yij.re * s - yij.im * c;
        dp.push((j, vi * v.vm[j] * b, vi * a));
        dq.push((j, -vi * v.vm[j] * a, vi * b));
    }
    (dp, dq)
}

/// Flow `(P, Q)` leaving bus `at` into the branch towards its other end.
pub fn branch_flow(br: &BranchPu, v: &BusVoltages, at: usize) -> (f64, f64) {
    let (i, j) = ends(br, at);
    let (g, b) = (br.y_series.re, br.y_series.im);
    let (vi, vj) = (v.vm[i], v.vm[j]);
    let (s, c) = (v.va[i] - v.va[j]).sin_cos();
    let p = vi * vi * g - vi * vj * (g * c + b * s);
    let q = -vi * vi * (b + br.b_half) - vi * vj * (g * s - b * c);
    (p, q)
}

pub fn branch_flow_partials(
    br: &BranchPu,
    v: &BusVoltages,
    at: usize,
) -> ([Partial; 2], [Partial; 2]) {
    let (i, j) = ends(br, at);
    let (g, b) = (br.y_series.re, br.y_series.im);
    let (vi, vj) = (v.vm[i], v.vm[j]);
    let (s, c) = (v.va[i] - v.va[j]).sin_cos();
    let gs_bc = g * s - b * c;
    let gc_bs = g * c + b * s;
    let dp = [
        (i, vi * vj * gs_bc, 2.0 * vi * g - vj * gc_bs),
        (j, -vi * vj * gs_bc, -vi * gc_bs),
    ];
    let dq = [
        (
            i,
            -vi * vj * gc_bs,
            -2.0 * vi * (b + br.b_half) - vj * gs_bc,
        ),
        (j, vi * vj * gc_bs, -vi * gs_bc),
    ];
    (dp, dq)
}

fn ends(br: &BranchPu, at: usize) -> (usize, usize) {
    if at == br.from {
        (br.from, br.to)
    } else {
        debug_assert_eq!(at, br.to);
        (br.to, br.from)
    }
}
