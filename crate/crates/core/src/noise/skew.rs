//! Standard normal helpers and the skew-normal mode.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_677_939_946_059_934_381_87;

pub fn std_normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t * FRAC_1_SQRT_2)
}

/// `phi(t) / Phi(t)`, stable for large negative `t`.
pub fn inverse_mills(t: f64) -> f64 {
    if t > -35.0 {
        std_normal_pdf(t) / std_normal_cdf(t)
    } else {
        let u = 1.0 / (t * t);
        -t / (1.0 - u + 3.0 * u * u - 15.0 * u * u * u)
    }
}

pub fn delta(alpha: f64) -> f64 {
    alpha / (1.0 + alpha * alpha).sqrt()
}

/// Standard deviation of a skew-normal with unit scale.
pub fn unit_scale_std(alpha: f64) -> f64 {
    let d = delta(alpha);
    (1.0 - 2.0 * d * d / PI).sqrt()
}

/// Mean of a skew-normal with unit scale and zero location.
pub fn unit_scale_mean(alpha: f64) -> f64 {
    delta(alpha) * (2.0 / PI).sqrt()
}

/// Derivative of the log-density of the unit skew-normal at `z`.
pub fn unit_score(alpha: f64, z: f64) -> f64 {
    -z + alpha * inverse_mills(alpha * z)
}

/// Mode of the unit-scale, zero-location skew-normal with shape `alpha`.
///
/// Bisection on the log-density derivative over `[0, 1]`, then Newton polish.
pub fn unit_mode(alpha: f64) -> Result<f64> {
    if !alpha.is_finite() {
        return Err(Error::ModeSolve { alpha });
    }
    if alpha == 0.0 {
        return Ok(0.0);
    }
    if alpha < 0.0 {
        return unit_mode(-alpha).map(|m| -m);
    }
    let g = |z: f64| unit_score(alpha, z);
    let (mut lo, mut hi) = (0.0, 1.0);
    if !(g(lo) > 0.0 && g(hi) < 0.0) {
        return Err(Error::ModeSolve { alpha });
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..4 {
        let t = alpha * z;
        let r = inverse_mills(t);
        let dg = -1.0 - alpha * alpha * r * (t + r);
        let step = g(z) / dg;
        if !step.is_finite() {
            break;
        }
        let next = z - step;
        if next < lo - 1e-9 || next > hi + 1e-9 {
            break;
        }
        z = next;
    }
    if g(z).abs() > 1e-10 {
        return Err(Error::ModeSolve { alpha });
    }
    Ok(z)
}
