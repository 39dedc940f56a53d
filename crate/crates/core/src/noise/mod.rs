//! Pseudo-measurement noise families matched at equal spread.
//!
//! Every family is parameterised by a relative spread `sigma_pct` so that the
//! absolute standard deviation is `sigma = sigma_pct * |mu_star|`. The skew-normal
//! is placed so that its mode sits on `mu_star`; the others are centred on
//! `mu_star` (or on `mu_star * (1 + bias_pct)` for the biased Gaussian).
//!
//! Fisher information is for the location parameter. It is computed in
//! standardised coordinates (unit spread, centred law) and scaled by `1 / sigma^2`,
//! which makes it independent of `mu_star` and of any mean shift by construction.

pub mod quadrature;
pub mod skew;

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use quadrature::{integrate_real_line, QuadResult};

/// Half-width of the finite integration window, in units of sigma.
pub const QUAD_WINDOW: f64 = 40.0;
pub const QUAD_ABS_TOL: f64 = 1e-12;
const QUAD_MAX_SEGMENTS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Gaussian { sigma_pct: f64 },
    StudentT { sigma_pct: f64, nu: f64 },
    Laplace { sigma_pct: f64 },
    SkewNormal { sigma_pct: f64, alpha: f64 },
    BiasedGaussian { sigma_pct: f64, bias_pct: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    StudentT,
    Laplace,
    SkewNormal,
    BiasedGaussian,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::StudentT => "student_t",
            Family::Laplace => "laplace",
            Family::SkewNormal => "skew_normal",
            Family::BiasedGaussian => "biased_gaussian",
        })
    }
}

impl DistributionSpec {
    pub fn gaussian(sigma_pct: f64) -> Self {
        DistributionSpec::Gaussian { sigma_pct }
    }

    pub fn family(&self) -> Family {
        match self {
            DistributionSpec::Gaussian { .. } => Family::Gaussian,
            DistributionSpec::StudentT { .. } => Family::StudentT,
            DistributionSpec::Laplace { .. } => Family::Laplace,
            DistributionSpec::SkewNormal { .. } => Family::SkewNormal,
            DistributionSpec::BiasedGaussian { .. } => Family::BiasedGaussian,
        }
    }

    pub fn sigma_pct(&self) -> f64 {
        match *self {
            DistributionSpec::Gaussian { sigma_pct }
            | DistributionSpec::StudentT { sigma_pct, .. }
            | DistributionSpec::Laplace { sigma_pct }
            | DistributionSpec::SkewNormal { sigma_pct, .. }
            | DistributionSpec::BiasedGaussian { sigma_pct, .. } => sigma_pct,
        }
    }

    /// Gaussian and biased Gaussian: the WLS weight is the exact Fisher information.
    pub fn is_gaussian_shape(&self) -> bool {
        matches!(self.family(), Family::Gaussian | Family::BiasedGaussian)
    }

    pub fn validate(&self) -> Result<()> {
        let sigma_pct = self.sigma_pct();
        if !(sigma_pct.is_finite() && sigma_pct > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "sigma_pct must be positive, got {sigma_pct}"
            )));
        }
        match *self {
            DistributionSpec::StudentT { nu, .. } if !(nu.is_finite() && nu > 2.0) => Err(
                Error::InvalidDistribution(format!("student-t needs nu > 2, got {nu}")),
            ),
            DistributionSpec::SkewNormal { alpha, .. } if !alpha.is_finite() => Err(
                Error::InvalidDistribution(format!("non-finite skew-normal alpha {alpha}")),
            ),
            DistributionSpec::BiasedGaussian { bias_pct, .. } if !bias_pct.is_finite() => Err(
                Error::InvalidDistribution(format!("non-finite bias {bias_pct}")),
            ),
            _ => Ok(()),
        }
    }

    /// Short parameter label, e.g. `(10%,3)` for Student-t.
    pub fn parameter_label(&self) -> String {
        let pct = |x: f64| format!("{}%", round_pct(x));
        match *self {
            DistributionSpec::Gaussian { sigma_pct } | DistributionSpec::Laplace { sigma_pct } => {
                pct(sigma_pct)
            }
            DistributionSpec::StudentT { sigma_pct, nu } => format!("({},{})", pct(sigma_pct), nu),
            DistributionSpec::SkewNormal { alpha, .. } => format!("{alpha}"),
            DistributionSpec::BiasedGaussian { bias_pct, .. } => {
                format!("{:+}%", round_pct(bias_pct))
            }
        }
    }
}

fn round_pct(x: f64) -> f64 {
    (x * 100.0 * 1e6).round() / 1e6
}

/// A named row of the variant grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub id: String,
    #[serde(flatten)]
    pub spec: DistributionSpec,
}

impl Variant {
    pub fn new(spec: DistributionSpec) -> Self {
        let pct = |x: f64| round_pct(x).to_string();
        let id = match spec {
            DistributionSpec::Gaussian { sigma_pct } => format!("gaussian-{}", pct(sigma_pct)),
            DistributionSpec::StudentT { sigma_pct, nu } => {
                format!("student_t-{}-nu{}", pct(sigma_pct), nu)
            }
            DistributionSpec::Laplace { sigma_pct } => format!("laplace-{}", pct(sigma_pct)),
            DistributionSpec::SkewNormal { alpha, .. } => format!("skew_normal-a{alpha}"),
            DistributionSpec::BiasedGaussian { bias_pct, .. } => {
                let sign = if bias_pct < 0.0 { 'm' } else { 'p' };
                format!("biased_gaussian-{sign}{}", pct(bias_pct.abs()))
            }
        };
        Variant { id, spec }
    }
}

/// The 22 variants: Gaussian, Student-t, Laplace, skew-normal and biased Gaussian.
pub fn table1() -> Vec<Variant> {
    use DistributionSpec::*;
    let spreads = [0.10, 0.20, 0.30];
    let mut out = Vec::with_capacity(22);
    out.extend(spreads.map(|s| Gaussian { sigma_pct: s }));
    for s in spreads {
        for nu in [3.0, 4.0] {
            out.push(StudentT { sigma_pct: s, nu });
        }
    }
    out.extend(spreads.map(|s| Laplace { sigma_pct: s }));
    for alpha in [2.0, 5.0, 7.0, 10.0] {
        out.push(SkewNormal {
            sigma_pct: 0.20,
            alpha,
        });
    }
    for bias in [-0.30, -0.20, -0.10, 0.10, 0.20, 0.30] {
        out.push(BiasedGaussian {
            sigma_pct: 0.20,
            bias_pct: bias,
        });
    }
    out.into_iter().map(Variant::new).collect()
}

pub fn gaussian_only() -> Vec<Variant> {
    table1()
        .into_iter()
        .filter(|v| v.spec.family() == Family::Gaussian)
        .collect()
}

pub fn parse_variants(text: &str) -> Result<Vec<Variant>> {
    let variants: Vec<Variant> =
        serde_json::from_str(text).map_err(|e| Error::parse("variant grid", e))?;
    let mut seen = std::collections::HashSet::new();
    for v in &variants {
        v.spec.validate()?;
        if !seen.insert(v.id.as_str()) {
            return Err(Error::InvalidDistribution(format!(
                "duplicate variant id {}",
                v.id
            )));
        }
    }
    Ok(variants)
}

pub fn load_variants(path: impl AsRef<Path>) -> Result<Vec<Variant>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_variants(&text)
}

/// Unit-spread, centred version of a family.
#[derive(Debug, Clone, Copy, PartialEq)]
enum StandardLaw {
    Gaussian,
    StudentT {
        nu: f64,
        scale: f64,
    },
    Laplace {
        b: f64,
    },
    /// Location `xi` puts the mode at zero.
    SkewNormal {
        alpha: f64,
        xi: f64,
        omega: f64,
    },
}

impl StandardLaw {
    fn density(&self, u: f64) -> f64 {
        match *self {
            StandardLaw::Gaussian => skew::std_normal_pdf(u),
            StandardLaw::StudentT { nu, scale } => {
                let log_c = libm::lgamma(0.5 * (nu + 1.0))
                    - libm::lgamma(0.5 * nu)
                    - 0.5 * (nu * PI).ln()
                    - scale.ln();
                let t = u / scale;
                (log_c - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p()).exp()
            }
            StandardLaw::Laplace { b } => (-u.abs() / b).exp() / (2.0 * b),
            StandardLaw::SkewNormal { alpha, xi, omega } => {
                let z = (u - xi) / omega;
                2.0 / omega * skew::std_normal_pdf(z) * skew::std_normal_cdf(alpha * z)
            }
        }
    }

    fn score(&self, u: f64) -> f64 {
        match *self {
            StandardLaw::Gaussian => -u,
            StandardLaw::StudentT { nu, scale } => -(nu + 1.0) * u / (nu * scale * scale + u * u),
            StandardLaw::Laplace { b } => -u.signum() / b,
            StandardLaw::SkewNormal { alpha, xi, omega } => {
                skew::unit_score(alpha, (u - xi) / omega) / omega
            }
        }
    }

    fn fisher_integrand(&self, u: f64) -> f64 {
        let p = self.density(u);
        if p == 0.0 {
            return 0.0;
        }
        let s = self.score(u);
        s * s * p
    }
}

/// Family parameters in absolute units for one measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum NoiseParams {
    Gaussian { mean: f64, std: f64 },
    StudentT { loc: f64, scale: f64, nu: f64 },
    Laplace { loc: f64, b: f64 },
    SkewNormal { xi: f64, omega: f64, alpha: f64 },
}

/// A distribution calibrated to a true value `mu_star` and absolute spread `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedNoise {
    pub spec: DistributionSpec,
    pub mu_star: f64,
    pub sigma: f64,
    pub params: NoiseParams,
    law: StandardLaw,
}

impl CalibratedNoise {
    /// Calibrates with an explicit absolute spread.
    pub fn with_sigma(spec: DistributionSpec, mu_star: f64, sigma: f64) -> Result<Self> {
        spec.validate()?;
        if !mu_star.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "non-finite mu_star {mu_star}"
            )));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidDistribution(format!("invalid sigma {sigma}")));
        }
        let (law, params) = match spec {
            DistributionSpec::Gaussian { .. } => (
                StandardLaw::Gaussian,
                NoiseParams::Gaussian {
                    mean: mu_star,
                    std: sigma,
                },
            ),
            DistributionSpec::BiasedGaussian { bias_pct, .. } => (
                StandardLaw::Gaussian,
                NoiseParams::Gaussian {
                    mean: mu_star * (1.0 + bias_pct),
                    std: sigma,
                },
            ),
            DistributionSpec::StudentT { nu, .. } => {
                let unit = 1.0 / (nu / (nu - 2.0)).sqrt();
                (
                    StandardLaw::StudentT { nu, scale: unit },
                    NoiseParams::StudentT {
                        loc: mu_star,
                        scale: sigma / (nu / (nu - 2.0)).sqrt(),
                        nu,
                    },
                )
            }
            DistributionSpec::Laplace { .. } => (
                StandardLaw::Laplace { b: 1.0 / SQRT_2 },
                NoiseParams::Laplace {
                    loc: mu_star,
                    b: sigma / SQRT_2,
                },
            ),
            DistributionSpec::SkewNormal { alpha, .. } => {
                let omega = 1.0 / skew::unit_scale_std(alpha);
                let xi = -omega * skew::unit_mode(alpha)?;
                (
                    StandardLaw::SkewNormal { alpha, xi, omega },
                    NoiseParams::SkewNormal {
                        xi: mu_star + sigma * xi,
                        omega: sigma * omega,
                        alpha,
                    },
                )
            }
        };
        Ok(CalibratedNoise {
            spec,
            mu_star,
            sigma,
            params,
            law,
        })
    }

    /// Mean of the calibrated law.
    pub fn mean(&self) -> f64 {
        match self.params {
            NoiseParams::Gaussian { mean, .. } => mean,
            NoiseParams::StudentT { loc, .. } | NoiseParams::Laplace { loc, .. } => loc,
            NoiseParams::SkewNormal { xi, omega, alpha } => {
                xi + omega * skew::unit_scale_mean(alpha)
            }
        }
    }

    /// Standard deviation of the calibrated law, from its own parameters.
    pub fn std_dev(&self) -> f64 {
        match self.params {
            NoiseParams::Gaussian { std, .. } => std,
            NoiseParams::StudentT { scale, nu, .. } => scale * (nu / (nu - 2.0)).sqrt(),
            NoiseParams::Laplace { b, .. } => b * SQRT_2,
            NoiseParams::SkewNormal { omega, alpha, .. } => omega * skew::unit_scale_std(alpha),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.params {
            NoiseParams::Gaussian { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
            NoiseParams::StudentT { loc, scale, nu } => {
                let t = StudentT::new(nu).expect("nu validated").sample(rng);
                loc + scale * t
            }
            NoiseParams::Laplace { loc, b } => {
                let u: f64 = Open01.sample(rng);
                let centred = u - 0.5;
                loc - b * centred.signum() * (1.0 - 2.0 * centred.abs()).ln()
            }
            NoiseParams::SkewNormal { xi, omega, alpha } => {
                let d = skew::delta(alpha);
                let u0: f64 = StandardNormal.sample(rng);
                let u1: f64 = StandardNormal.sample(rng);
                xi + omega * (d * u0.abs() + (1.0 - d * d).sqrt() * u1)
            }
        }
    }

    /// Closed-form Fisher information where one exists.
    pub fn closed_form_fisher(&self) -> Option<f64> {
        let s = self.sigma;
        match self.params {
            NoiseParams::Gaussian { .. } => Some(1.0 / (s * s)),
            NoiseParams::Laplace { b, .. } => Some(1.0 / (b * b)),
            NoiseParams::StudentT { scale, nu, .. } => {
                Some((nu + 1.0) / ((nu + 3.0) * scale * scale))
            }
            NoiseParams::SkewNormal { .. } => None,
        }
    }

    /// Numerical Fisher information of the location parameter.
    pub fn quadrature_fisher(&self) -> QuadResult {
        let breaks: &[f64] = match self.law {
            StandardLaw::Laplace { .. } | StandardLaw::SkewNormal { .. } => &[0.0],
            _ => &[],
        };
        let law = self.law;
        let unit = integrate_real_line(
            |u| law.fisher_integrand(u),
            QUAD_WINDOW,
            breaks,
            QUAD_ABS_TOL,
            QUAD_MAX_SEGMENTS,
        );
        let scale = 1.0 / (self.sigma * self.sigma);
        QuadResult {
            value: unit.value * scale,
            error: unit.error * scale,
            ..unit
        }
    }

    /// Fisher information: closed form when available, quadrature otherwise.
    pub fn fisher_information(&self) -> Result<f64> {
        if let Some(f) = self.closed_form_fisher() {
            return Ok(f);
        }
        let q = self.quadrature_fisher();
        if !q.converged || !q.value.is_finite() {
            return Err(Error::Quadrature {
                estimate: q.value,
                error: q.error,
            });
        }
        Ok(q.value)
    }
}

/// Calibrates `spec` to relative spread around `mu_star`.
pub fn calibrate(spec: DistributionSpec, mu_star: f64) -> Result<CalibratedNoise> {
    let sigma = spec.sigma_pct() * mu_star.abs();
    if sigma <= 0.0 {
        return Err(Error::InvalidDistribution(
            "relative spread needs |mu_star| > 0".into(),
        ));
    }
    CalibratedNoise::with_sigma(spec, mu_star, sigma)
}
