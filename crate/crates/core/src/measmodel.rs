//! Measurement plan, measurement function `h(x)` and its Jacobian.
//!
//! All values are per-unit on the network's `s_base_mva`. The position of a
//! descriptor in the plan fixes its row in `z`, `h(x)` and `H(x)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{AdmittanceMatrix, BusKind, Network};
use crate::noise::{CalibratedNoise, DistributionSpec};
use crate::power::{branch_flow, branch_flow_partials, injection, injection_partials, Partial};
use crate::powerflow::StateVector;
use crate::rng::{self, Domain};

/// Lower bound on any proportional standard deviation, p.u.
pub const SIGMA_FLOOR_PU: f64 = 1e-6;
/// Variance assigned to zero-injection pseudo-measurements, p.u.^2.
pub const ZERO_INJECTION_VARIANCE: f64 = 1e-4;

/// Buses with real voltage measurements in the default plan.
pub const MEASURED_VOLTAGE_BUSES: [usize; 5] = [0, 3, 8, 11, 13];
/// Buses with real P/Q injection measurements in the default plan.
pub const MEASURED_INJECTION_BUSES: [usize; 4] = [3, 8, 11, 13];
pub const DEFAULT_SENSOR_SEED: u64 = 7;
pub const VOLTAGE_SIGMA_PCT_RANGE: (f64, f64) = (0.005, 0.02);
pub const POWER_SIGMA_PCT_RANGE: (f64, f64) = (0.01, 0.05);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasKind {
    VMag,
    PInjection,
    QInjection,
    PFlow,
    QFlow,
}

impl MeasKind {
    pub fn is_flow(self) -> bool {
        matches!(self, MeasKind::PFlow | MeasKind::QFlow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Real,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchEnd {
    From,
    To,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Location {
    /// Branch index in the network file and the metering end.
    Branch {
        branch: usize,
        end: BranchEnd,
    },
    Bus {
        bus: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementDescriptor {
    pub kind: MeasKind,
    #[serde(flatten)]
    pub location: Location,
    pub source: Source,
    /// Relative accuracy of a real sensor: `sigma = sigma_pct * |z*|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_pct: Option<f64>,
    /// Fixed absolute standard deviation (zero-injection pseudo-measurements).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_injection: bool,
}

impl MeasurementDescriptor {
    pub fn real(kind: MeasKind, location: Location, sigma_pct: f64) -> Self {
        MeasurementDescriptor {
            kind,
            location,
            source: Source::Real,
            sigma_pct: Some(sigma_pct),
            sigma: None,
            zero_injection: false,
        }
    }

    /// Pseudo-measurement whose law and spread come from the swept variant.
    pub fn pseudo(kind: MeasKind, bus: usize) -> Self {
        MeasurementDescriptor {
            kind,
            location: Location::Bus { bus },
            source: Source::Pseudo,
            sigma_pct: None,
            sigma: None,
            zero_injection: false,
        }
    }

    pub fn zero_injection(kind: MeasKind, bus: usize) -> Self {
        MeasurementDescriptor {
            kind,
            location: Location::Bus { bus },
            source: Source::Pseudo,
            sigma_pct: None,
            sigma: Some(ZERO_INJECTION_VARIANCE.sqrt()),
            zero_injection: true,
        }
    }

    /// Pseudo-measurement drawn from the variant under study.
    pub fn is_variant_pseudo(&self) -> bool {
        self.source == Source::Pseudo && !self.zero_injection
    }

    fn validate(&self, net: &Network, index: usize) -> Result<()> {
        let fail = |msg: String| {
            Err(Error::IncompatiblePlan(format!(
                "descriptor {index}: {msg}"
            )))
        };
        match (self.kind.is_flow(), self.location) {
            (true, Location::Branch { branch, .. }) => match net.branches().get(branch) {
                Some(br) if br.in_service => {}
                Some(_) => return fail(format!("branch {branch} is out of service")),
                None => return fail(format!("no branch {branch}")),
            },
            (false, Location::Bus { bus }) => {
                if net.position_of(bus).is_none() {
                    return fail(format!("no bus {bus}"));
                }
            }
            (true, _) => return fail("flow measurements need a branch and end".into()),
            (false, _) => return fail("bus measurements need a bus id".into()),
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        match (self.source, self.zero_injection, self.sigma_pct, self.sigma) {
            (Source::Real, false, Some(p), None) if positive(p) => Ok(()),
            (Source::Pseudo, true, None, Some(s)) if positive(s) => Ok(()),
            (Source::Pseudo, false, None, None) => Ok(()),
            _ => fail(
                "real sensors need sigma_pct > 0, zero-injection pseudos need sigma > 0, \
                 other pseudos take their spread from the variant"
                    .into(),
            ),
        }
    }
}

/// Ordered list of measurement descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementPlan {
    descriptors: Vec<MeasurementDescriptor>,
}

impl MeasurementPlan {
    /// Validates descriptors against `net` and checks observability at flat start.
    pub fn new(
        net: &Network,
        y: &AdmittanceMatrix,
        descriptors: Vec<MeasurementDescriptor>,
    ) -> Result<Self> {
        for (i, d) in descriptors.iter().enumerate() {
            d.validate(net, i)?;
        }
        let plan = MeasurementPlan { descriptors };
        let rank = plan.rank_at(net, y, &StateVector::flat(net));
        if rank < net.n_states() {
            return Err(Error::Unobservable {
                rank,
                required: net.n_states(),
            });
        }
        Ok(plan)
    }

    pub fn from_json(net: &Network, y: &AdmittanceMatrix, text: &str) -> Result<Self> {
        let descriptors: Vec<MeasurementDescriptor> =
            serde_json::from_str(text).map_err(|e| Error::parse("measurement plan", e))?;
        Self::new(net, y, descriptors)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serialises")
    }

    pub fn descriptors(&self) -> &[MeasurementDescriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn count(&self, source: Source) -> usize {
        self.descriptors
            .iter()
            .filter(|d| d.source == source)
            .count()
    }

    /// Numerical rank of `H(x)` by singular values.
    pub fn rank_at(&self, net: &Network, y: &AdmittanceMatrix, x: &StateVector) -> usize {
        matrix_rank(&evaluate_jacobian(net, y, self, x))
    }

    /// Same plan with rows reordered: row `i` of the result is row `order[i]` here.
    pub fn permuted(&self, order: &[usize]) -> Self {
        MeasurementPlan {
            descriptors: order.iter().map(|&i| self.descriptors[i].clone()).collect(),
        }
    }
}

pub fn matrix_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let tol = max * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn load_plan(
    net: &Network,
    y: &AdmittanceMatrix,
    path: impl AsRef<Path>,
) -> Result<MeasurementPlan> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MeasurementPlan::from_json(net, y, &text)
}

/// The case-study plan: voltages at buses 0, 3, 8, 11, 13; P/Q injections at
/// 3, 8, 11, 13; P/Q flows at each [`feeder_heads`] branch; P/Q
/// pseudo-measurements at every other non-slack bus.
///
/// Sensor accuracies are drawn once from `sensor_seed`: one voltage accuracy per
/// bus, one power accuracy per bus shared by its P and Q, one per metered branch.
pub fn default_plan(
    net: &Network,
    y: &AdmittanceMatrix,
    sensor_seed: u64,
) -> Result<MeasurementPlan> {
    let slack = net.slack_position();
    let slack_id = net.buses()[slack].id;
    for id in MEASURED_VOLTAGE_BUSES
        .iter()
        .chain(&MEASURED_INJECTION_BUSES)
    {
        if net.position_of(*id).is_none() {
            return Err(Error::IncompatiblePlan(format!("network has no bus {id}")));
        }
    }
    if MEASURED_INJECTION_BUSES.contains(&slack_id) {
        return Err(Error::IncompatiblePlan(
            "injection sensor placed at the slack".into(),
        ));
    }

    let mut rng = rng::stream(sensor_seed, Domain::SensorAccuracy, 0, 0);
    let mut draw = |(lo, hi): (f64, f64)| rng.random_range(lo..hi);
    let mut out = Vec::new();

    for &bus in &MEASURED_VOLTAGE_BUSES {
        let pct = draw(VOLTAGE_SIGMA_PCT_RANGE);
        out.push(MeasurementDescriptor::real(
            MeasKind::VMag,
            Location::Bus { bus },
            pct,
        ));
    }
    for &bus in &MEASURED_INJECTION_BUSES {
        let pct = draw(POWER_SIGMA_PCT_RANGE);
        for kind in [MeasKind::PInjection, MeasKind::QInjection] {
            out.push(MeasurementDescriptor::real(
                kind,
                Location::Bus { bus },
                pct,
            ));
        }
    }
    for (branch, end) in feeder_heads(net) {
        let pct = draw(POWER_SIGMA_PCT_RANGE);
        for kind in [MeasKind::PFlow, MeasKind::QFlow] {
            out.push(MeasurementDescriptor::real(
                kind,
                Location::Branch { branch, end },
                pct,
            ));
        }
    }

    for pos in net.non_slack() {
        let bus = &net.buses()[pos];
        if MEASURED_INJECTION_BUSES.contains(&bus.id) {
            continue;
        }
        for kind in [MeasKind::PInjection, MeasKind::QInjection] {
            out.push(if bus.kind == BusKind::ZeroInjection {
                MeasurementDescriptor::zero_injection(kind, bus.id)
            } else {
                MeasurementDescriptor::pseudo(kind, bus.id)
            });
        }
    }
    MeasurementPlan::new(net, y, out)
}

/// First line of each feeder, metered at its busbar end. A feeder busbar is the
/// far end of a branch leaving the slack (the substation transformer); its
/// other in-service branches are the feeder heads. A busbar with no other
/// branch is metered on the transformer itself, at the slack end.
pub fn feeder_heads(net: &Network) -> Vec<(usize, BranchEnd)> {
    let slack_id = net.buses()[net.slack_position()].id;
    let end_at = |k: usize, bus: usize| {
        if net.branches()[k].from_bus == bus {
            BranchEnd::From
        } else {
            BranchEnd::To
        }
    };
    let mut heads = Vec::new();
    for (k, br) in net.in_service_branches() {
        let busbar = match (br.from_bus == slack_id, br.to_bus == slack_id) {
            (true, _) => br.to_bus,
            (_, true) => br.from_bus,
            _ => continue,
        };
        let lines: Vec<usize> = net
            .in_service_branches()
            .filter(|(j, b)| *j != k && (b.from_bus == busbar || b.to_bus == busbar))
            .map(|(j, _)| j)
            .collect();
        if lines.is_empty() {
            heads.push((k, end_at(k, slack_id)));
        } else {
            heads.extend(lines.into_iter().map(|j| (j, end_at(j, busbar))));
        }
    }
    heads
}

enum Row {
    Bus(usize),
    Flow(crate::netmodel::BranchPu, usize),
}

fn resolve(net: &Network, d: &MeasurementDescriptor) -> Row {
    match d.location {
        Location::Bus { bus } => Row::Bus(net.position_of(bus).expect("validated plan")),
        Location::Branch { branch, end } => {
            let br = net.branch_pu(branch);
            let at = match end {
                BranchEnd::From => br.from,
                BranchEnd::To => br.to,
            };
            Row::Flow(br, at)
        }
    }
}

/// Noise-free measurement values `h(x)`.
pub fn evaluate_h(
    net: &Network,
    y: &AdmittanceMatrix,
    plan: &MeasurementPlan,
    x: &StateVector,
) -> DVector<f64> {
    let v = x.bus_voltages(net);
    DVector::from_iterator(
        plan.len(),
        plan.descriptors
            .iter()
            .map(|d| match (d.kind, resolve(net, d)) {
                (MeasKind::VMag, Row::Bus(i)) => v.vm[i],
                (MeasKind::PInjection, Row::Bus(i)) => injection(y, &v, i).0,
                (MeasKind::QInjection, Row::Bus(i)) => injection(y, &v, i).1,
                (MeasKind::PFlow, Row::Flow(br, at)) => branch_flow(&br, &v, at).0,
                (MeasKind::QFlow, Row::Flow(br, at)) => branch_flow(&br, &v, at).1,
                _ => unreachable!("validated plan"),
            }),
    )
}

/// Analytic Jacobian `dh/dx`, `m x n_s`, columns ordered as the state vector.
pub fn evaluate_jacobian(
    net: &Network,
    y: &AdmittanceMatrix,
    plan: &MeasurementPlan,
    x: &StateVector,
) -> DMatrix<f64> {
    let v = x.bus_voltages(net);
    let n = net.n_buses() - 1;
    let mut jac = DMatrix::zeros(plan.len(), 2 * n);
    let mut scatter = |row: usize, partials: &[Partial]| {
        for &(bus, d_theta, d_v) in partials {
            if let Some(col) = net.state_slot(bus) {
                jac[(row, col)] += d_theta;
                jac[(row, n + col)] += d_v;
            }
        }
    };
    for (row, d) in plan.descriptors.iter().enumerate() {
        match (d.kind, resolve(net, d)) {
            (MeasKind::VMag, Row::Bus(i)) => scatter(row, &[(i, 0.0, 1.0)]),
            (MeasKind::PInjection, Row::Bus(i)) => scatter(row, &injection_partials(y, &v, i).0),
            (MeasKind::QInjection, Row::Bus(i)) => scatter(row, &injection_partials(y, &v, i).1),
            (MeasKind::PFlow, Row::Flow(br, at)) => {
                scatter(row, &branch_flow_partials(&br, &v, at).0)
            }
            (MeasKind::QFlow, Row::Flow(br, at)) => {
                scatter(row, &branch_flow_partials(&br, &v, at).1)
            }
            _ => unreachable!("validated plan"),
        }
    }
    jac
}

/// Calibrated error law of one measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementNoise {
    pub law: CalibratedNoise,
    /// The law is expressed on consumption `-z`, so draws are negated.
    pub on_consumption: bool,
    pub zero_injection: bool,
}

impl MeasurementNoise {
    pub fn sigma(&self) -> f64 {
        self.law.sigma
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let draw = self.law.sample(rng);
        if self.on_consumption {
            -draw
        } else {
            draw
        }
    }
}

/// Per-measurement noise laws for one scenario and one pseudo-measurement variant.
///
/// Real sensors are Gaussian with `sigma = max(sigma_pct |z*|, SIGMA_FLOOR_PU)`.
/// Variant pseudo-measurements use the variant's law on the bus consumption
/// `-z*` with the same proportional spread, so a right-skewed law models demand
/// spikes. Zero-injection pseudos are Gaussian with the fixed floor spread.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLibrary {
    entries: Vec<MeasurementNoise>,
}

impl NoiseLibrary {
    pub fn build(
        plan: &MeasurementPlan,
        z_true: &DVector<f64>,
        variant: &DistributionSpec,
    ) -> Result<Self> {
        assert_eq!(plan.len(), z_true.len());
        let proportional = |pct: f64, z: f64| (pct * z.abs()).max(SIGMA_FLOOR_PU);
        let entries = plan
            .descriptors
            .iter()
            .zip(z_true.iter())
            .map(|(d, &z)| {
                let gaussian =
                    |sigma| CalibratedNoise::with_sigma(DistributionSpec::gaussian(1.0), z, sigma);
                Ok(match (d.source, d.zero_injection) {
                    (Source::Real, _) => MeasurementNoise {
                        law: gaussian(proportional(d.sigma_pct.expect("validated"), z))?,
                        on_consumption: false,
                        zero_injection: false,
                    },
                    (Source::Pseudo, true) => MeasurementNoise {
                        law: gaussian(d.sigma.expect("validated"))?,
                        on_consumption: false,
                        zero_injection: true,
                    },
                    (Source::Pseudo, false) => MeasurementNoise {
                        law: CalibratedNoise::with_sigma(
                            *variant,
                            -z,
                            proportional(variant.sigma_pct(), z),
                        )?,
                        on_consumption: true,
                        zero_injection: false,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NoiseLibrary { entries })
    }

    pub fn entries(&self) -> &[MeasurementNoise] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Draws `z` for one scenario. Measurement `i` uses its own stream keyed by
/// `(master_seed, scenario_id, i)`.
pub fn sample_measurements(
    library: &NoiseLibrary,
    master_seed: u64,
    scenario_id: u64,
) -> DVector<f64> {
    DVector::from_iterator(
        library.len(),
        library.entries.iter().enumerate().map(|(i, e)| {
            let mut rng = rng::stream(master_seed, Domain::MeasurementNoise, scenario_id, i as u64);
            e.sample(&mut rng)
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_ybus, cigre_mv};
    use crate::powerflow::solve_power_flow;
    use crate::test_networks::{triangle, two_bus};

    fn fixture() -> (Network, AdmittanceMatrix, MeasurementPlan) {
        let net = cigre_mv();
        let y = build_ybus(&net);
        let plan = default_plan(&net, &y, 7).unwrap();
        (net, y, plan)
    }

    #[test]
    fn default_plan_counts() {
        let (net, y, plan) = fixture();
        assert_eq!(plan.count(Source::Real), 17);
        assert_eq!(plan.count(Source::Pseudo), 20);
        assert_eq!(plan.len(), 37);
        assert_eq!(plan.rank_at(&net, &y, &StateVector::flat(&net)), 28);
        let zi: Vec<_> = plan
            .descriptors()
            .iter()
            .filter(|d| d.zero_injection)
            .collect();
        assert_eq!(zi.len(), 2);
        assert!(zi.iter().all(|d| d.location == Location::Bus { bus: 2 }));
    }

    #[test]
    fn every_unmeasured_bus_has_one_p_and_one_q_pseudo() {
        let (net, _, plan) = fixture();
        for pos in net.non_slack() {
            let id = net.buses()[pos].id;
            let count = |kind| {
                plan.descriptors()
                    .iter()
                    .filter(|d| {
                        d.source == Source::Pseudo
                            && d.kind == kind
                            && d.location == Location::Bus { bus: id }
                    })
                    .count()
            };
            let expected = usize::from(!MEASURED_INJECTION_BUSES.contains(&id));
            assert_eq!(count(MeasKind::PInjection), expected, "bus {id}");
            assert_eq!(count(MeasKind::QInjection), expected, "bus {id}");
        }
    }

    #[test]
    fn feeder_heads_are_the_first_lines_at_the_busbars() {
        let (net, _, plan) = fixture();
        let heads: Vec<_> = plan
            .descriptors()
            .iter()
            .filter_map(|d| match d.location {
                Location::Branch { branch, end } => {
                    let br = &net.branches()[branch];
                    Some((br.from_bus, br.to_bus, end, d.kind))
                }
                _ => None,
            })
            .collect();
        assert_eq!(
            heads,
            vec![
                (1, 2, BranchEnd::From, MeasKind::PFlow),
                (1, 2, BranchEnd::From, MeasKind::QFlow),
                (12, 13, BranchEnd::From, MeasKind::PFlow),
                (12, 13, BranchEnd::From, MeasKind::QFlow),
            ]
        );
    }

    #[test]
    fn bare_busbar_is_metered_on_its_transformer() {
        // two-bus: the far bus has no outgoing line
        let net = two_bus(0.01, 0.05, 0.1, 0.0);
        assert_eq!(feeder_heads(&net), vec![(0, BranchEnd::From)]);
        // triangle: bus 1 and bus 2 both hang off the slack and share line 1-2
        let net = triangle();
        assert_eq!(
            feeder_heads(&net),
            vec![(1, BranchEnd::From), (1, BranchEnd::To)]
        );
    }

    #[test]
    fn sensor_accuracies_in_range_and_seeded() {
        let (net, y, plan) = fixture();
        for d in plan
            .descriptors()
            .iter()
            .filter(|d| d.source == Source::Real)
        {
            let pct = d.sigma_pct.unwrap();
            let (lo, hi) = if d.kind == MeasKind::VMag {
                VOLTAGE_SIGMA_PCT_RANGE
            } else {
                POWER_SIGMA_PCT_RANGE
            };
            assert!(pct >= lo && pct < hi);
        }
        assert_eq!(default_plan(&net, &y, 7).unwrap(), plan);
        assert_ne!(default_plan(&net, &y, 8).unwrap(), plan);
    }

    #[test]
    fn plan_json_roundtrip_preserves_order() {
        let (net, y, plan) = fixture();
        let back = MeasurementPlan::from_json(&net, &y, &plan.to_json()).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn unobservable_plan_rejected() {
        let (net, y, plan) = fixture();
        let fewer: Vec<_> = plan.descriptors().iter().take(30).cloned().collect();
        assert!(matches!(
            MeasurementPlan::new(&net, &y, fewer),
            Err(Error::Unobservable { required: 28, .. })
        ));
    }

    #[test]
    fn descriptor_validation() {
        let net = two_bus(0.0, 0.1, 0.1, 0.0);
        let y = build_ybus(&net);
        let bad_bus = vec![MeasurementDescriptor::real(
            MeasKind::VMag,
            Location::Bus { bus: 9 },
            0.01,
        )];
        assert!(matches!(
            MeasurementPlan::new(&net, &y, bad_bus),
            Err(Error::IncompatiblePlan(_))
        ));
        let flow_on_bus = vec![MeasurementDescriptor::real(
            MeasKind::PFlow,
            Location::Bus { bus: 1 },
            0.01,
        )];
        assert!(MeasurementPlan::new(&net, &y, flow_on_bus).is_err());
        let mut no_sigma =
            MeasurementDescriptor::real(MeasKind::VMag, Location::Bus { bus: 1 }, 0.01);
        no_sigma.sigma_pct = None;
        assert!(MeasurementPlan::new(&net, &y, vec![no_sigma]).is_err());
    }

    #[test]
    fn h_at_power_flow_solution_reproduces_schedule() {
        let (net, y, plan) = fixture();
        let lambda = 1.2;
        let sol = solve_power_flow(&net, &y, lambda, 1e-10, 30).unwrap();
        let h = evaluate_h(&net, &y, &plan, &sol.state);
        for (d, &val) in plan.descriptors().iter().zip(h.iter()) {
            if let Location::Bus { bus } = d.location {
                let pos = net.position_of(bus).unwrap();
                let s = net.scheduled_injection(pos, lambda);
                match d.kind {
                    MeasKind::PInjection => assert!((val - s.re).abs() < 1e-8),
                    MeasKind::QInjection => assert!((val - s.im).abs() < 1e-8),
                    MeasKind::VMag if pos == 0 => assert_eq!(val, net.slack_voltage()),
                    MeasKind::VMag => assert_eq!(val, sol.state.vmag[net.state_slot(pos).unwrap()]),
                    _ => {}
                }
            }
        }
    }

    fn finite_difference(
        net: &Network,
        y: &AdmittanceMatrix,
        plan: &MeasurementPlan,
        x: &StateVector,
    ) -> DMatrix<f64> {
        let x0 = x.to_vector();
        let step = 1e-6;
        let mut fd = DMatrix::zeros(plan.len(), x0.len());
        for k in 0..x0.len() {
            let mut plus = x0.clone();
            let mut minus = x0.clone();
            plus[k] += step;
            minus[k] -= step;
            let hp = evaluate_h(net, y, plan, &StateVector::from_vector(&plus));
            let hm = evaluate_h(net, y, plan, &StateVector::from_vector(&minus));
            fd.set_column(k, &((hp - hm) / (2.0 * step)));
        }
        fd
    }

    fn assert_jacobian_matches(
        net: &Network,
        y: &AdmittanceMatrix,
        plan: &MeasurementPlan,
        x: &StateVector,
    ) {
        let analytic = evaluate_jacobian(net, y, plan, x);
        let fd = finite_difference(net, y, plan, x);
        for i in 0..analytic.nrows() {
            for j in 0..analytic.ncols() {
                let (a, f) = (analytic[(i, j)], fd[(i, j)]);
                let scale = a.abs().max(1.0);
                assert!(
                    (a - f).abs() / scale < 1e-6,
                    "H[{i}][{j}]: analytic {a}, fd {f}"
                );
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_on_fixture() {
        use rand::SeedableRng;
        let (net, y, plan) = fixture();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let mut x = StateVector::flat(&net);
            for t in &mut x.theta {
                *t = rng.random_range(-0.1..0.1);
            }
            for v in &mut x.vmag {
                *v = rng.random_range(0.9..1.1);
            }
            assert_jacobian_matches(&net, &y, &plan, &x);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_all_kinds_with_charging() {
        // every kind at both branch ends, on a meshed net with line charging
        let net = triangle();
        let y = build_ybus(&net);
        let mut ds = Vec::new();
        for bus in 0..3 {
            ds.push(MeasurementDescriptor::real(
                MeasKind::VMag,
                Location::Bus { bus },
                0.01,
            ));
            ds.push(MeasurementDescriptor::real(
                MeasKind::PInjection,
                Location::Bus { bus },
                0.01,
            ));
            ds.push(MeasurementDescriptor::real(
                MeasKind::QInjection,
                Location::Bus { bus },
                0.01,
            ));
        }
        for branch in 0..3 {
            for end in [BranchEnd::From, BranchEnd::To] {
                ds.push(MeasurementDescriptor::real(
                    MeasKind::PFlow,
                    Location::Branch { branch, end },
                    0.01,
                ));
                ds.push(MeasurementDescriptor::real(
                    MeasKind::QFlow,
                    Location::Branch { branch, end },
                    0.01,
                ));
            }
        }
        let plan = MeasurementPlan::new(&net, &y, ds).unwrap();
        let x = StateVector {
            theta: vec![-0.04, 0.02],
            vmag: vec![0.96, 1.02],
        };
        assert_jacobian_matches(&net, &y, &plan, &x);
    }

    #[test]
    fn vmag_rows_are_unit_vectors() {
        let (net, y, plan) = fixture();
        let jac = evaluate_jacobian(&net, &y, &plan, &StateVector::flat(&net));
        let n = net.n_buses() - 1;
        // bus 0 is the slack: its voltage row is empty
        assert!(jac.row(0).iter().all(|&v| v == 0.0));
        let slot = net.state_slot(net.position_of(3).unwrap()).unwrap();
        for j in 0..jac.ncols() {
            assert_eq!(jac[(1, j)], if j == n + slot { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn zero_noise_limit_reproduces_truth() {
        let (net, y, plan) = fixture();
        let sol = solve_power_flow(&net, &y, 1.0, 1e-8, 30).unwrap();
        let z_true = evaluate_h(&net, &y, &plan, &sol.state);
        let mut lib =
            NoiseLibrary::build(&plan, &z_true, &DistributionSpec::gaussian(0.2)).unwrap();
        for e in &mut lib.entries {
            e.law =
                CalibratedNoise::with_sigma(DistributionSpec::gaussian(1.0), e.law.mu_star, 0.0)
                    .unwrap();
        }
        let z = sample_measurements(&lib, 3, 0);
        for (a, b) in z.iter().zip(z_true.iter()) {
            assert_eq!(a.abs(), b.abs());
        }
    }

    #[test]
    fn pseudo_laws_live_on_consumption() {
        let (net, y, plan) = fixture();
        let sol = solve_power_flow(&net, &y, 1.0, 1e-8, 30).unwrap();
        let z_true = evaluate_h(&net, &y, &plan, &sol.state);
        let spec = DistributionSpec::BiasedGaussian {
            sigma_pct: 0.2,
            bias_pct: 0.3,
        };
        let lib = NoiseLibrary::build(&plan, &z_true, &spec).unwrap();
        for (i, (e, d)) in lib.entries().iter().zip(plan.descriptors()).enumerate() {
            if d.is_variant_pseudo() {
                assert!(e.on_consumption);
                assert!((e.sigma() - (0.2 * z_true[i].abs()).max(SIGMA_FLOOR_PU)).abs() < 1e-15);
                // mean in measurement space is (1 + bias) z*
                assert!((-e.law.mean() - 1.3 * z_true[i]).abs() < 1e-12);
            } else if d.zero_injection {
                assert_eq!(e.sigma(), 0.01);
            }
        }
    }

    #[test]
    fn gaussian_noise_sample_std() {
        let cn = CalibratedNoise::with_sigma(DistributionSpec::gaussian(1.0), 0.0, 1.0).unwrap();
        let e = MeasurementNoise {
            law: cn,
            on_consumption: false,
            zero_injection: false,
        };
        let lib = NoiseLibrary {
            entries: vec![e; 100_000],
        };
        let z = sample_measurements(&lib, 17, 4);
        let m = z.mean();
        let sd = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (z.len() as f64 - 1.0)).sqrt();
        assert!((0.99..=1.01).contains(&sd), "{sd}");
    }
}
