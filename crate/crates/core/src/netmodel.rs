//! Network description and bus admittance matrix.
//!
//! Networks are read from a JSON document with top-level keys `s_base_mva`,
//! `buses` and `branches`. Branch impedances are given in ohms referred to the
//! voltage level of the `to` bus, line charging in microsiemens. Everything is
//! converted to per-unit on `(s_base_mva, base_kv)` when the admittance matrix
//! is built.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Load,
    ZeroInjection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub base_kv: f64,
    /// Voltage magnitude setpoint in p.u., slack bus only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_setpoint: Option<f64>,
    #[serde(default)]
    pub p_load_mw: f64,
    #[serde(default)]
    pub q_load_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    #[serde(rename = "from")]
    pub from_bus: usize,
    #[serde(rename = "to")]
    pub to_bus: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    /// Total line charging susceptance.
    #[serde(default)]
    pub b_us: f64,
    #[serde(default = "default_in_service")]
    pub in_service: bool,
}

fn default_in_service() -> bool {
    true
}

fn default_s_base() -> f64 {
    1.0
}

/// On-disk layout of a network file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_s_base")]
    pub s_base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

/// Per-unit parameters of one in-service branch, by bus position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchPu {
    pub from: usize,
    pub to: usize,
    pub y_series: Complex64,
    /// Half of the total charging susceptance, placed at each end.
    pub b_half: f64,
}

/// A validated network. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    name: Option<String>,
    s_base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    slack: usize,
    position: HashMap<usize, usize>,
}

impl Network {
    pub fn new(s_base_mva: f64, buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Self> {
        Self::from_file(NetworkFile {
            name: None,
            s_base_mva,
            buses,
            branches,
        })
    }

    pub fn from_file(file: NetworkFile) -> Result<Self> {
        let NetworkFile {
            name,
            s_base_mva,
            buses,
            branches,
        } = file;
        if !(s_base_mva.is_finite() && s_base_mva > 0.0) {
            return Err(Error::InvalidNetwork(format!(
                "s_base_mva must be positive, got {s_base_mva}"
            )));
        }
        if buses.is_empty() {
            return Err(Error::InvalidNetwork("no buses".into()));
        }

        let mut position = HashMap::with_capacity(buses.len());
        for (pos, bus) in buses.iter().enumerate() {
            if position.insert(bus.id, pos).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate bus id {}",
                    bus.id
                )));
            }
            if !(bus.base_kv.is_finite() && bus.base_kv > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "bus {}: base_kv must be positive",
                    bus.id
                )));
            }
            if !(bus.p_load_mw.is_finite() && bus.q_load_mvar.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "bus {}: non-finite load",
                    bus.id
                )));
            }
            if bus.kind == BusKind::ZeroInjection
                && (bus.p_load_mw != 0.0 || bus.q_load_mvar != 0.0)
            {
                return Err(Error::InvalidNetwork(format!(
                    "zero-injection bus {} carries load",
                    bus.id
                )));
            }
        }

        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        let slack = match slacks.as_slice() {
            [s] => *s,
            [] => return Err(Error::InvalidNetwork("no slack bus".into())),
            _ => {
                return Err(Error::InvalidNetwork(format!(
                    "{} slack buses, expected exactly one",
                    slacks.len()
                )))
            }
        };
        match buses[slack].v_setpoint {
            Some(v) if v.is_finite() && v > 0.0 => {}
            Some(v) => {
                return Err(Error::InvalidNetwork(format!(
                    "slack setpoint must be positive, got {v}"
                )))
            }
            None => return Err(Error::InvalidNetwork("slack bus lacks v_setpoint".into())),
        }

        for (k, br) in branches.iter().enumerate() {
            if br.from_bus == br.to_bus {
                return Err(Error::InvalidNetwork(format!("branch {k} is a self-loop")));
            }
            for end in [br.from_bus, br.to_bus] {
                if !position.contains_key(&end) {
                    return Err(Error::InvalidNetwork(format!(
                        "branch {k} references unknown bus {end}"
                    )));
                }
            }
            if br.r_ohm == 0.0 && br.x_ohm == 0.0 {
                return Err(Error::InvalidNetwork(format!(
                    "branch {k} has zero impedance"
                )));
            }
            if !(br.r_ohm.is_finite() && br.x_ohm.is_finite() && br.b_us.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "branch {k} has non-finite parameters"
                )));
            }
        }

        let net = Network {
            name,
            s_base_mva,
            buses,
            branches,
            slack,
            position,
        };
        if !net.is_connected() {
            return Err(Error::InvalidNetwork(
                "in-service graph is not connected".into(),
            ));
        }
        Ok(net)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| Error::parse("network", e))?;
        Self::from_file(file)
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            name: self.name.clone(),
            s_base_mva: self.s_base_mva,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
        }
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn s_base_mva(&self) -> f64 {
        self.s_base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Dimension of the state vector, `2 (n_b - 1)`.
    pub fn n_states(&self) -> usize {
        2 * (self.buses.len() - 1)
    }

    pub fn slack_position(&self) -> usize {
        self.slack
    }

    pub fn slack_voltage(&self) -> f64 {
        self.buses[self.slack].v_setpoint.unwrap_or(1.0)
    }

    /// Bus positions of the non-slack buses, in file order.
    pub fn non_slack(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.buses.len()).filter(move |&i| i != self.slack)
    }

    pub fn position_of(&self, bus_id: usize) -> Option<usize> {
        self.position.get(&bus_id).copied()
    }

    /// Index of a bus within the angle (or magnitude) block of the state vector.
    pub fn state_slot(&self, pos: usize) -> Option<usize> {
        match pos.cmp(&self.slack) {
            std::cmp::Ordering::Less => Some(pos),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(pos - 1),
        }
    }

    /// Returns a copy with the slack voltage setpoint replaced.
    pub fn with_slack_voltage(&self, v: f64) -> Result<Self> {
        let mut file = self.to_file();
        file.buses[self.slack].v_setpoint = Some(v);
        Self::from_file(file)
    }

    pub fn with_s_base(&self, s_base_mva: f64) -> Result<Self> {
        let mut file = self.to_file();
        file.s_base_mva = s_base_mva;
        Self::from_file(file)
    }

    pub fn with_branch_in_service(&self, branch: usize, in_service: bool) -> Result<Self> {
        let mut file = self.to_file();
        let br = file
            .branches
            .get_mut(branch)
            .ok_or_else(|| Error::InvalidNetwork(format!("no branch {branch}")))?;
        br.in_service = in_service;
        Self::from_file(file)
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = (usize, &Branch)> {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.in_service)
    }

    /// Connected with `n_b - 1` in-service branches.
    pub fn is_radial(&self) -> bool {
        self.in_service_branches().count() + 1 == self.buses.len() && self.is_connected()
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for (_, br) in self.in_service_branches() {
            let (f, t) = (self.position[&br.from_bus], self.position[&br.to_bus]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.slack]);
        seen[self.slack] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Per-unit parameters of branch `k`.
    pub fn branch_pu(&self, k: usize) -> BranchPu {
        let br = &self.branches[k];
        let from = self.position[&br.from_bus];
        let to = self.position[&br.to_bus];
        let kv = self.buses[to].base_kv;
        let z_base = kv * kv / self.s_base_mva;
        let z = Complex64::new(br.r_ohm / z_base, br.x_ohm / z_base);
        BranchPu {
            from,
            to,
            y_series: z.inv(),
            b_half: 0.5 * br.b_us * 1e-6 * z_base,
        }
    }

    /// Scheduled complex injection at bus position `pos` in p.u. for load multiplier `lambda`.
    pub fn scheduled_injection(&self, pos: usize, lambda: f64) -> Complex64 {
        let bus = &self.buses[pos];
        -Complex64::new(bus.p_load_mw, bus.q_load_mvar) * (lambda / self.s_base_mva)
    }
}

/// Reads and validates a network file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: NetworkFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    Network::from_file(file)
}

/// The bundled 15-bus CIGRE MV benchmark fixture, as JSON text.
pub const CIGRE_MV_JSON: &str = include_str!("../data/cigre_mv.json");

pub fn cigre_mv() -> Network {
    Network::from_json(CIGRE_MV_JSON).expect("bundled fixture is valid")
}

/// Dense complex bus admittance matrix in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    y: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.y[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    /// Off-diagonal entries that are structurally nonzero.
    pub fn off_diagonal_nonzeros(&self) -> usize {
        let n = self.dim();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.y[(i, j)] != Complex64::new(0.0, 0.0))
            .count()
    }
}

pub fn build_ybus(net: &Network) -> AdmittanceMatrix {
    let n = net.n_buses();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (k, _) in net.in_service_branches() {
        let BranchPu {
            from,
            to,
            y_series,
            b_half,
        } = net.branch_pu(k);
        let shunt = Complex64::new(0.0, b_half);
        y[(from, from)] += y_series + shunt;
        y[(to, to)] += y_series + shunt;
        y[(from, to)] -= y_series;
        y[(to, from)] -= y_series;
    }
    AdmittanceMatrix { y }
}
