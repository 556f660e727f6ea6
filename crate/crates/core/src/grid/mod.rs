//! Transmission network model: buses, Π-model branches and the bus
//! admittance matrix.
//!
//! Branch convention (recorded in `docs/conventions.md`): a branch with series
//! admittance `y`, total charging susceptance `b` and complex tap `t` on the
//! from side contributes
//!
//! ```text
//! Y_ff = (y + jb/2)/|t|²   Y_ft = −y/conj(t)
//! Y_tf = −y/t              Y_tt = y + jb/2
//! ```
//!
//! and every bus adds its shunt `g + jb` to the diagonal.

mod json;
mod matpower;

pub use json::{network_from_json, network_to_json};
pub use matpower::parse_matpower;

use crate::sparse::SparseMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("branch {branch} references unknown bus {bus}")]
    UnknownBus { branch: usize, bus: u32 },
    #[error("branch {branch} connects bus {bus} to itself")]
    SelfLoop { branch: usize, bus: u32 },
    #[error("branch {0} has zero series impedance")]
    ZeroImpedance(usize),
    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("bus {id} has unsupported type code {code}")]
    BusType { id: u32, code: i64 },
    #[error("case has no buses")]
    Empty,
    #[error("invalid JSON case: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read case file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseFormat {
    MatpowerM,
    Json,
}

impl CaseFormat {
    /// Guesses the format from a file extension; anything but `.json` is
    /// treated as a `.m` case.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => CaseFormat::Json,
            _ => CaseFormat::MatpowerM,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    /// External bus number from the case file.
    pub id: u32,
    /// Zero-based position in file order.
    pub index: usize,
    pub bus_type: BusType,
    /// Per-unit shunt conductance.
    pub shunt_g: f64,
    /// Per-unit shunt susceptance.
    pub shunt_b: f64,
    pub vm_init: f64,
    /// Radians.
    pub va_init: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub from_idx: usize,
    pub to_idx: usize,
    pub r: f64,
    pub x: f64,
    /// `1/(r + jx)`.
    pub series_y: Complex64,
    pub charging_b: f64,
    pub tap_ratio: f64,
    /// Phase shift in radians.
    pub shift: f64,
    /// `tap_ratio·e^{j·shift}`.
    pub tap: Complex64,
    pub in_service: bool,
}

/// The four Π-model admittance entries of a branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchStamp {
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

impl Branch {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        from_idx: usize,
        to_idx: usize,
        r: f64,
        x: f64,
        charging_b: f64,
        tap_ratio: f64,
        shift: f64,
        in_service: bool,
    ) -> Self {
        let tap_ratio = if tap_ratio == 0.0 { 1.0 } else { tap_ratio };
        let z = Complex64::new(r, x);
        let series_y = if z.norm() > 0.0 {
            z.inv()
        } else {
            Complex64::new(0.0, 0.0)
        };
        Self {
            from_idx,
            to_idx,
            r,
            x,
            series_y,
            charging_b,
            tap_ratio,
            shift,
            tap: Complex64::from_polar(tap_ratio, shift),
            in_service,
        }
    }

    pub fn stamp(&self) -> BranchStamp {
        let y = self.series_y;
        let yc = Complex64::new(0.0, self.charging_b / 2.0);
        let t = self.tap;
        BranchStamp {
            yff: (y + yc) / t.norm_sqr(),
            yft: -y / t.conj(),
            ytf: -y / t,
            ytt: y + yc,
        }
    }

    /// The endpoint opposite `bus`, if the branch touches it.
    pub fn other_end(&self, bus: usize) -> Option<usize> {
        if self.from_idx == bus {
            Some(self.to_idx)
        } else if self.to_idx == bus {
            Some(self.from_idx)
        } else {
            None
        }
    }
}

/// Assembles the bus admittance matrix. Out-of-service branches are skipped.
pub fn build_admittance(buses: &[Bus], branches: &[Branch]) -> SparseMatrix {
    let n = buses.len();
    let shunts = buses
        .iter()
        .map(|b| (b.index, b.index, Complex64::new(b.shunt_g, b.shunt_b)));
    let stamps = branches.iter().filter(|br| br.in_service).flat_map(|br| {
        let s = br.stamp();
        let (f, t) = (br.from_idx, br.to_idx);
        [(f, f, s.yff), (f, t, s.yft), (t, f, s.ytf), (t, t, s.ytt)]
    });
    SparseMatrix::from_triplets(n, n, shunts.chain(stamps))
}

#[derive(Clone, Debug)]
pub struct Network {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    ybus: SparseMatrix,
    base_mva: f64,
    index_of: BTreeMap<u32, usize>,
    slack: usize,
}

impl Network {
    /// Validates the bus/branch tables and builds the admittance matrix.
    /// Bus `index` fields are reassigned to file order.
    pub fn new(
        mut buses: Vec<Bus>,
        branches: Vec<Branch>,
        base_mva: f64,
    ) -> Result<Self, CaseError> {
        if buses.is_empty() {
            return Err(CaseError::Empty);
        }
        let mut index_of = BTreeMap::new();
        for (k, bus) in buses.iter_mut().enumerate() {
            bus.index = k;
            if index_of.insert(bus.id, k).is_some() {
                return Err(CaseError::DuplicateBus(bus.id));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .filter(|b| b.bus_type == BusType::Slack)
            .map(|b| b.index)
            .collect();
        if slacks.len() != 1 {
            return Err(CaseError::SlackCount(slacks.len()));
        }
        for (k, br) in branches.iter().enumerate() {
            for idx in [br.from_idx, br.to_idx] {
                if idx >= buses.len() {
                    return Err(CaseError::UnknownBus {
                        branch: k,
                        bus: idx as u32,
                    });
                }
            }
            if br.from_idx == br.to_idx {
                return Err(CaseError::SelfLoop {
                    branch: k,
                    bus: buses[br.from_idx].id,
                });
            }
            if br.in_service && Complex64::new(br.r, br.x).norm() == 0.0 {
                return Err(CaseError::ZeroImpedance(k));
            }
        }
        let ybus = build_admittance(&buses, &branches);
        Ok(Self {
            buses,
            branches,
            ybus,
            base_mva,
            index_of,
            slack: slacks[0],
        })
    }

    pub fn parse(text: &str, format: CaseFormat) -> Result<Self, CaseError> {
        match format {
            CaseFormat::MatpowerM => parse_matpower(text),
            CaseFormat::Json => network_from_json(text),
        }
    }

    pub fn from_file(path: &Path, format: Option<CaseFormat>) -> Result<Self, CaseError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, format.unwrap_or_else(|| CaseFormat::from_path(path)))
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn ybus(&self) -> &SparseMatrix {
        &self.ybus
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.index_of.get(&id).copied()
    }

    pub fn bus_id(&self, index: usize) -> u32 {
        self.buses[index].id
    }

    /// In-service branches touching `bus`, in branch order.
    pub fn incident_branches(&self, bus: usize) -> impl Iterator<Item = (usize, &Branch)> + '_ {
        self.branches
            .iter()
            .enumerate()
            .filter(move |(_, br)| br.in_service && (br.from_idx == bus || br.to_idx == bus))
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = (usize, &Branch)> + '_ {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, br)| br.in_service)
    }

    /// Copy of the network with one branch taken out of service.
    pub fn with_branch_out(&self, branch: usize) -> Self {
        let mut branches = self.branches.clone();
        branches[branch].in_service = false;
        let ybus = build_admittance(&self.buses, &branches);
        Self {
            branches,
            ybus,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    const TWO_BUS: &str = r#"{
        "base_mva": 100,
        "buses": [{"id": 1, "type": "slack"}, {"id": 2, "type": "pq"}],
        "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 0.1}]
    }"#;

    fn bus(id: u32, bus_type: BusType) -> Bus {
        Bus {
            id,
            index: 0,
            bus_type,
            shunt_g: 0.0,
            shunt_b: 0.0,
            vm_init: 1.0,
            va_init: 0.0,
        }
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_bus_json_case() {
        let net = Network::parse(TWO_BUS, CaseFormat::Json).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.branches().len(), 1);
        assert!((net.branches()[0].series_y - c(0.0, -10.0)).norm() < 1e-12);
        let y = net.ybus();
        assert!((y.get(0, 0) - c(0.0, -10.0)).norm() < 1e-12);
        assert!((y.get(0, 1) - c(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(1, 0) - c(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(1, 1) - c(0.0, -10.0)).norm() < 1e-12);
    }

    #[test]
    fn unknown_bus_is_rejected() {
        let text = TWO_BUS.replace(r#""to": 2"#, r#""to": 99"#);
        let err = Network::parse(&text, CaseFormat::Json).unwrap_err();
        assert!(err.to_string().contains("unknown bus"), "{err}");
    }

    #[test]
    fn shunt_adds_to_diagonal() {
        let mut b1 = bus(1, BusType::Slack);
        b1.shunt_b = 0.05;
        let net = Network::new(
            vec![b1, bus(2, BusType::Pq)],
            vec![Branch::new(0, 1, 0.0, 0.1, 0.0, 1.0, 0.0, true)],
            100.0,
        )
        .unwrap();
        assert!((net.ybus().get(0, 0) - c(0.0, -9.95)).norm() < 1e-12);
    }

    #[test]
    fn triangle_matches_dense_stamp_sum() {
        let buses = vec![
            bus(1, BusType::Slack),
            bus(2, BusType::Pq),
            bus(3, BusType::Pq),
        ];
        let branches = vec![
            Branch::new(0, 1, 0.0, 0.1, 0.0, 1.0, 0.0, true),
            Branch::new(1, 2, 0.0, 0.1, 0.0, 1.0, 0.0, true),
            Branch::new(0, 2, 0.0, 0.1, 0.0, 1.0, 0.0, true),
        ];
        let net = Network::new(buses, branches.clone(), 100.0).unwrap();
        // Dense oracle: accumulate each branch's 2x2 stamp.
        let mut dense = DMatrix::<Complex64>::zeros(3, 3);
        for br in &branches {
            let y = c(0.0, -1.0 / br.x);
            let (f, t) = (br.from_idx, br.to_idx);
            dense[(f, f)] += y;
            dense[(t, t)] += y;
            dense[(f, t)] -= y;
            dense[(t, f)] -= y;
        }
        let y = net.ybus().to_dense();
        assert!((y - &dense).norm() < 1e-12);
        for i in 0..3 {
            assert!((dense[(i, i)] - c(0.0, -20.0)).norm() < 1e-12);
        }
        assert!((dense[(0, 1)] - c(0.0, 10.0)).norm() < 1e-12);
    }

    #[test]
    fn out_of_service_branch_removes_its_stamp() {
        let buses = vec![
            bus(1, BusType::Slack),
            bus(2, BusType::Pq),
            bus(3, BusType::Pq),
        ];
        let branches = vec![
            Branch::new(0, 1, 0.01, 0.1, 0.02, 0.97, 0.1, true),
            Branch::new(1, 2, 0.02, 0.2, 0.04, 1.0, 0.0, true),
        ];
        let net = Network::new(buses, branches, 100.0).unwrap();
        let reduced = net.with_branch_out(0);
        let s = net.branches()[0].stamp();
        let mut expected = net.ybus().to_dense();
        expected[(0, 0)] -= s.yff;
        expected[(0, 1)] -= s.yft;
        expected[(1, 0)] -= s.ytf;
        expected[(1, 1)] -= s.ytt;
        assert!((reduced.ybus().to_dense() - expected).norm() < 1e-12);
    }

    #[test]
    fn zero_tap_means_unity() {
        let br = Branch::new(0, 1, 0.0, 0.1, 0.0, 0.0, 0.0, true);
        assert_eq!(br.tap, c(1.0, 0.0));
    }

    #[test]
    fn semantic_errors() {
        let dup = Network::new(
            vec![bus(1, BusType::Slack), bus(1, BusType::Pq)],
            vec![],
            100.0,
        );
        assert!(matches!(dup, Err(CaseError::DuplicateBus(1))));
        let two_slack = Network::new(
            vec![bus(1, BusType::Slack), bus(2, BusType::Slack)],
            vec![],
            100.0,
        );
        assert!(matches!(two_slack, Err(CaseError::SlackCount(2))));
        let zero_z = Network::new(
            vec![bus(1, BusType::Slack), bus(2, BusType::Pq)],
            vec![Branch::new(0, 1, 0.0, 0.0, 0.0, 1.0, 0.0, true)],
            100.0,
        );
        assert!(matches!(zero_z, Err(CaseError::ZeroImpedance(0))));
        // Zero impedance is tolerated on an out-of-service branch.
        assert!(Network::new(
            vec![bus(1, BusType::Slack), bus(2, BusType::Pq)],
            vec![Branch::new(0, 1, 0.0, 0.0, 0.0, 1.0, 0.0, false)],
            100.0,
        )
        .is_ok());
    }
}
