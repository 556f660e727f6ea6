//! Quadratic (legacy SCADA) and linear (PMU) measurement models.
//!
//! Every legacy measurement is a Hermitian quadratic form `z = vᴴHv + ε` of
//! the complex bus voltages. Matrices are assembled from the branch stamps of
//! [`crate::grid`], see `docs/conventions.md` for the flow-end convention.

mod json;
mod pmu;

pub use json::{plan_from_json, plan_to_json};
pub use pmu::{build_pmu_matrix, PmuBlock};

use crate::grid::Network;
use crate::sparse::SparseMatrix;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum MeasurementError {
    #[error("bus index {0} out of range")]
    InvalidBus(usize),
    #[error("branch index {0} out of range")]
    InvalidBranch(usize),
    #[error("branch {0} is out of service")]
    BranchOutOfService(usize),
    #[error("measurement {0} has a zero matrix and cannot be normalized")]
    Degenerate(usize),
    #[error("the measurement plan is empty")]
    EmptyPlan,
    #[error("state has length {got}, expected {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("requested {requested} outliers but the plan has {available} measurements")]
    TooManyOutliers { requested: usize, available: usize },
    #[error("invalid plan document: {0}")]
    Document(String),
    #[error("invalid plan JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasurementKind {
    VmagSq { bus: usize },
    Pinj { bus: usize },
    Qinj { bus: usize },
    Pflow { branch: usize, from_end: bool },
    Qflow { branch: usize, from_end: bool },
}

impl MeasurementKind {
    /// The physical element the meter sits on; P and Q meters of the same
    /// element share a key.
    pub fn element(&self) -> MeteredElement {
        match *self {
            MeasurementKind::VmagSq { bus } => MeteredElement::Voltage(bus),
            MeasurementKind::Pinj { bus } | MeasurementKind::Qinj { bus } => {
                MeteredElement::Injection(bus)
            }
            MeasurementKind::Pflow { branch, from_end }
            | MeasurementKind::Qflow { branch, from_end } => {
                MeteredElement::Flow { branch, from_end }
            }
        }
    }

    pub fn is_active_power(&self) -> bool {
        matches!(
            self,
            MeasurementKind::Pinj { .. } | MeasurementKind::Pflow { .. }
        )
    }

    /// Bus-located meters, i.e. the ones a PMU at that bus replaces.
    pub fn located_at_bus(&self) -> Option<usize> {
        match *self {
            MeasurementKind::VmagSq { bus }
            | MeasurementKind::Pinj { bus }
            | MeasurementKind::Qinj { bus } => Some(bus),
            _ => None,
        }
    }

    fn class(&self) -> NoiseClass {
        match self {
            MeasurementKind::VmagSq { .. } => NoiseClass::Voltage,
            MeasurementKind::Pinj { .. } | MeasurementKind::Qinj { .. } => NoiseClass::Injection,
            _ => NoiseClass::Flow,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MeteredElement {
    Voltage(usize),
    Injection(usize),
    Flow { branch: usize, from_end: bool },
}

#[derive(Clone, Copy)]
enum NoiseClass {
    Voltage,
    Injection,
    Flow,
}

/// Per-unit noise standard deviations by meter class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub flow: f64,
    pub injection: f64,
    pub voltage: f64,
    pub pmu: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            flow: 0.02,
            injection: 0.04,
            voltage: 0.004,
            pmu: 0.0004,
        }
    }
}

impl NoiseLevels {
    pub fn zero() -> Self {
        Self {
            flow: 0.0,
            injection: 0.0,
            voltage: 0.0,
            pmu: 0.0,
        }
    }

    fn for_kind(&self, kind: &MeasurementKind) -> f64 {
        match kind.class() {
            NoiseClass::Voltage => self.voltage,
            NoiseClass::Injection => self.injection,
            NoiseClass::Flow => self.flow,
        }
    }
}

/// Per-unit magnitude band `[v_lo, v_hi]` for bus voltages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageEnvelope {
    pub v_lo: f64,
    pub v_hi: f64,
}

impl Default for VoltageEnvelope {
    fn default() -> Self {
        Self {
            v_lo: 0.95,
            v_hi: 1.05,
        }
    }
}

impl VoltageEnvelope {
    pub fn new(v_lo: f64, v_hi: f64) -> Result<Self, MeasurementError> {
        if !(v_lo > 0.0 && v_lo <= v_hi && v_hi.is_finite()) {
            return Err(MeasurementError::Document(format!(
                "invalid voltage envelope [{v_lo}, {v_hi}]"
            )));
        }
        Ok(Self { v_lo, v_hi })
    }

    /// Independent uniform magnitudes in the band and angles in
    /// `[−0.35π, 0.35π]`; the `slack` bus angle is 0.
    pub fn sample(&self, n: usize, slack: Option<usize>, rng: &mut impl Rng) -> Vec<Complex64> {
        let spread = 0.35 * std::f64::consts::PI;
        (0..n)
            .map(|i| {
                let mag = if self.v_lo < self.v_hi {
                    rng.random_range(self.v_lo..=self.v_hi)
                } else {
                    self.v_lo
                };
                let angle: f64 = rng.random_range(-spread..=spread);
                Complex64::from_polar(mag, if Some(i) == slack { 0.0 } else { angle })
            })
            .collect()
    }
}

fn hermitian_part(a: &SparseMatrix) -> SparseMatrix {
    // (Aᴴ + A)/2
    let adj = a.adjoint();
    SparseMatrix::from_triplets(
        a.n_rows(),
        a.n_cols(),
        a.triplets()
            .chain(adj.triplets())
            .map(|(i, j, v)| (i, j, v * 0.5)),
    )
}

fn skew_part(a: &SparseMatrix) -> SparseMatrix {
    // (Aᴴ − A)/(2j)
    let adj = a.adjoint();
    let k = Complex64::new(0.0, -0.5);
    SparseMatrix::from_triplets(
        a.n_rows(),
        a.n_cols(),
        adj.triplets()
            .map(|(i, j, v)| (i, j, v * k))
            .chain(a.triplets().map(|(i, j, v)| (i, j, -v * k))),
    )
}

/// `eₙeₙᵀY`: row `n` of the admittance matrix.
fn injection_selector(net: &Network, bus: usize) -> SparseMatrix {
    let n = net.n_buses();
    let row = net
        .ybus()
        .rows()
        .find(|(i, _)| *i == bus)
        .map(|(_, r)| r.iter().map(|(j, v)| (bus, j, v)).collect::<Vec<_>>())
        .unwrap_or_default();
    SparseMatrix::from_triplets(n, n, row)
}

/// `vᴴAv = conj(S)` for the flow leaving the metered end of the branch.
fn flow_selector(
    net: &Network,
    branch: usize,
    from_end: bool,
) -> Result<SparseMatrix, MeasurementError> {
    let br = net
        .branches()
        .get(branch)
        .ok_or(MeasurementError::InvalidBranch(branch))?;
    if !br.in_service {
        return Err(MeasurementError::BranchOutOfService(branch));
    }
    let s = br.stamp();
    let (near, far, y_self, y_mutual) = if from_end {
        (br.from_idx, br.to_idx, s.yff, s.yft)
    } else {
        (br.to_idx, br.from_idx, s.ytt, s.ytf)
    };
    let n = net.n_buses();
    Ok(SparseMatrix::from_triplets(
        n,
        n,
        [(near, near, y_self), (near, far, y_mutual)],
    ))
}

/// Hermitian `H` with `vᴴHv` equal to the metered quantity for every `v`.
pub fn build_h_matrix(
    net: &Network,
    kind: MeasurementKind,
) -> Result<SparseMatrix, MeasurementError> {
    let n = net.n_buses();
    let check_bus = |bus: usize| {
        if bus < n {
            Ok(())
        } else {
            Err(MeasurementError::InvalidBus(bus))
        }
    };
    match kind {
        MeasurementKind::VmagSq { bus } => {
            check_bus(bus)?;
            Ok(SparseMatrix::from_triplets(
                n,
                n,
                [(bus, bus, Complex64::new(1.0, 0.0))],
            ))
        }
        MeasurementKind::Pinj { bus } => {
            check_bus(bus)?;
            Ok(hermitian_part(&injection_selector(net, bus)))
        }
        MeasurementKind::Qinj { bus } => {
            check_bus(bus)?;
            Ok(skew_part(&injection_selector(net, bus)))
        }
        MeasurementKind::Pflow { branch, from_end } => {
            Ok(hermitian_part(&flow_selector(net, branch, from_end)?))
        }
        MeasurementKind::Qflow { branch, from_end } => {
            Ok(skew_part(&flow_selector(net, branch, from_end)?))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub h: SparseMatrix,
    pub z: f64,
    pub sigma: f64,
    /// Product of all scalings folded into `(z, h)`; 1 for raw data.
    pub scale: f64,
}

impl Measurement {
    /// `Σ_c u_cᴴ H u_c` over the columns of a column-major `N×r` buffer.
    pub fn value(&self, u: &[Complex64], n: usize) -> f64 {
        u.chunks_exact(n).map(|col| self.h.quad_form(col).re).sum()
    }

    /// Residual `z − vᴴHv` in raw (unscaled) units.
    pub fn raw_residual(&self, v: &[Complex64]) -> f64 {
        (self.z - self.h.quad_form(v).re) / self.scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanProfile {
    /// |V|² at every bus plus from-end P/Q on every in-service branch.
    PaperLegacy,
    /// `PaperLegacy` plus P/Q injections at every bus.
    Full,
}

/// Ordered measurement set; the position of a measurement is its identity for
/// thresholding and outlier reporting.
#[derive(Clone, Debug)]
pub struct MeasurementPlan {
    network: Arc<Network>,
    pub measurements: Vec<Measurement>,
    pub pmu: Vec<PmuBlock>,
    normalized: bool,
}

impl MeasurementPlan {
    /// Builds a plan from explicit meter kinds, each with the given noise level.
    pub fn from_kinds(
        network: Arc<Network>,
        kinds: &[(MeasurementKind, f64)],
        pmu_buses: &[usize],
        pmu_sigma: f64,
    ) -> Result<Self, MeasurementError> {
        let measurements = kinds
            .iter()
            .map(|&(kind, sigma)| {
                Ok(Measurement {
                    kind,
                    h: build_h_matrix(&network, kind)?,
                    z: 0.0,
                    sigma,
                    scale: 1.0,
                })
            })
            .collect::<Result<Vec<_>, MeasurementError>>()?;
        let pmu = pmu_buses
            .iter()
            .map(|&bus| PmuBlock::new(&network, bus, pmu_sigma))
            .collect::<Result<Vec<_>, _>>()?;
        if measurements.is_empty() && pmu.is_empty() {
            return Err(MeasurementError::EmptyPlan);
        }
        Ok(Self {
            network,
            measurements,
            pmu,
            normalized: false,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_arc(&self) -> &Arc<Network> {
        &self.network
    }

    pub fn n_buses(&self) -> usize {
        self.network.n_buses()
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn has_pmu(&self) -> bool {
        !self.pmu.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn z(&self) -> Vec<f64> {
        self.measurements.iter().map(|m| m.z).collect()
    }

    /// Copy of the plan without the listed legacy measurements.
    pub fn without(&self, drop: &[usize]) -> Self {
        let mut plan = self.clone();
        plan.measurements = self
            .measurements
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, m)| m.clone())
            .collect();
        plan
    }

    fn check_len(&self, v: &[Complex64]) -> Result<(), MeasurementError> {
        if v.len() != self.n_buses() {
            return Err(MeasurementError::StateLength {
                expected: self.n_buses(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Noise-free legacy readings `vᴴH_ℓv`, honoring each stored scale.
    pub fn evaluate(&self, v: &[Complex64]) -> Result<Vec<f64>, MeasurementError> {
        self.check_len(v)?;
        Ok(self
            .measurements
            .iter()
            .map(|m| m.h.quad_form(v).re)
            .collect())
    }

    /// Populates `z` (and PMU `ζ`) from `v_true` with seeded Gaussian noise.
    pub fn generate(&self, v_true: &[Complex64], seed: u64) -> Result<Self, MeasurementError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.generate_with(v_true, &mut rng)
    }

    pub fn generate_with(
        &self,
        v_true: &[Complex64],
        rng: &mut impl Rng,
    ) -> Result<Self, MeasurementError> {
        self.check_len(v_true)?;
        let mut plan = self.clone();
        for m in &mut plan.measurements {
            let eps: f64 = rng.sample(StandardNormal);
            m.z = m.h.quad_form(v_true).re + m.scale * m.sigma * eps;
        }
        for block in &mut plan.pmu {
            block.generate(v_true, rng);
        }
        Ok(plan)
    }

    /// Scales every legacy pair to `(z/‖H‖_F, H/‖H‖_F)` and every PMU row to
    /// unit Euclidean norm. A second call is a no-op.
    pub fn normalize(&self) -> Result<Self, MeasurementError> {
        let mut plan = self.clone();
        if plan.normalized {
            return Ok(plan);
        }
        for (i, m) in plan.measurements.iter_mut().enumerate() {
            let norm = m.h.frobenius_norm();
            if norm == 0.0 {
                return Err(MeasurementError::Degenerate(i));
            }
            let s = 1.0 / norm;
            m.h = m.h.scaled(s);
            m.z *= s;
            m.scale *= s;
        }
        for block in &mut plan.pmu {
            let factors: Vec<f64> = block.row_norms().into_iter().map(|r| 1.0 / r).collect();
            block.scale_rows(&factors);
        }
        plan.normalized = true;
        Ok(plan)
    }

    /// Folds `1/σ` weights into `(z, H)`. Meters with `σ = 0` are left as is.
    pub fn weighted(&self) -> Self {
        let mut plan = self.clone();
        for m in &mut plan.measurements {
            if m.sigma > 0.0 {
                let s = 1.0 / m.sigma;
                m.h = m.h.scaled(s);
                m.z *= s;
                m.scale *= s;
            }
        }
        plan
    }

    /// Replaces `count` distinct, uniformly drawn legacy readings with
    /// `factor` times their noise-free value at `v_true`. Returns the
    /// corrupted indices in ascending order.
    pub fn inject_outliers(
        &mut self,
        v_true: &[Complex64],
        count: usize,
        factor: f64,
        rng: &mut impl Rng,
    ) -> Result<Vec<usize>, MeasurementError> {
        self.check_len(v_true)?;
        if count > self.len() {
            return Err(MeasurementError::TooManyOutliers {
                requested: count,
                available: self.len(),
            });
        }
        let mut picked = sample(rng, self.len(), count).into_vec();
        picked.sort_unstable();
        for &i in &picked {
            let m = &mut self.measurements[i];
            m.z = factor * m.h.quad_form(v_true).re;
        }
        Ok(picked)
    }

    /// Swaps the bus-located legacy meters at `buses` for PMU blocks whose
    /// phasors are generated from `v_true`. The remaining meters keep their
    /// readings, so a legacy-only plan and its PMU variant share noise.
    pub fn attach_pmu(
        &self,
        buses: &[usize],
        sigma: f64,
        v_true: &[Complex64],
        rng: &mut impl Rng,
    ) -> Result<Self, MeasurementError> {
        self.check_len(v_true)?;
        let drop: Vec<usize> = self
            .measurements
            .iter()
            .enumerate()
            .filter(|(_, m)| m.kind.located_at_bus().is_some_and(|b| buses.contains(&b)))
            .map(|(i, _)| i)
            .collect();
        let mut plan = self.without(&drop);
        for &bus in buses {
            let mut block = PmuBlock::new(&self.network, bus, sigma)?;
            block.generate(v_true, rng);
            if plan.normalized {
                let factors: Vec<f64> = block.row_norms().into_iter().map(|r| 1.0 / r).collect();
                block.scale_rows(&factors);
            }
            plan.pmu.push(block);
        }
        Ok(plan)
    }

    pub(crate) fn set_normalized(&mut self, normalized: bool) {
        self.normalized = normalized;
    }
}

/// Standard meter layouts. When `pmu_buses` is non-empty, bus-located legacy
/// meters at those buses are dropped and a PMU block is added per bus.
///
/// Ordering: voltage block, P-flow block, Q-flow block, P-injection block,
/// Q-injection block.
pub fn default_plan(
    network: Arc<Network>,
    profile: PlanProfile,
    pmu_buses: &[usize],
    noise: &NoiseLevels,
) -> Result<MeasurementPlan, MeasurementError> {
    let n = network.n_buses();
    for &b in pmu_buses {
        if b >= n {
            return Err(MeasurementError::InvalidBus(b));
        }
    }
    let branches: Vec<usize> = network.in_service_branches().map(|(k, _)| k).collect();
    let mut kinds: Vec<MeasurementKind> =
        (0..n).map(|bus| MeasurementKind::VmagSq { bus }).collect();
    kinds.extend(branches.iter().map(|&branch| MeasurementKind::Pflow {
        branch,
        from_end: true,
    }));
    kinds.extend(branches.iter().map(|&branch| MeasurementKind::Qflow {
        branch,
        from_end: true,
    }));
    if profile == PlanProfile::Full {
        kinds.extend((0..n).map(|bus| MeasurementKind::Pinj { bus }));
        kinds.extend((0..n).map(|bus| MeasurementKind::Qinj { bus }));
    }
    kinds.retain(|k| k.located_at_bus().map_or(true, |b| !pmu_buses.contains(&b)));
    let with_sigma: Vec<(MeasurementKind, f64)> =
        kinds.into_iter().map(|k| (k, noise.for_kind(&k))).collect();
    if with_sigma.is_empty() {
        return Err(MeasurementError::EmptyPlan);
    }
    MeasurementPlan::from_kinds(network, &with_sigma, pmu_buses, noise.pmu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, BusType};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

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

    fn two_bus() -> Arc<Network> {
        Arc::new(
            Network::new(
                vec![bus(1, BusType::Slack), bus(2, BusType::Pq)],
                vec![Branch::new(0, 1, 0.0, 0.1, 0.0, 1.0, 0.0, true)],
                100.0,
            )
            .unwrap(),
        )
    }

    /// Direct power-flow arithmetic `S = V·conj(I)` used as the oracle.
    fn physical(net: &Network, kind: MeasurementKind, v: &[Complex64]) -> f64 {
        let y = net.ybus();
        match kind {
            MeasurementKind::VmagSq { bus } => v[bus].norm_sqr(),
            MeasurementKind::Pinj { bus } | MeasurementKind::Qinj { bus } => {
                let i: Complex64 = (0..v.len()).map(|k| y.get(bus, k) * v[k]).sum();
                let s = v[bus] * i.conj();
                if matches!(kind, MeasurementKind::Pinj { .. }) {
                    s.re
                } else {
                    s.im
                }
            }
            MeasurementKind::Pflow { branch, from_end }
            | MeasurementKind::Qflow { branch, from_end } => {
                let br = &net.branches()[branch];
                let st = br.stamp();
                let (f, t) = (br.from_idx, br.to_idx);
                let s = if from_end {
                    v[f] * (st.yff * v[f] + st.yft * v[t]).conj()
                } else {
                    v[t] * (st.ytf * v[f] + st.ytt * v[t]).conj()
                };
                if matches!(kind, MeasurementKind::Pflow { .. }) {
                    s.re
                } else {
                    s.im
                }
            }
        }
    }

    fn all_kinds(net: &Network) -> Vec<MeasurementKind> {
        let mut kinds = Vec::new();
        for bus in 0..net.n_buses() {
            kinds.push(MeasurementKind::VmagSq { bus });
            kinds.push(MeasurementKind::Pinj { bus });
            kinds.push(MeasurementKind::Qinj { bus });
        }
        for (branch, _) in net.in_service_branches() {
            for from_end in [true, false] {
                kinds.push(MeasurementKind::Pflow { branch, from_end });
                kinds.push(MeasurementKind::Qflow { branch, from_end });
            }
        }
        kinds
    }

    #[test]
    fn vmag_matrix_is_selector() {
        let net = two_bus();
        let h = build_h_matrix(&net, MeasurementKind::VmagSq { bus: 1 }).unwrap();
        assert_eq!(h.nnz(), 1);
        assert_eq!(h.get(1, 1), c(1.0, 0.0));
    }

    #[test]
    fn two_bus_injection_matrix() {
        let net = two_bus();
        let h = build_h_matrix(&net, MeasurementKind::Pinj { bus: 0 }).unwrap();
        let expected = [[c(0.0, 0.0), c(0.0, 5.0)], [c(0.0, -5.0), c(0.0, 0.0)]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h.get(i, j) - expected[i][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn two_bus_flow_values() {
        let net = two_bus();
        let plan = default_plan(net, PlanProfile::PaperLegacy, &[], &NoiseLevels::zero()).unwrap();
        let v = [c(1.0, 0.0), Complex64::from_polar(0.95, -0.1)];
        let vals = plan.evaluate(&v).unwrap();
        // voltage block, P flow, Q flow
        assert_eq!(plan.len(), 4);
        assert!((vals[2] - 0.948_42).abs() < 1e-5, "{}", vals[2]);
        assert!((vals[3] - 0.547_46).abs() < 1e-5, "{}", vals[3]);
    }

    #[test]
    fn flat_state_on_lossless_network() {
        let plan = default_plan(two_bus(), PlanProfile::Full, &[], &NoiseLevels::zero()).unwrap();
        let vals = plan.evaluate(&[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        for (m, val) in plan.measurements.iter().zip(vals) {
            let expected = if matches!(m.kind, MeasurementKind::VmagSq { .. }) {
                1.0
            } else {
                0.0
            };
            assert!((val - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_generation_is_exact() {
        let plan = default_plan(two_bus(), PlanProfile::Full, &[0], &NoiseLevels::zero()).unwrap();
        let v = [c(1.02, 0.0), Complex64::from_polar(0.97, 0.3)];
        let g = plan.generate(&v, 3).unwrap();
        assert_eq!(g.z(), plan.evaluate(&v).unwrap());
        let phi_v = g.pmu[0].phi.mul_vec(&v);
        assert_eq!(g.pmu[0].zeta, phi_v);
    }

    #[test]
    fn generation_is_seeded() {
        let plan =
            default_plan(two_bus(), PlanProfile::Full, &[1], &NoiseLevels::default()).unwrap();
        let v = [c(1.0, 0.0), c(0.99, 0.05)];
        let a = plan.generate(&v, 11).unwrap();
        let b = plan.generate(&v, 11).unwrap();
        assert_eq!(a.z(), b.z());
        assert_eq!(a.pmu[0].zeta, b.pmu[0].zeta);
        assert_ne!(a.z(), plan.generate(&v, 12).unwrap().z());
    }

    #[test]
    fn flow_noise_variance_matches_sigma() {
        let net = two_bus();
        let kinds: Vec<_> = (0..10_000)
            .map(|_| {
                (
                    MeasurementKind::Pflow {
                        branch: 0,
                        from_end: true,
                    },
                    0.02,
                )
            })
            .collect();
        let plan = MeasurementPlan::from_kinds(net, &kinds, &[], 0.0).unwrap();
        let v = [c(1.0, 0.0), Complex64::from_polar(0.98, 0.2)];
        let clean = plan.evaluate(&v).unwrap();
        let noisy = plan.generate(&v, 2024).unwrap().z();
        let n = noisy.len() as f64;
        let diffs: Vec<f64> = noisy.iter().zip(&clean).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 0.02f64.powi(2) - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn normalization() {
        let net = two_bus();
        // H = 2·e₁e₁ᵀ via a weighted |V|² meter: ‖H‖_F = 2, z = 4.
        let mut plan = MeasurementPlan::from_kinds(
            net,
            &[(MeasurementKind::VmagSq { bus: 0 }, 0.5)],
            &[],
            0.0,
        )
        .unwrap();
        plan = plan.weighted();
        plan.measurements[0].z = 4.0;
        let normed = plan.normalize().unwrap();
        assert!((normed.measurements[0].z - 2.0).abs() < 1e-15);
        assert!((normed.measurements[0].h.frobenius_norm() - 1.0).abs() < 1e-15);
        let again = normed.normalize().unwrap();
        assert_eq!(again.measurements[0].z, normed.measurements[0].z);
        assert_eq!(again.measurements[0].h, normed.measurements[0].h);
    }

    #[test]
    fn normalized_residual_is_scaled_raw_residual() {
        let plan =
            default_plan(two_bus(), PlanProfile::Full, &[], &NoiseLevels::default()).unwrap();
        let truth = [c(1.0, 0.0), Complex64::from_polar(0.97, -0.2)];
        let raw = plan.generate(&truth, 5).unwrap();
        let normed = raw.normalize().unwrap();
        let v = [c(1.01, 0.02), c(0.9, -0.1)];
        let raw_vals = raw.evaluate(&v).unwrap();
        let norm_vals = normed.evaluate(&v).unwrap();
        for i in 0..raw.len() {
            let h_norm = raw.measurements[i].h.frobenius_norm();
            let expected = (raw.measurements[i].z - raw_vals[i]) / h_norm;
            let got = normed.measurements[i].z - norm_vals[i];
            assert!((expected - got).abs() < 1e-12);
            assert!(
                (normed.measurements[i].raw_residual(&v) - (raw.measurements[i].z - raw_vals[i]))
                    .abs()
                    < 1e-12
            );
        }
    }

    #[test]
    fn zero_matrix_cannot_be_normalized() {
        // Injection at an isolated bus with no shunt has H = 0.
        let net = Arc::new(
            Network::new(
                vec![bus(1, BusType::Slack), bus(2, BusType::Pq)],
                vec![],
                100.0,
            )
            .unwrap(),
        );
        let plan =
            MeasurementPlan::from_kinds(net, &[(MeasurementKind::Pinj { bus: 1 }, 0.04)], &[], 0.0)
                .unwrap();
        assert!(matches!(
            plan.normalize(),
            Err(MeasurementError::Degenerate(0))
        ));
    }

    #[test]
    fn plan_sizes() {
        let net = two_bus();
        let legacy = default_plan(
            net.clone(),
            PlanProfile::PaperLegacy,
            &[],
            &NoiseLevels::default(),
        )
        .unwrap();
        assert_eq!(legacy.len(), 4);
        let with_pmu =
            default_plan(net, PlanProfile::PaperLegacy, &[0], &NoiseLevels::default()).unwrap();
        assert_eq!(with_pmu.len(), 3);
        assert_eq!(with_pmu.pmu.len(), 1);
        assert!(!with_pmu
            .measurements
            .iter()
            .any(|m| m.kind == MeasurementKind::VmagSq { bus: 0 }));
    }

    #[test]
    fn invalid_element_references() {
        let net = two_bus();
        assert!(matches!(
            build_h_matrix(&net, MeasurementKind::Qinj { bus: 5 }),
            Err(MeasurementError::InvalidBus(5))
        ));
        assert!(matches!(
            build_h_matrix(
                &net,
                MeasurementKind::Pflow {
                    branch: 3,
                    from_end: true
                }
            ),
            Err(MeasurementError::InvalidBranch(3))
        ));
    }

    #[test]
    fn outlier_injection_scales_true_value() {
        let plan = default_plan(
            two_bus(),
            PlanProfile::PaperLegacy,
            &[],
            &NoiseLevels::zero(),
        )
        .unwrap();
        let v = [c(1.0, 0.0), Complex64::from_polar(0.95, 0.4)];
        let mut g = plan.generate(&v, 1).unwrap();
        let clean = g.z();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let idx = g.inject_outliers(&v, 2, 5.0, &mut rng).unwrap();
        assert_eq!(idx.len(), 2);
        for i in 0..g.len() {
            let expected = if idx.contains(&i) {
                5.0 * clean[i]
            } else {
                clean[i]
            };
            assert!((g.measurements[i].z - expected).abs() < 1e-12);
        }
    }

    fn arb_network() -> impl Strategy<Value = Network> {
        (2usize..=5).prop_flat_map(|n| {
            let branch = (
                0..n,
                0..n,
                0.0f64..0.1,
                0.05f64..0.5,
                0.0f64..0.2,
                0.9f64..1.1,
                -0.2f64..0.2,
            );
            (
                proptest::collection::vec(branch, 1..8),
                proptest::collection::vec((-0.1f64..0.1, -0.1f64..0.1), n),
            )
                .prop_map(move |(raw, shunts)| {
                    let buses = (0..n)
                        .map(|k| Bus {
                            id: k as u32 + 1,
                            index: k,
                            bus_type: if k == 0 { BusType::Slack } else { BusType::Pq },
                            shunt_g: shunts[k].0,
                            shunt_b: shunts[k].1,
                            vm_init: 1.0,
                            va_init: 0.0,
                        })
                        .collect();
                    let branches = raw
                        .into_iter()
                        .filter(|(f, t, ..)| f != t)
                        .map(|(f, t, r, x, b, tap, shift)| {
                            Branch::new(f, t, r, x, b, tap, shift, true)
                        })
                        .collect();
                    Network::new(buses, branches, 100.0).unwrap()
                })
        })
    }

    fn arb_state(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
        proptest::collection::vec((0.8f64..1.2, -1.0f64..1.0), n).prop_map(|p| {
            p.into_iter()
                .map(|(m, a)| Complex64::from_polar(m, a))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn quadratic_forms_match_power_flow(
            (net, v) in arb_network().prop_flat_map(|net| { let n = net.n_buses(); (Just(net), arb_state(n)) })
        ) {
            for kind in all_kinds(&net) {
                let h = build_h_matrix(&net, kind).unwrap();
                prop_assert!(h.hermitian_defect() <= 1e-12);
                let q = h.quad_form(&v);
                let phys = physical(&net, kind, &v);
                prop_assert!((q.re - phys).abs() <= 1e-9, "{:?}: {} vs {}", kind, q.re, phys);
                prop_assert!(q.im.abs() <= 1e-12);
                for idx in h.support() {
                    let touches = match kind.element() {
                        MeteredElement::Voltage(b) | MeteredElement::Injection(b) => {
                            idx == b || net.incident_branches(b).any(|(_, br)| br.other_end(b) == Some(idx))
                        }
                        MeteredElement::Flow { branch, .. } => {
                            let br = &net.branches()[branch];
                            idx == br.from_idx || idx == br.to_idx
                        }
                    };
                    prop_assert!(touches);
                }
            }
        }

        #[test]
        fn legacy_readings_are_phase_invariant(
            (net, v) in arb_network().prop_flat_map(|net| { let n = net.n_buses(); (Just(net), arb_state(n)) }),
            theta in -3.0f64..3.0,
        ) {
            let plan = default_plan(Arc::new(net), PlanProfile::Full, &[], &NoiseLevels::zero()).unwrap();
            let rot: Vec<Complex64> = v.iter().map(|x| x * Complex64::from_polar(1.0, theta)).collect();
            let a = plan.evaluate(&v).unwrap();
            let b = plan.evaluate(&rot).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn pmu_residual_changes_under_rotation() {
        let plan = default_plan(
            two_bus(),
            PlanProfile::PaperLegacy,
            &[0],
            &NoiseLevels::zero(),
        )
        .unwrap();
        let v = [c(1.0, 0.0), Complex64::from_polar(0.97, -0.3)];
        let g = plan.generate(&v, 0).unwrap();
        let rot: Vec<Complex64> = v
            .iter()
            .map(|x| x * Complex64::from_polar(1.0, 0.4))
            .collect();
        let r0 = g.pmu[0].residual_norm_sqr(&v);
        let r1 = g.pmu[0].residual_norm_sqr(&rot);
        assert!(r0 < 1e-20);
        assert!(r1 > 1e-3);
    }

    #[test]
    fn lossless_injections_sum_to_zero() {
        let buses = (0..4)
            .map(|k| bus(k + 1, if k == 0 { BusType::Slack } else { BusType::Pq }))
            .collect();
        let branches = vec![
            Branch::new(0, 1, 0.0, 0.1, 0.0, 1.0, 0.0, true),
            Branch::new(1, 2, 0.0, 0.2, 0.0, 1.0, 0.0, true),
            Branch::new(2, 3, 0.0, 0.15, 0.0, 1.0, 0.0, true),
            Branch::new(3, 0, 0.0, 0.3, 0.0, 1.0, 0.0, true),
        ];
        let net = Arc::new(Network::new(buses, branches, 100.0).unwrap());
        let plan = default_plan(net, PlanProfile::Full, &[], &NoiseLevels::zero()).unwrap();
        let v = [
            c(1.0, 0.0),
            Complex64::from_polar(1.03, 0.4),
            Complex64::from_polar(0.96, -0.7),
            Complex64::from_polar(1.0, 1.1),
        ];
        let vals = plan.evaluate(&v).unwrap();
        let total: f64 = plan
            .measurements
            .iter()
            .zip(&vals)
            .filter(|(m, _)| matches!(m.kind, MeasurementKind::Pinj { .. }))
            .map(|(_, x)| x)
            .sum();
        assert!(total.abs() < 1e-9);
    }
}
