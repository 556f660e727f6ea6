use super::MeasurementError;
use crate::grid::Network;
use crate::sparse::SparseMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

/// Synchrophasor data at one bus: the voltage phasor plus the current phasor
/// on every incident in-service branch, `ζ = Φv + ε`.
#[derive(Clone, Debug)]
pub struct PmuBlock {
    pub bus: usize,
    pub phi: SparseMatrix,
    /// Branch index behind each current row (row `k + 1`).
    pub branches: Vec<usize>,
    pub zeta: Vec<Complex64>,
    pub sigma: f64,
    /// Per-row factor folded into `(Φ, ζ)`; all ones for raw data.
    pub row_scale: Vec<f64>,
}

/// Row 0 selects `Vₙ`; each following row gives the current leaving bus `n`
/// on one incident branch using that end's Π-model stamps.
pub fn build_pmu_matrix(
    net: &Network,
    bus: usize,
) -> Result<(SparseMatrix, Vec<usize>), MeasurementError> {
    if bus >= net.n_buses() {
        return Err(MeasurementError::InvalidBus(bus));
    }
    let mut triplets = vec![(0, bus, Complex64::new(1.0, 0.0))];
    let mut branches = Vec::new();
    for (k, br) in net.incident_branches(bus) {
        let s = br.stamp();
        let row = branches.len() + 1;
        if br.from_idx == bus {
            triplets.push((row, bus, s.yff));
            triplets.push((row, br.to_idx, s.yft));
        } else {
            triplets.push((row, bus, s.ytt));
            triplets.push((row, br.from_idx, s.ytf));
        }
        branches.push(k);
    }
    let rows = branches.len() + 1;
    Ok((
        SparseMatrix::from_triplets(rows, net.n_buses(), triplets),
        branches,
    ))
}

impl PmuBlock {
    pub fn new(net: &Network, bus: usize, sigma: f64) -> Result<Self, MeasurementError> {
        let (phi, branches) = build_pmu_matrix(net, bus)?;
        let zeta = vec![Complex64::new(0.0, 0.0); phi.n_rows()];
        let row_scale = vec![1.0; phi.n_rows()];
        Ok(Self {
            bus,
            phi,
            branches,
            zeta,
            sigma,
            row_scale,
        })
    }

    /// Multiplies row `i` of `Φ` and `ζ_i` by `factors[i]`.
    pub(super) fn scale_rows(&mut self, factors: &[f64]) {
        let n = self.phi.n_cols();
        self.phi = SparseMatrix::from_triplets(
            self.phi.n_rows(),
            n,
            self.phi
                .triplets()
                .map(|(i, j, v)| (i, j, v * factors[i]))
                .collect::<Vec<_>>(),
        );
        for ((z, s), f) in self.zeta.iter_mut().zip(&mut self.row_scale).zip(factors) {
            *z *= *f;
            *s *= *f;
        }
    }

    /// Euclidean norm of each row of `Φ`.
    pub(super) fn row_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0; self.phi.n_rows()];
        for (i, row) in self.phi.rows() {
            norms[i] = row.iter().map(|(_, v)| v.norm_sqr()).sum::<f64>().sqrt();
        }
        norms
    }

    /// Real and imaginary parts each get noise with standard deviation
    /// `σ/√2`, so the complex noise has total variance `σ²`.
    pub(super) fn generate(&mut self, v_true: &[Complex64], rng: &mut impl Rng) {
        let part = self.sigma / std::f64::consts::SQRT_2;
        self.zeta = self
            .phi
            .mul_vec(v_true)
            .into_iter()
            .zip(&self.row_scale)
            .map(|(x, s)| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                x + Complex64::new(part * re, part * im) * *s
            })
            .collect();
    }

    /// `Φu − ζ`.
    pub fn residual(&self, u: &[Complex64]) -> Vec<Complex64> {
        self.phi
            .mul_vec(u)
            .into_iter()
            .zip(&self.zeta)
            .map(|(a, b)| a - b)
            .collect()
    }

    pub fn residual_norm_sqr(&self, u: &[Complex64]) -> f64 {
        self.residual(u).iter().map(|r| r.norm_sqr()).sum()
    }
}
