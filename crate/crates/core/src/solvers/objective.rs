use super::{Factor, SolveError};
use crate::measurement::MeasurementPlan;
use num_complex::Complex64;

/// One forward pass over the legacy meters: the model values
/// `Σ_c u_cᴴ H_ℓ u_c` and the sparse products `H_ℓ u_c` they were built from.
#[derive(Clone, Debug)]
pub struct LegacyForward {
    pub values: Vec<f64>,
    offsets: Vec<usize>,
    /// `(column-major position in the N×r buffer, (H_ℓ u_c)_i)`.
    products: Vec<(usize, Complex64)>,
    n: usize,
    r: usize,
}

impl LegacyForward {
    pub fn compute(plan: &MeasurementPlan, u: &Factor) -> Self {
        let n = u.nrows();
        let r = u.ncols();
        let buf = u.as_slice();
        let mut values = Vec::with_capacity(plan.len());
        let mut offsets = Vec::with_capacity(plan.len() + 1);
        let mut products = Vec::new();
        offsets.push(0);
        for m in &plan.measurements {
            let mut value = 0.0;
            for c in 0..r {
                let col = &buf[c * n..(c + 1) * n];
                for (i, row) in m.h.rows() {
                    let s = row.dot(col);
                    value += (col[i].conj() * s).re;
                    products.push((c * n + i, s));
                }
            }
            values.push(value);
            offsets.push(products.len());
        }
        Self {
            values,
            offsets,
            products,
            n,
            r,
        }
    }

    /// `z_ℓ − Σ_c u_cᴴ H_ℓ u_c`.
    pub fn residuals(&self, plan: &MeasurementPlan) -> Vec<f64> {
        plan.measurements
            .iter()
            .zip(&self.values)
            .map(|(m, v)| m.z - v)
            .collect()
    }

    /// `½ Σ (z_ℓ − value_ℓ)²` over the meters for which `keep` holds.
    pub fn objective(&self, plan: &MeasurementPlan, keep: impl Fn(usize) -> bool) -> f64 {
        0.5 * plan
            .measurements
            .iter()
            .zip(&self.values)
            .enumerate()
            .filter(|(l, _)| keep(*l))
            .map(|(_, (m, v))| (m.z - v).powi(2))
            .sum::<f64>()
    }

    /// `Σ 2(value_ℓ − z_ℓ) H_ℓ u` over the meters for which `keep` holds.
    pub fn gradient(&self, plan: &MeasurementPlan, keep: impl Fn(usize) -> bool) -> Factor {
        let mut g = Factor::zeros(self.n, self.r);
        let buf = g.as_mut_slice();
        for (l, m) in plan.measurements.iter().enumerate() {
            if !keep(l) {
                continue;
            }
            let w = 2.0 * (self.values[l] - m.z);
            for &(idx, s) in &self.products[self.offsets[l]..self.offsets[l + 1]] {
                buf[idx] += s * w;
            }
        }
        g
    }
}

/// `g(u) = ½ Σ_ℓ (z_ℓ − Tr(H_ℓ u uᴴ))²` without forming `u uᴴ`.
pub fn objective_g(u: &Factor, plan: &MeasurementPlan) -> f64 {
    LegacyForward::compute(plan, u).objective(plan, |_| true)
}

/// `∇g(u) = Σ_ℓ 2(Tr(uᴴH_ℓu) − z_ℓ) H_ℓ u`, with the real part holding
/// `∂g/∂Re(u)` and the imaginary part `∂g/∂Im(u)`.
pub fn gradient_g(u: &Factor, plan: &MeasurementPlan) -> Factor {
    LegacyForward::compute(plan, u).gradient(plan, |_| true)
}

fn check_pmu_rank(u: &Factor, plan: &MeasurementPlan) -> Result<(), SolveError> {
    if plan.has_pmu() && u.ncols() != 1 {
        return Err(SolveError::Unsupported(format!(
            "PMU blocks need a rank-one factor, got rank {}",
            u.ncols()
        )));
    }
    Ok(())
}

/// `½ Σ_n ‖Φₙu − ζₙ‖²`.
pub(crate) fn pmu_objective(u: &Factor, plan: &MeasurementPlan) -> f64 {
    let v = u.as_slice();
    0.5 * plan.pmu.iter().map(|b| b.residual_norm_sqr(v)).sum::<f64>()
}

/// Adds `Σ_n Φₙᴴ(Φₙu − ζₙ)` to `g`.
pub(crate) fn add_pmu_gradient(u: &Factor, plan: &MeasurementPlan, g: &mut Factor) {
    let v = u.as_slice();
    let out = g.as_mut_slice();
    for block in &plan.pmu {
        let res = block.residual(v);
        for (i, row) in block.phi.rows() {
            for (j, phi) in row.iter() {
                out[j] += phi.conj() * res[i];
            }
        }
    }
}

/// `g(u) + ½ Σ_n ‖Φₙu − ζₙ‖²`.
pub fn augmented_objective(u: &Factor, plan: &MeasurementPlan) -> Result<f64, SolveError> {
    check_pmu_rank(u, plan)?;
    Ok(objective_g(u, plan) + pmu_objective(u, plan))
}

pub fn gradient_augmented(u: &Factor, plan: &MeasurementPlan) -> Result<Factor, SolveError> {
    check_pmu_rank(u, plan)?;
    let mut g = gradient_g(u, plan);
    add_pmu_gradient(u, plan, &mut g);
    Ok(g)
}
