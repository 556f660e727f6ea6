use super::{gauge_align, SolveError};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
#[error("power iteration did not converge in {iterations} iterations (best estimate {estimate})")]
pub struct PowerIterationError {
    pub estimate: f64,
    pub iterations: usize,
}

fn norm(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Dominant eigenpair of the Hermitian operator `apply` by power iteration
/// from a seeded random start. Stops once `|λ_k − λ_{k−1}| ≤ tol·|λ_k|`.
/// Returns the Rayleigh quotient and a unit eigenvector.
pub fn power_iteration(
    n: usize,
    apply: impl FnMut(&[Complex64]) -> Vec<Complex64>,
    seed: u64,
    tol: f64,
    max_iters: usize,
) -> Result<(f64, Vec<Complex64>), PowerIterationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    power_iteration_from(start, apply, tol, max_iters)
}

fn power_iteration_from(
    mut x: Vec<Complex64>,
    mut apply: impl FnMut(&[Complex64]) -> Vec<Complex64>,
    tol: f64,
    max_iters: usize,
) -> Result<(f64, Vec<Complex64>), PowerIterationError> {
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut lambda = f64::NAN;
    for _ in 0..max_iters {
        let y = apply(&x);
        let rayleigh: f64 = x.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum();
        let ny = norm(&y);
        if ny == 0.0 {
            return Ok((0.0, x));
        }
        let converged = (rayleigh - lambda).abs() <= tol * rayleigh.abs();
        lambda = rayleigh;
        x = y.into_iter().map(|v| v / ny).collect();
        if converged {
            return Ok((lambda, x));
        }
    }
    Err(PowerIterationError {
        estimate: lambda,
        iterations: max_iters,
    })
}

fn dense_apply(v: &DMatrix<Complex64>) -> impl FnMut(&[Complex64]) -> Vec<Complex64> + '_ {
    move |x: &[Complex64]| {
        (0..v.nrows())
            .map(|i| (0..v.ncols()).map(|j| v[(i, j)] * x[j]).sum())
            .collect()
    }
}

/// Best rank-one factor `√λ₁·q₁` of a Hermitian matrix, rotated so that
/// entry `slack` is real and non-negative. When the dominant eigenvalue is
/// negative the spectrum is shifted before searching for the top one.
///
/// A repeated top eigenvalue makes `q₁` ambiguous; the result is then the
/// component of the start, a slightly perturbed all-ones vector, in that
/// eigenspace.
pub fn rank_one_extract(
    v: &DMatrix<Complex64>,
    slack: usize,
) -> Result<Vec<Complex64>, SolveError> {
    let n = v.nrows();
    if n == 0 || v.ncols() != n || slack >= n {
        return Err(SolveError::Shape(format!(
            "{}×{} with slack {slack}",
            v.nrows(),
            v.ncols()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let start: Vec<Complex64> = (0..n)
        .map(|_| {
            let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            Complex64::new(1.0 + 1e-3 * re, 1e-3 * im)
        })
        .collect();
    let (mut lambda, mut q) = power_iteration_from(start.clone(), dense_apply(v), 1e-14, 5000)?;
    if lambda < 0.0 {
        let shift = -lambda;
        let shifted = v + DMatrix::<Complex64>::identity(n, n) * Complex64::new(shift, 0.0);
        let (mu, q2) = power_iteration_from(start, dense_apply(&shifted), 1e-14, 5000)?;
        lambda = mu - shift;
        q = q2;
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(SolveError::DegenerateMatrix(lambda));
    }
    let scale = lambda.sqrt();
    let u: Vec<Complex64> = q.into_iter().map(|x| x * scale).collect();
    Ok(gauge_align(&u, slack))
}
