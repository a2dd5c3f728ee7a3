//! Frobenius projection onto the Laplacian cone.
//!
//! The feasible set {symmetric, zero row sums, nonpositive off-diagonals} is
//! the intersection of an affine subspace and a convex cone, and every point
//! in it is a weighted-graph Laplacian, hence PSD. Dykstra's alternating
//! projections with correction terms converge to the exact Frobenius
//! projection onto the intersection, so no semidefinite programming is
//! needed.

use nalgebra::DMatrix;

use super::{EstimatorError, SolverSettings};
use crate::numerics::symmetrize;

/// Convergence data for one projection call.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionStats {
    pub iterations: usize,
    /// Gap between the two half-step projections at termination.
    pub residual: f64,
}

/// Orthogonal projection onto {symmetric, zero row sums}: the double-centering
/// map `S -> J S J` with `J = I - (1/M) 1 1^T`.
fn project_zero_row_sums(s: &DMatrix<f64>, j: &DMatrix<f64>) -> DMatrix<f64> {
    j * s * j
}

/// Projection onto the cone {off-diagonal <= 0}: clip off-diagonals from above.
fn project_nonpositive_offdiag(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = s.clone();
    for i in 0..out.nrows() {
        for k in 0..out.ncols() {
            if i != k && out[(i, k)] > 0.0 {
                out[(i, k)] = 0.0;
            }
        }
    }
    out
}

/// Closest graph Laplacian to `t` in Frobenius norm.
///
/// Returns the projection together with iteration statistics. The returned
/// matrix satisfies the off-diagonal sign constraint exactly and the zero
/// row-sum constraint to within the configured tolerance.
pub fn closest_laplacian(
    t: &DMatrix<f64>,
    settings: &SolverSettings,
) -> Result<(DMatrix<f64>, ProjectionStats), EstimatorError> {
    let m = t.nrows();
    if t.ncols() != m {
        return Err(EstimatorError::ShapeMismatch {
            expected: "square".to_string(),
            found: format!("{}x{}", m, t.ncols()),
        });
    }
    let j = DMatrix::from_fn(m, m, |i, k| {
        let base = if i == k { 1.0 } else { 0.0 };
        base - 1.0 / m as f64
    });

    let mut x = symmetrize(t);
    let mut p = DMatrix::zeros(m, m);
    let mut q = DMatrix::zeros(m, m);
    let mut p_prev = p.clone();
    let mut q_prev = q.clone();

    for iter in 1..=settings.dykstra_max_iters {
        let y = project_zero_row_sums(&(&x + &p), &j);
        p = &x + &p - &y;
        let xn = project_nonpositive_offdiag(&(&y + &q));
        q = &y + &q - &xn;

        let gap = (&y - &xn).norm();
        // Birgin-Raydan criterion: the correction increments must stabilize,
        // which guards against stopping while the iterates still drift.
        let increments = ((&p - &p_prev).norm_squared() + (&q - &q_prev).norm_squared()).sqrt();
        x = xn;
        if gap <= settings.dykstra_tol && increments <= settings.dykstra_tol {
            return Ok((
                x,
                ProjectionStats {
                    iterations: iter,
                    residual: gap,
                },
            ));
        }
        p_prev.copy_from(&p);
        q_prev.copy_from(&q);
    }

    let y = project_zero_row_sums(&(&x + &p), &j);
    let residual = (&y - &x).norm();
    Err(EstimatorError::NoConvergence {
        iterations: settings.dykstra_max_iters,
        residual,
        best: Some(x),
    })
}
