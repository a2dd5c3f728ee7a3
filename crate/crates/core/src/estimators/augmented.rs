//! Augmented-Lagrangian topology recovery via a constrained natural-gradient
//! ICA update.
//!
//! The demixing iterate `W` is the inverse of the current reduced-topology
//! iterate. Inequality constraints (nonpositive off-diagonals, nonnegative
//! row sums) act on the topology iterate `W^{-1}` through the multipliers
//! `mu` and `Lambda`; the multiplier `D` penalizes asymmetry of `W` itself.
//! The likelihood step moves the demixing iterate along the natural-gradient
//! sandwich of the Gaussian ICA objective, which is stationary at the true
//! Laplacian's inverse for any positive-definite prior and contracts at a
//! rate independent of the Laplacian's conditioning.

use nalgebra::{DMatrix, DVector};

use super::{EstimatorError, RecoveryOutput, SolverSettings, pd_mixing_estimate_with_shrink};
use crate::graph::Reduction;
use crate::numerics;

const MAX_CONDITION: f64 = 1e12;

/// Relative ridge applied to the corrected covariance when it is close to
/// singular. Modes the data cannot identify then settle at a small positive
/// topology eigenvalue instead of driving the demixing iterate singular.
const RIDGE_REL: f64 = 1e-8;

/// Relative spectral floor for the initial topology iterate; the square root
/// of [`RIDGE_REL`], which is where the ridge puts the dead-mode equilibrium.
const INIT_FLOOR_REL: f64 = 1e-4;

/// Invert, rejecting matrices whose condition estimate exceeds `1e12`.
fn invert_checked(w: &DMatrix<f64>) -> Result<DMatrix<f64>, EstimatorError> {
    let inv = w.clone().try_inverse().ok_or(EstimatorError::SingularW {
        condition: f64::INFINITY,
    })?;
    let condition = w.norm() * inv.norm();
    if condition > MAX_CONDITION {
        return Err(EstimatorError::SingularW { condition });
    }
    Ok(inv)
}

/// Symmetric positive-definite inverse via eigendecomposition.
fn spd_inverse(s: &DMatrix<f64>) -> Result<DMatrix<f64>, EstimatorError> {
    let se = numerics::sym_eig(s)?;
    if se.min_eigenvalue() <= 0.0 {
        return Err(EstimatorError::InvalidPrior {
            min_eigenvalue: se.min_eigenvalue(),
        });
    }
    Ok(se.map_eigenvalues(|l| 1.0 / l))
}

/// The printed update direction, evaluated at `w` with its precomputed
/// inverse.
fn direction(
    w: &DMatrix<f64>,
    w_inv: &DMatrix<f64>,
    corrected_cov: &DMatrix<f64>,
    sigma_theta_inv: &DMatrix<f64>,
    mu: &DVector<f64>,
    lambda: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> DMatrix<f64> {
    let r = w.nrows();
    let wt = w.transpose();
    let ones_mu_t = DMatrix::from_fn(r, r, |_, k| mu[k]);
    let d_skew = d.transpose() - d;
    corrected_cov * w_inv * sigma_theta_inv - &wt + ones_mu_t - lambda - &wt * d_skew * &wt
}

/// Natural-gradient direction
/// `nu = (S^ - s2 U+ U+^T) W^{-1} S~^{-1} - W^T + 1 mu^T - Lambda - W^T (D^T - D) W^T`.
///
/// `w` must be invertible with condition number below `1e12`.
#[allow(clippy::too_many_arguments)]
pub fn natural_gradient_direction(
    w: &DMatrix<f64>,
    mu: &DVector<f64>,
    lambda: &DMatrix<f64>,
    d: &DMatrix<f64>,
    sigma_p_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
    sigma2_hat: f64,
    red: &Reduction,
) -> Result<DMatrix<f64>, EstimatorError> {
    let w_inv = invert_checked(w)?;
    let corrected = sigma_p_reduced - red.noise_shape() * sigma2_hat;
    let sigma_inv = spd_inverse(sigma_theta_reduced)?;
    Ok(direction(w, &w_inv, &corrected, &sigma_inv, mu, lambda, d))
}

/// Augmented-Lagrangian recovery of the reduced Laplacian.
///
/// Starts from `w_init` (a demixing matrix, the inverse of a topology
/// estimate) or from the inverse of the positive-definite mixing estimate.
/// Iterates until `||W_next - W||_F <= epsilon` or the `max_iters` budget;
/// a budgeted run that exhausts its iterations still returns its final
/// iterate, with `converged = false` in the output.
///
/// The problem is solved in spectrally normalized units (topology scaled to
/// unit spectral norm, covariance scaled accordingly), which makes the
/// stability range of the learning rate independent of the branch-susceptance
/// scale; the result is scaled back before returning.
pub fn augmented_lagrangian_recovery(
    sigma_p_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
    sigma2_hat: f64,
    red: &Reduction,
    settings: &SolverSettings,
    w_init: Option<&DMatrix<f64>>,
) -> Result<RecoveryOutput, EstimatorError> {
    settings.validate();
    let r = red.reduced_dim();
    if sigma_p_reduced.nrows() != r || sigma_theta_reduced.nrows() != r {
        return Err(EstimatorError::ShapeMismatch {
            expected: format!("{r}x{r}"),
            found: format!(
                "{}x{} / {}x{}",
                sigma_p_reduced.nrows(),
                sigma_p_reduced.ncols(),
                sigma_theta_reduced.nrows(),
                sigma_theta_reduced.ncols()
            ),
        });
    }

    let (topology_init, sigma2_used, shrink_steps) = match w_init {
        Some(w) => (invert_checked(w)?, sigma2_hat, 0),
        None => {
            let (l_pd, s2, steps) = pd_mixing_estimate_with_shrink(
                sigma_p_reduced,
                sigma_theta_reduced,
                sigma2_hat,
                red,
            )?;
            // The relaxed estimate can be singular (clipped weak modes); the
            // demixing iterate needs an invertible start, so floor its
            // spectrum relative to the largest eigenvalue.
            let se = numerics::sym_eig(&l_pd)?;
            let floor = INIT_FLOOR_REL * se.max_eigenvalue().max(f64::MIN_POSITIVE);
            (se.map_eigenvalues(|l| l.max(floor)), s2, steps)
        }
    };

    let scale = numerics::sym_eig(&numerics::symmetrize(&topology_init))?
        .spectral_norm()
        .max(f64::MIN_POSITIVE);
    let corrected_raw = numerics::symmetrize(
        &((sigma_p_reduced - red.noise_shape() * sigma2_used) / (scale * scale)),
    );
    let se_c = numerics::sym_eig(&corrected_raw)?;
    let shift = (RIDGE_REL * se_c.max_eigenvalue().max(0.0) - se_c.min_eigenvalue()).max(0.0);
    let corrected = &corrected_raw + DMatrix::<f64>::identity(r, r) * shift;
    let sigma_inv = spd_inverse(sigma_theta_reduced)?;

    let mut w = invert_checked(&(&topology_init / scale))?;
    let mut mu: DVector<f64> = DVector::zeros(r);
    let mut lambda: DMatrix<f64> = DMatrix::zeros(r, r);
    let mut d: DMatrix<f64> = DMatrix::zeros(r, r);

    // Workspaces reused across iterations; the loop itself allocates nothing.
    let mut topology = DMatrix::zeros(r, r);
    let mut tmp_a = DMatrix::zeros(r, r);
    let mut tmp_b = DMatrix::zeros(r, r);
    let mut nu = DMatrix::zeros(r, r);

    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for t in 1..=settings.max_iters {
        // Multiplier ascent acts on the topology iterate W^{-1}, where the
        // inequality constraints live.
        topology.copy_from(&w);
        if !topology.try_inverse_mut() {
            return Err(EstimatorError::SingularW {
                condition: f64::INFINITY,
            });
        }
        let condition = w.norm() * topology.norm();
        if condition > MAX_CONDITION {
            return Err(EstimatorError::SingularW { condition });
        }
        for i in 0..r {
            let row_sum: f64 = topology.row(i).sum();
            mu[i] = (mu[i] - settings.gamma * row_sum).max(0.0);
        }
        for i in 0..r {
            for k in (i + 1)..r {
                let a = (lambda[(i, k)] + settings.gamma * topology[(i, k)]).max(0.0);
                let b = (lambda[(k, i)] + settings.gamma * topology[(k, i)]).max(0.0);
                let avg = 0.5 * (a + b);
                lambda[(i, k)] = avg;
                lambda[(k, i)] = avg;
            }
        }
        // W stays exactly symmetric (see the projected step below), so the
        // symmetry multiplier never activates and its sandwich term is zero.
        d -= (&w - w.transpose()) * settings.gamma;

        // Likelihood part of the step in the demixing orientation,
        // nu = W^T S~^{-1} W R W^T - W^T, the sandwich of the Gaussian ICA
        // gradient. It vanishes at W = L~^{-1} for any positive-definite
        // prior and its local contraction rate is independent of the
        // Laplacian's conditioning. Multiplier forces 1 mu^T and -Lambda are
        // added entrywise; W = W^T throughout.
        w.mul_to(&sigma_inv, &mut tmp_a);
        tmp_a.mul_to(&w, &mut tmp_b);
        tmp_b.mul_to(&corrected, &mut tmp_a);
        tmp_a.mul_to(&w, &mut nu);
        for i in 0..r {
            for k in 0..r {
                nu[(i, k)] += mu[k] - lambda[(i, k)] - w[(i, k)];
            }
        }

        // Relative step clamp: an overshoot past half the iterate's norm can
        // flip near-dead modes through zero and strand the iterate on a
        // singular matrix. Clamping keeps every step a contraction toward
        // the equilibrium instead.
        let mut step_scale = settings.eta;
        let max_step = 0.5 * w.norm();
        let step_norm = settings.eta * nu.norm();
        if step_norm > max_step {
            step_scale *= max_step / step_norm;
        }
        // Projected step: the symmetry equality constraint is enforced
        // exactly by staying on the symmetric subspace, so D remains zero
        // instead of chasing asymmetry after the fact.
        let mut residual_sq = 0.0;
        for i in 0..r {
            for k in i..r {
                let delta = 0.5 * step_scale * (nu[(i, k)] + nu[(k, i)]);
                let next = w[(i, k)] - delta;
                residual_sq += if i == k {
                    delta * delta
                } else {
                    2.0 * delta * delta
                };
                w[(i, k)] = next;
                w[(k, i)] = next;
            }
        }
        residual = residual_sq.sqrt();
        iterations = t;
        if residual <= settings.epsilon {
            converged = true;
            break;
        }
    }

    let symmetry_residual = (&w - w.transpose()).norm();
    let l_reduced = invert_checked(&w)? * scale;
    let constraint_residual = laplacian_constraint_residual(&l_reduced);
    Ok(RecoveryOutput {
        l_reduced,
        iterations,
        final_residual: residual,
        projection_residual: constraint_residual,
        sigma2_used,
        shrink_steps,
        symmetry_residual,
        converged,
    })
}

/// How far a reduced matrix is from the reduced-Laplacian constraints:
/// largest positive off-diagonal plus largest negative row sum.
fn laplacian_constraint_residual(l: &DMatrix<f64>) -> f64 {
    let r = l.nrows();
    let mut worst_offdiag = 0.0f64;
    let mut worst_rowsum = 0.0f64;
    for i in 0..r {
        let mut row_sum = 0.0;
        for k in 0..r {
            row_sum += l[(i, k)];
            if i != k {
                worst_offdiag = worst_offdiag.max(l[(i, k)]);
            }
        }
        worst_rowsum = worst_rowsum.max(-row_sum);
    }
    worst_offdiag + worst_rowsum
}
