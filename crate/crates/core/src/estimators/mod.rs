//! Estimation algorithms: noise-variance ML, two-phase and
//! augmented-Lagrangian topology recovery, sparsity thresholding, MMSE state
//! estimation, and the orchestrating pipeline.

mod augmented;
mod projection;

pub use augmented::{augmented_lagrangian_recovery, natural_gradient_direction};
pub use projection::{ProjectionStats, closest_laplacian};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcmodel::{MeasurementSet, StatePrior, center};
use crate::graph::{self, Reduction};
use crate::numerics::{self, NumericsError};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error("demixing iterate is numerically singular (condition estimate {condition:.3e})")]
    SingularW { condition: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        /// Best iterate available at termination.
        best: Option<DMatrix<f64>>,
    },
    #[error("insufficient samples: got {n}, need at least {required}")]
    InsufficientSamples { n: usize, required: usize },
    #[error("diagonal entry {index} is not positive ({value:.3e})")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("state prior is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    InvalidPrior { min_eigenvalue: f64 },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
}

/// Iteration controls shared by both recovery methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Learning rate in (0, 1].
    pub eta: f64,
    /// Multiplier/penalty step, positive.
    pub gamma: f64,
    pub max_iters: usize,
    /// Stop when the iterate step's Frobenius norm falls below this.
    pub epsilon: f64,
    pub dykstra_max_iters: usize,
    pub dykstra_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            gamma: 1e-2,
            max_iters: 2000,
            epsilon: 1e-8,
            dykstra_max_iters: 50_000,
            dykstra_tol: 1e-9,
        }
    }
}

impl SolverSettings {
    pub(crate) fn validate(&self) {
        assert!(
            self.eta > 0.0 && self.eta <= 1.0,
            "eta must lie in (0, 1], got {}",
            self.eta
        );
        assert!(self.gamma > 0.0, "gamma must be positive");
        assert!(self.epsilon > 0.0, "epsilon must be positive");
        assert!(self.dykstra_tol > 0.0, "dykstra_tol must be positive");
        assert!(self.max_iters > 0 && self.dykstra_max_iters > 0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecoveryMethod {
    TwoPhase,
    AugmentedLagrangian,
}

impl fmt::Display for RecoveryMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecoveryMethod::TwoPhase => write!(f, "two_phase"),
            RecoveryMethod::AugmentedLagrangian => write!(f, "augmented_lagrangian"),
        }
    }
}

impl FromStr for RecoveryMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "two_phase" => Ok(RecoveryMethod::TwoPhase),
            "augmented_lagrangian" => Ok(RecoveryMethod::AugmentedLagrangian),
            other => Err(format!(
                "unknown method '{other}' (expected two_phase or augmented_lagrangian)"
            )),
        }
    }
}

/// Result of a reduced-topology recovery call.
#[derive(Debug, Clone)]
pub struct RecoveryOutput {
    pub l_reduced: DMatrix<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    /// Residual of the Laplacian constraints (or projection gap).
    pub projection_residual: f64,
    /// Noise variance actually used after any shrink fallback.
    pub sigma2_used: f64,
    pub shrink_steps: usize,
    /// `||W - W^T||_F` of the demixing iterate at termination (0 for the
    /// two-phase path).
    pub symmetry_residual: f64,
    /// Whether the stop criterion fired before the iteration budget ran out.
    /// A budgeted run that exhausts `max_iters` still returns its final
    /// iterate; only an unusable iterate is an error.
    pub converged: bool,
}

/// Solver bookkeeping attached to an [`EstimationResult`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub final_residual: f64,
    pub projection_residual: f64,
    /// Sparsity threshold actually applied.
    pub threshold: f64,
    pub sigma2_shrink_steps: usize,
    /// Set when `N < 3 M`, where sample-covariance conditioning is marginal.
    pub low_sample_warning: bool,
    /// False when the recovery stopped on its iteration budget.
    pub converged: bool,
}

/// Full output of the blind estimation pipeline.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    /// Final thresholded Laplacian estimate.
    pub l_hat: DMatrix<f64>,
    /// Reduction of the final estimate.
    pub l_reduced_hat: DMatrix<f64>,
    /// Expanded estimate before thresholding.
    pub l_hat_pre_threshold: DMatrix<f64>,
    pub sigma2_hat: f64,
    /// MMSE state estimates, one column per sample.
    pub states_hat: DMatrix<f64>,
    pub method: RecoveryMethod,
    pub diagnostics: Diagnostics,
}

/// ML noise-variance estimate: the smallest eigenvalue of the sample
/// covariance, clipped at zero.
pub fn estimate_noise_variance(sigma_p: &DMatrix<f64>) -> Result<f64, EstimatorError> {
    let se = numerics::sym_eig(sigma_p)?;
    Ok(se.min_eigenvalue().max(0.0))
}

/// ML estimate of a symmetric positive-definite mixing matrix from the
/// noise-corrected reduced covariance:
/// `S~^{-1/2} ( S~^{1/2} (Sigma^ - s2 U+ U+^T) S~^{1/2} )^{1/2} S~^{-1/2}`.
///
/// Mildly negative eigenvalues of the corrected covariance are clipped;
/// anything beyond the clip tolerance propagates as `NotApproxPsd`, which
/// signals that the identifiability condition fails for this sample.
pub fn pd_mixing_estimate(
    sigma_p_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
    sigma2_hat: f64,
    red: &Reduction,
) -> Result<DMatrix<f64>, EstimatorError> {
    let r = red.reduced_dim();
    if sigma_p_reduced.nrows() != r || sigma_p_reduced.ncols() != r {
        return Err(EstimatorError::ShapeMismatch {
            expected: format!("{r}x{r}"),
            found: format!("{}x{}", sigma_p_reduced.nrows(), sigma_p_reduced.ncols()),
        });
    }
    let se = numerics::sym_eig(sigma_theta_reduced)?;
    if se.min_eigenvalue() <= 0.0 {
        return Err(EstimatorError::InvalidPrior {
            min_eigenvalue: se.min_eigenvalue(),
        });
    }
    let s_half = se.map_eigenvalues(f64::sqrt);
    let s_neg_half = se.map_eigenvalues(|l| 1.0 / l.sqrt());
    let corrected = sigma_p_reduced - red.noise_shape() * sigma2_hat;
    let inner = numerics::symmetrize(&(&s_half * corrected * &s_half));
    let inner_sqrt = numerics::psd_sqrt(&inner, numerics::DEFAULT_CLIP_TOL)?;
    Ok(numerics::symmetrize(
        &(&s_neg_half * inner_sqrt * &s_neg_half),
    ))
}

/// [`pd_mixing_estimate`] with the finite-sample fallback: when the corrected
/// covariance is indefinite beyond the clip tolerance, shrink the noise
/// estimate by 0.99 and retry, at most 50 times. Returns the estimate, the
/// noise variance actually used and the number of shrink steps.
pub fn pd_mixing_estimate_with_shrink(
    sigma_p_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
    sigma2_hat: f64,
    red: &Reduction,
) -> Result<(DMatrix<f64>, f64, usize), EstimatorError> {
    let mut sigma2 = sigma2_hat;
    for step in 0..=50 {
        match pd_mixing_estimate(sigma_p_reduced, sigma_theta_reduced, sigma2, red) {
            Ok(l) => return Ok((l, sigma2, step)),
            Err(EstimatorError::Numerics(NumericsError::NotApproxPsd { .. })) if step < 50 => {
                sigma2 *= 0.99;
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("loop either returns an estimate or the final error");
}

/// Two-phase recovery: relaxed positive-definite estimate, then the closest
/// Laplacian in Frobenius norm on the expanded matrix, reduced back.
pub fn two_phase_recovery(
    sigma_p_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
    sigma2_hat: f64,
    red: &Reduction,
    settings: &SolverSettings,
) -> Result<RecoveryOutput, EstimatorError> {
    settings.validate();
    let (l_pd, sigma2_used, shrink_steps) =
        pd_mixing_estimate_with_shrink(sigma_p_reduced, sigma_theta_reduced, sigma2_hat, red)?;
    let expanded = red.expand(&l_pd)?;
    let (projected, stats) = closest_laplacian(&expanded, settings)?;
    let l_reduced = graph::reduce_laplacian(&projected)?;
    Ok(RecoveryOutput {
        l_reduced,
        iterations: stats.iterations,
        final_residual: stats.residual,
        projection_residual: stats.residual,
        sigma2_used,
        shrink_steps,
        symmetry_residual: 0.0,
        converged: true,
    })
}

/// Threshold off-diagonal entries of a full Laplacian estimate.
///
/// The threshold is `tau = alpha * min_m L[m,m]`; entries with magnitude at
/// most `tau` become exact zeros and the diagonal is untouched. If the
/// surviving support is disconnected, `tau` is halved and re-applied, at most
/// ten times, to keep connectivity when possible. Returns the sparse estimate
/// and the threshold actually used.
pub fn sparsify(l_hat: &DMatrix<f64>, alpha: f64) -> Result<(DMatrix<f64>, f64), EstimatorError> {
    assert!(
        alpha > 0.0 && alpha < 1.0,
        "alpha must lie in (0,1), got {alpha}"
    );
    let m = l_hat.nrows();
    let mut min_diag = f64::INFINITY;
    for i in 0..m {
        let v = l_hat[(i, i)];
        if v <= 0.0 {
            return Err(EstimatorError::NonPositiveDiagonal { index: i, value: v });
        }
        min_diag = min_diag.min(v);
    }
    let mut tau = alpha * min_diag;
    let mut result = apply_threshold(l_hat, tau);
    for _ in 0..10 {
        if graph::offdiag_support_connected(&result, 0.0) {
            break;
        }
        tau *= 0.5;
        result = apply_threshold(l_hat, tau);
    }
    Ok((result, tau))
}

fn apply_threshold(l: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let mut out = l.clone();
    for i in 0..out.nrows() {
        for k in 0..out.ncols() {
            if i != k && out[(i, k)].abs() <= tau {
                out[(i, k)] = 0.0;
            }
        }
    }
    out
}

/// Linear MMSE state estimator
/// `theta^[n] = Sigma_theta L (L^T Sigma_theta L + s2 I)^+ p[n]`.
///
/// The pseudo-inverse keeps the estimator defined in the singular high-SNR
/// regime.
pub fn mmse_states(
    p: &DMatrix<f64>,
    l: &DMatrix<f64>,
    sigma_theta: &DMatrix<f64>,
    sigma2: f64,
) -> Result<DMatrix<f64>, EstimatorError> {
    let m = p.nrows();
    if l.nrows() != m || l.ncols() != m || sigma_theta.nrows() != m || sigma_theta.ncols() != m {
        return Err(EstimatorError::ShapeMismatch {
            expected: format!("{m}x{m} system matrices"),
            found: format!(
                "L {}x{}, Sigma {}x{}",
                l.nrows(),
                l.ncols(),
                sigma_theta.nrows(),
                sigma_theta.ncols()
            ),
        });
    }
    assert!(sigma2 >= 0.0, "noise variance must be nonnegative");
    let gram = l.transpose() * sigma_theta * l + DMatrix::identity(m, m) * sigma2;
    let gram_pinv = numerics::pinv(&gram, numerics::DEFAULT_RANK_TOL)?;
    Ok(sigma_theta * l * gram_pinv * p)
}

/// Pipeline options for [`ml_best`].
#[derive(Debug, Clone, Copy)]
pub struct MlBestOptions {
    pub method: RecoveryMethod,
    pub settings: SolverSettings,
    /// Sparsity fraction in (0, 1); the threshold is `alpha * min diag`.
    pub alpha: f64,
    /// Remove the sample mean before estimation.
    pub center: bool,
}

impl Default for MlBestOptions {
    fn default() -> Self {
        Self {
            method: RecoveryMethod::TwoPhase,
            settings: SolverSettings::default(),
            alpha: 0.25,
            center: true,
        }
    }
}

/// The full blind estimation pipeline: centering, sample covariance,
/// noise-variance ML, reduced topology recovery, expansion, thresholding, and
/// MMSE state estimation with the estimated quantities.
pub fn ml_best(
    ms: &MeasurementSet,
    prior: &StatePrior,
    opts: &MlBestOptions,
) -> Result<EstimationResult, EstimatorError> {
    let m = ms.bus_count();
    let n = ms.sample_count();
    if prior.bus_count() != m {
        return Err(EstimatorError::ShapeMismatch {
            expected: format!("{m}x{m} prior"),
            found: format!("{}x{}", prior.bus_count(), prior.bus_count()),
        });
    }
    if n < m - 1 {
        return Err(EstimatorError::InsufficientSamples { n, required: m - 1 });
    }
    let low_sample_warning = n < 3 * m;

    let centered;
    let data = if opts.center && !ms.centered() {
        centered = center(ms);
        &centered
    } else {
        ms
    };

    let red = Reduction::new(m);
    let (sigma_p, sigma_p_reduced) = crate::dcmodel::sample_covariance(data, &red);
    let sigma2_hat = estimate_noise_variance(&sigma_p)?;

    let recovery = match opts.method {
        RecoveryMethod::TwoPhase => two_phase_recovery(
            &sigma_p_reduced,
            prior.sigma_theta_reduced(),
            sigma2_hat,
            &red,
            &opts.settings,
        )?,
        RecoveryMethod::AugmentedLagrangian => augmented_lagrangian_recovery(
            &sigma_p_reduced,
            prior.sigma_theta_reduced(),
            sigma2_hat,
            &red,
            &opts.settings,
            None,
        )?,
    };

    let l_reduced = numerics::symmetrize(&recovery.l_reduced);
    let l_hat_pre_threshold = numerics::symmetrize(&red.expand(&l_reduced)?);
    let (l_hat, threshold) = sparsify(&l_hat_pre_threshold, opts.alpha)?;
    let l_reduced_hat = graph::reduce_laplacian(&l_hat)?;
    let states_hat = mmse_states(data.p(), &l_hat, prior.sigma_theta(), recovery.sigma2_used)?;

    Ok(EstimationResult {
        l_hat,
        l_reduced_hat,
        l_hat_pre_threshold,
        sigma2_hat: recovery.sigma2_used,
        states_hat,
        method: opts.method,
        diagnostics: Diagnostics {
            iterations: recovery.iterations,
            final_residual: recovery.final_residual,
            projection_residual: recovery.projection_residual,
            threshold,
            sigma2_shrink_steps: recovery.shrink_steps,
            low_sample_warning,
            converged: recovery.converged,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcmodel::{model_covariance, simulate};
    use crate::graph::{WeightRange, WeightedGraph, laplacian_from_graph, watts_strogatz};
    use nalgebra::DVector;

    fn two_bus(b: f64) -> crate::graph::LaplacianPair {
        let g = WeightedGraph::new(2, vec![(1, 2, b)]).unwrap();
        laplacian_from_graph(&g).unwrap()
    }

    #[test]
    fn noise_variance_of_diagonal() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        assert_eq!(estimate_noise_variance(&s).unwrap(), 1.0);
    }

    #[test]
    fn noise_variance_shift_of_singular_matrix() {
        let g = WeightedGraph::new(3, vec![(1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let lp = laplacian_from_graph(&g).unwrap();
        let prior = StatePrior::isotropic(3, 1.0).unwrap();
        let (sigma_p, _) = model_covariance(&lp, &prior, 0.25);
        let est = estimate_noise_variance(&sigma_p).unwrap();
        assert!((est - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pd_mixing_two_bus_closed_form() {
        // corrected = 4.5 - 1 * 0.5 = 4, sqrt gives the true susceptance sum 2.
        let red = Reduction::new(2);
        let sigma_p_red = DMatrix::from_element(1, 1, 4.5);
        let sigma_t_red = DMatrix::from_element(1, 1, 1.0);
        let l = pd_mixing_estimate(&sigma_p_red, &sigma_t_red, 1.0, &red).unwrap();
        assert!((l[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pd_mixing_exact_recovery() {
        let g = WeightedGraph::new(
            5,
            vec![
                (1, 2, 1.1),
                (2, 3, 0.6),
                (3, 4, 1.9),
                (4, 5, 0.8),
                (2, 5, 1.3),
            ],
        )
        .unwrap();
        let lp = laplacian_from_graph(&g).unwrap();
        let prior = StatePrior::isotropic(5, 1.2).unwrap();
        let sigma2 = 0.4;
        let (_, sigma_p_red) = model_covariance(&lp, &prior, sigma2);
        let l = pd_mixing_estimate(
            &sigma_p_red,
            prior.sigma_theta_reduced(),
            sigma2,
            lp.reduction(),
        )
        .unwrap();
        assert!((l - lp.reduced()).norm() < 1e-8);
    }

    #[test]
    fn pd_mixing_clips_marginal_negativity() {
        // Overestimated noise drives one corrected eigenvalue to -1e-12 while
        // the rest stay healthy; the tiny negative one is clipped.
        let red = Reduction::new(3);
        let sigma2 = 0.5;
        let corrected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        let sigma_p_red = &corrected + red.noise_shape() * sigma2;
        let sigma_t_red = DMatrix::<f64>::identity(2, 2);
        let l = pd_mixing_estimate(&sigma_p_red, &sigma_t_red, sigma2, &red).unwrap();
        assert!(l.iter().all(|v| v.is_finite()));
        assert!((l[(0, 0)] - 1.0).abs() < 1e-6);
        assert!(l[(1, 1)].abs() < 1e-6);
    }

    #[test]
    fn shrink_fallback_recovers_from_overestimated_noise() {
        let red = Reduction::new(2);
        let sigma_p_red = DMatrix::from_element(1, 1, 4.5);
        let sigma_t_red = DMatrix::from_element(1, 1, 1.0);
        // True correction would need sigma2 <= 9; 9.2 overshoots into an
        // indefinite matrix and must shrink before succeeding.
        let (l, used, steps) =
            pd_mixing_estimate_with_shrink(&sigma_p_red, &sigma_t_red, 9.2, &red).unwrap();
        assert!(steps > 0);
        assert!(used < 9.2);
        assert!(l[(0, 0)] >= 0.0);
    }

    #[test]
    fn two_phase_exact_recovery_six_bus() {
        let g = watts_strogatz(6, 2, 0.4, WeightRange::default(), None, 21).unwrap();
        let lp = laplacian_from_graph(&g).unwrap();
        let prior = StatePrior::isotropic(6, 1.0).unwrap();
        let sigma2 = 0.2;
        let (_, sigma_p_red) = model_covariance(&lp, &prior, sigma2);
        let out = two_phase_recovery(
            &sigma_p_red,
            prior.sigma_theta_reduced(),
            sigma2,
            lp.reduction(),
            &SolverSettings::default(),
        )
        .unwrap();
        assert!(
            (&out.l_reduced - lp.reduced()).norm() < 1e-6,
            "error {}",
            (&out.l_reduced - lp.reduced()).norm()
        );
    }

    #[test]
    fn two_phase_two_bus_unchanged_by_projection() {
        let lp = two_bus(2.0);
        let prior = StatePrior::isotropic(2, 1.0).unwrap();
        let sigma2 = 0.5;
        let (_, sigma_p_red) = model_covariance(&lp, &prior, sigma2);
        let out = two_phase_recovery(
            &sigma_p_red,
            prior.sigma_theta_reduced(),
            sigma2,
            lp.reduction(),
            &SolverSettings::default(),
        )
        .unwrap();
        assert!((out.l_reduced[(0, 0)] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn sparsify_preserves_large_entries() {
        let g = WeightedGraph::new(3, vec![(1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let l = laplacian_from_graph(&g).unwrap().laplacian().clone();
        let (sparse, _) = sparsify(&l, 0.5).unwrap();
        assert_eq!(sparse, l);
    }

    #[test]
    fn sparsify_zeroes_spurious_entry() {
        let g = WeightedGraph::new(3, vec![(1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let mut l = laplacian_from_graph(&g).unwrap().laplacian().clone();
        let tau = 0.25 * 1.0;
        l[(0, 2)] = -tau / 2.0;
        l[(2, 0)] = -tau / 2.0;
        let (sparse, used_tau) = sparsify(&l, 0.25).unwrap();
        assert_eq!(sparse[(0, 2)], 0.0);
        assert_eq!(sparse[(2, 0)], 0.0);
        assert!((used_tau - tau).abs() < 1e-12);
        // Diagonal untouched, no new nonzeros.
        for i in 0..3 {
            assert_eq!(sparse[(i, i)], l[(i, i)]);
        }
    }

    #[test]
    fn sparsify_halves_threshold_to_keep_connectivity() {
        // Bridge edge weight sits below alpha * min diag; the threshold must
        // back off to keep the graph connected.
        let mut l = DMatrix::zeros(3, 3);
        l[(0, 1)] = -1.0;
        l[(1, 0)] = -1.0;
        l[(1, 2)] = -0.3;
        l[(2, 1)] = -0.3;
        l[(0, 0)] = 1.0;
        l[(1, 1)] = 1.3;
        l[(2, 2)] = 1.0;
        let (sparse, tau) = sparsify(&l, 0.5).unwrap();
        assert!(tau < 0.5 * 1.0);
        assert!(sparse[(1, 2)] != 0.0);
        assert!(graph::offdiag_support_connected(&sparse, 0.0));
    }

    #[test]
    fn sparsify_touches_only_offdiagonals_and_never_adds_nonzeros() {
        use proptest::prelude::*;
        proptest!(ProptestConfig::with_cases(40), |(seed in 0u64..500, alpha in 0.05f64..0.95)| {
            use rand::{RngExt, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let m = 5;
            let mut l = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            l = crate::numerics::symmetrize(&l);
            for i in 0..m {
                l[(i, i)] = 0.5 + rng.random::<f64>();
                // Some exact zeros in the input.
                if i + 2 < m {
                    l[(i, i + 2)] = 0.0;
                    l[(i + 2, i)] = 0.0;
                }
            }
            let (sparse, _) = sparsify(&l, alpha).unwrap();
            for i in 0..m {
                for k in 0..m {
                    if i == k {
                        prop_assert_eq!(sparse[(i, k)], l[(i, k)]);
                    } else if l[(i, k)] == 0.0 {
                        prop_assert_eq!(sparse[(i, k)], 0.0);
                    } else {
                        prop_assert!(sparse[(i, k)] == l[(i, k)] || sparse[(i, k)] == 0.0);
                    }
                }
            }
        });
    }

    #[test]
    fn sparsify_rejects_nonpositive_diagonal() {
        let mut l = DMatrix::<f64>::identity(3, 3);
        l[(2, 2)] = -0.1;
        assert!(matches!(
            sparsify(&l, 0.3),
            Err(EstimatorError::NonPositiveDiagonal { index: 2, .. })
        ));
    }

    #[test]
    fn mmse_noiseless_two_bus() {
        let lp = two_bus(2.0);
        let theta = DMatrix::from_column_slice(2, 1, &[0.1, -0.1]);
        let p = lp.laplacian() * &theta;
        assert!((p[(0, 0)] - 0.4).abs() < 1e-12);
        let est = mmse_states(&p, lp.laplacian(), &DMatrix::identity(2, 2), 0.0).unwrap();
        assert!((est - theta).norm() < 1e-10);
    }

    #[test]
    fn mmse_infinite_noise_shrinks_to_prior_mean() {
        let lp = two_bus(2.0);
        let p = DMatrix::from_column_slice(2, 1, &[0.4, -0.4]);
        let est = mmse_states(&p, lp.laplacian(), &DMatrix::identity(2, 2), 1e12).unwrap();
        assert!(est.norm() < 1e-10);
    }

    #[test]
    fn mmse_is_linear_in_measurements() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(13);
        let g = WeightedGraph::new(4, vec![(1, 2, 1.0), (2, 3, 0.7), (3, 4, 1.2), (1, 3, 0.4)])
            .unwrap();
        let lp = laplacian_from_graph(&g).unwrap();
        let sigma_theta = DMatrix::<f64>::identity(4, 4) * 2.0;
        let p1 = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() - 0.5);
        let p2 = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() - 0.5);
        let (a, b) = (0.7, -1.3);
        let combined =
            mmse_states(&(&p1 * a + &p2 * b), lp.laplacian(), &sigma_theta, 0.3).unwrap();
        let separate = mmse_states(&p1, lp.laplacian(), &sigma_theta, 0.3).unwrap() * a
            + mmse_states(&p2, lp.laplacian(), &sigma_theta, 0.3).unwrap() * b;
        assert!((combined - separate).norm() < 1e-10);
    }

    #[test]
    fn mmse_local_optimality_probe() {
        use rand::{RngExt, SeedableRng};
        let g = WeightedGraph::new(
            5,
            vec![
                (1, 2, 1.0),
                (2, 3, 1.4),
                (3, 4, 0.8),
                (4, 5, 1.1),
                (1, 5, 0.6),
            ],
        )
        .unwrap();
        let lp = laplacian_from_graph(&g).unwrap();
        let prior = StatePrior::isotropic(5, 1.0).unwrap();
        let sigma2 = 0.1;
        let (ms, states) = simulate(&lp, &prior, sigma2, 20_000, 99).unwrap();
        let base = mmse_states(ms.p(), lp.laplacian(), prior.sigma_theta(), sigma2).unwrap();
        let base_mse = (&base - &states).norm_squared();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        let gram = lp.laplacian().transpose() * prior.sigma_theta() * lp.laplacian()
            + DMatrix::<f64>::identity(5, 5) * sigma2;
        for _ in 0..10 {
            let eps = 10f64.powf(-3.0 + 2.0 * rng.random::<f64>());
            let perturbed = prior.sigma_theta()
                * lp.laplacian()
                * (&gram + DMatrix::<f64>::identity(5, 5) * eps)
                    .try_inverse()
                    .unwrap()
                * ms.p();
            let mse = (perturbed - &states).norm_squared();
            assert!(base_mse <= mse + 1e-9 * states.norm_squared());
        }
    }

    #[test]
    fn ml_best_exact_covariance_bypass() {
        // Feed noiseless measurements whose sample covariance is nearly exact
        // by using states directly as columns through a large sample count is
        // expensive; instead exercise the bypass contract at the recovery
        // level and the pipeline on simulated data elsewhere.
        let g = WeightedGraph::new(4, vec![(1, 2, 1.0), (2, 3, 1.5), (3, 4, 0.9), (1, 4, 1.2)])
            .unwrap();
        let lp = laplacian_from_graph(&g).unwrap();
        let prior = StatePrior::isotropic(4, 1.0).unwrap();
        let (_, sigma_p_red) = model_covariance(&lp, &prior, 0.0);
        let out = two_phase_recovery(
            &sigma_p_red,
            prior.sigma_theta_reduced(),
            0.0,
            lp.reduction(),
            &SolverSettings::default(),
        )
        .unwrap();
        assert!((&out.l_reduced - lp.reduced()).norm() < 1e-6);
    }

    #[test]
    fn ml_best_rejects_insufficient_samples() {
        let lp = two_bus(1.0);
        let prior = StatePrior::isotropic(2, 1.0).unwrap();
        let (ms, _) = simulate(&lp, &prior, 0.1, 5, 1).unwrap();
        let short = MeasurementSet::new(ms.p().columns(0, 0).clone_owned(), false, 1);
        // 0 samples < M - 1 = 1.
        assert!(matches!(
            ml_best(&short, &prior, &MlBestOptions::default()),
            Err(EstimatorError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn ml_best_two_bus_consistency() {
        let b = 2.0;
        let lp = two_bus(b);
        let prior = StatePrior::isotropic(2, 1.0).unwrap();
        let (ms, _) = simulate(&lp, &prior, 0.01, 10_000, 7).unwrap();
        let result = ml_best(&ms, &prior, &MlBestOptions::default()).unwrap();
        let rel = (result.l_hat[(0, 0)] - b).abs() / b;
        assert!(rel < 0.05, "relative error {rel}");
        // Expansion relation holds before thresholding.
        let red = Reduction::new(2);
        let rebuilt = red
            .expand(&graph::reduce_laplacian(&result.l_hat_pre_threshold).unwrap())
            .unwrap();
        assert!((rebuilt - &result.l_hat_pre_threshold).norm() < 1e-9);
    }
}
