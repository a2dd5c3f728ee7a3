//! Closed-form Fisher information and Cramer-Rao bound for the parameter
//! vector `[vech(L~), sigma2]`, plus a finite-difference oracle used to
//! validate the analytic assembly.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::Reduction;
use crate::numerics;

#[derive(Debug, Error)]
pub enum CrbError {
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error("covariance is singular (smallest eigenvalue {min_eigenvalue:.3e})")]
    SingularCovariance { min_eigenvalue: f64 },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("finite-difference step {0} outside [1e-7, 1e-4]")]
    InvalidStep(f64),
}

/// Column-major lower-triangle index map: entry `i` of `vech(S)` is
/// `S[(row, col)]` with `(row, col) = vech_indices(r)[i]`, ordered
/// `(0,0), (1,0), ..., (r-1,0), (1,1), (2,1), ...`.
pub fn vech_indices(r: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(r * (r + 1) / 2);
    for col in 0..r {
        for row in col..r {
            out.push((row, col));
        }
    }
    out
}

/// `vech`: stack the lower triangle (including diagonal) column-major.
pub fn vech(s: &DMatrix<f64>) -> DVector<f64> {
    let idx = vech_indices(s.nrows());
    DVector::from_iterator(idx.len(), idx.into_iter().map(|(i, j)| s[(i, j)]))
}

/// Number of parameters: `M(M-1)/2` topology entries plus the noise variance.
pub fn param_count(bus_count: usize) -> usize {
    let r = bus_count - 1;
    r * (r + 1) / 2 + 1
}

/// Fisher information and Cramer-Rao bound report.
#[derive(Debug, Clone)]
pub struct CrbReport {
    pub j: DMatrix<f64>,
    pub b_crb: DMatrix<f64>,
    pub vech_order: Vec<(usize, usize)>,
    /// Trace of the `vech(L~)` block of the bound.
    pub topology_bound_trace: f64,
    /// Bound on the noise-variance MSE.
    pub noise_var_bound: f64,
    pub n_samples: usize,
}

fn check_dims(
    l_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
    red: &Reduction,
) -> Result<usize, CrbError> {
    let r = red.reduced_dim();
    if l_reduced.nrows() != r
        || l_reduced.ncols() != r
        || sigma_theta_reduced.nrows() != r
        || sigma_theta_reduced.ncols() != r
    {
        return Err(CrbError::ShapeMismatch {
            expected: format!("{r}x{r}"),
            found: format!(
                "L~ {}x{}, S~ {}x{}",
                l_reduced.nrows(),
                l_reduced.ncols(),
                sigma_theta_reduced.nrows(),
                sigma_theta_reduced.ncols()
            ),
        });
    }
    Ok(r)
}

/// Per-sample covariance `C = L~ S~ L~ + sigma2 U+ (U+)^T` and its inverse.
fn covariance_and_inverse(
    l_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
    sigma2: f64,
    red: &Reduction,
) -> Result<(DMatrix<f64>, DMatrix<f64>), CrbError> {
    let c = numerics::symmetrize(
        &(l_reduced * sigma_theta_reduced * l_reduced + red.noise_shape() * sigma2),
    );
    let se = numerics::sym_eig(&c)?;
    if se.min_eigenvalue() <= 1e-12 * se.max_eigenvalue().max(1.0) {
        return Err(CrbError::SingularCovariance {
            min_eigenvalue: se.min_eigenvalue(),
        });
    }
    let c_inv = se.map_eigenvalues(|l| 1.0 / l);
    Ok((c, c_inv))
}

/// Closed-form derivative of `C` w.r.t. `L~[(k,l)]` including the
/// `(1 - delta/2)` symmetric-parameterization factor:
/// `(1 - d/2) [ (E_kl + E_lk) S~ L~ + L~ S~ (E_kl + E_lk) ]`.
fn dc_dl(
    k: usize,
    l: usize,
    l_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
) -> DMatrix<f64> {
    let r = l_reduced.nrows();
    let a = sigma_theta_reduced * l_reduced; // A = S~ L~, so L~ S~ = A^T
    let factor = if k == l { 0.5 } else { 1.0 };
    let mut x = DMatrix::zeros(r, r);
    // (E_kl + E_lk) A: row k gets row l of A, row l gets row k of A.
    for j in 0..r {
        x[(k, j)] += a[(l, j)];
        x[(l, j)] += a[(k, j)];
    }
    // A^T (E_kl + E_lk): column l gets column k of A^T (= row k of A), etc.
    for i in 0..r {
        x[(i, l)] += a[(k, i)];
        x[(i, k)] += a[(l, i)];
    }
    x * factor
}

/// Derivative matrices for every parameter, in `[vech(L~), sigma2]` order.
fn derivative_stack(
    l_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
    red: &Reduction,
) -> Vec<DMatrix<f64>> {
    let order = vech_indices(l_reduced.nrows());
    let mut stack: Vec<DMatrix<f64>> = order
        .iter()
        .map(|&(k, l)| dc_dl(k, l, l_reduced, sigma_theta_reduced))
        .collect();
    stack.push(red.noise_shape().clone());
    stack
}

/// Analytic FIM `J = (N/2) Psi^T Q Psi` with `Q = C^{-1} (x) C^{-1}`.
///
/// The Kronecker form is never materialized: column `j` of `Q Psi` is
/// `vec(C^{-1} X_j C^{-1})` for the matrix form `X_j` of the column, so each
/// entry reduces to a trace of an `(M-1) x (M-1)` product.
pub fn fim(
    l_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
    sigma2: f64,
    n_samples: usize,
    red: &Reduction,
) -> Result<DMatrix<f64>, CrbError> {
    check_dims(l_reduced, sigma_theta_reduced, red)?;
    let (_, c_inv) = covariance_and_inverse(l_reduced, sigma_theta_reduced, sigma2, red)?;
    let stack = derivative_stack(l_reduced, sigma_theta_reduced, red);
    let d = stack.len();
    let sandwiched: Vec<DMatrix<f64>> = stack.iter().map(|x| &c_inv * x * &c_inv).collect();
    let mut j = DMatrix::zeros(d, d);
    let half_n = n_samples as f64 / 2.0;
    for a in 0..d {
        for b in a..d {
            let val = half_n * stack[a].dot(&sandwiched[b]);
            j[(a, b)] = val;
            j[(b, a)] = val;
        }
    }
    Ok(j)
}

/// Reference FIM assembly that materializes `Q = C^{-1} (x) C^{-1}` densely
/// and evaluates `(N/2) psi^T Q psi` column pair by column pair. Only
/// sensible for small systems; kept as an independent assembly route for
/// validation.
pub fn fim_dense_kronecker(
    l_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
    sigma2: f64,
    n_samples: usize,
    red: &Reduction,
) -> Result<DMatrix<f64>, CrbError> {
    let r = check_dims(l_reduced, sigma_theta_reduced, red)?;
    let (_, c_inv) = covariance_and_inverse(l_reduced, sigma_theta_reduced, sigma2, red)?;
    let q = kron(&c_inv, &c_inv);
    let stack = derivative_stack(l_reduced, sigma_theta_reduced, red);
    let d = stack.len();
    let mut psi = DMatrix::zeros(r * r, d);
    for (j, x) in stack.iter().enumerate() {
        psi.set_column(j, &DVector::from_column_slice(x.as_slice()));
    }
    Ok(psi.transpose() * q * psi * (n_samples as f64 / 2.0))
}

/// `A (x) B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let scaled = b * a[(i, j)];
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&scaled);
        }
    }
    out
}

/// Finite-difference FIM: derivatives of the covariance map are replaced by
/// central differences, sharing no derivative code with [`fim`]. Test oracle.
pub fn fim_numeric_oracle(
    l_reduced: &DMatrix<f64>,
    sigma_theta_reduced: &DMatrix<f64>,
    sigma2: f64,
    n_samples: usize,
    red: &Reduction,
    step: f64,
) -> Result<DMatrix<f64>, CrbError> {
    let r = check_dims(l_reduced, sigma_theta_reduced, red)?;
    if !(1e-7..=1e-4).contains(&step) {
        return Err(CrbError::InvalidStep(step));
    }
    let order = vech_indices(r);
    let d = order.len() + 1;

    // Covariance as a function of the packed parameter vector, built from
    // scratch so the analytic derivative path is not shared.
    let build_c = |params: &[f64]| -> DMatrix<f64> {
        let mut lt = DMatrix::zeros(r, r);
        for (idx, &(i, j)) in order.iter().enumerate() {
            lt[(i, j)] = params[idx];
            lt[(j, i)] = params[idx];
        }
        let s2 = params[order.len()];
        &lt * sigma_theta_reduced * &lt + red.noise_shape() * s2
    };

    let mut params = Vec::with_capacity(d);
    for &(i, j) in &order {
        params.push(l_reduced[(i, j)]);
    }
    params.push(sigma2);

    let (_, c_inv) = covariance_and_inverse(l_reduced, sigma_theta_reduced, sigma2, red)?;

    let mut derivs = Vec::with_capacity(d);
    for m in 0..d {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus[m] += step;
        minus[m] -= step;
        derivs.push((build_c(&plus) - build_c(&minus)) / (2.0 * step));
    }

    let mut j = DMatrix::zeros(d, d);
    let half_n = n_samples as f64 / 2.0;
    for a in 0..d {
        let left = &c_inv * &derivs[a] * &c_inv;
        for b in 0..d {
            j[(a, b)] = half_n * (&left * &derivs[b]).trace();
        }
    }
    Ok(numerics::symmetrize(&j))
}

/// Pseudo-invert the FIM into the bound report.
///
/// `j` must already include the `N/2` factor; `n_samples` is recorded for the
/// report.
pub fn crb_bound(j: &DMatrix<f64>, n_samples: usize) -> Result<CrbReport, CrbError> {
    let d = j.nrows();
    if j.ncols() != d || d < 2 {
        return Err(CrbError::ShapeMismatch {
            expected: "square, at least 2x2".to_string(),
            found: format!("{}x{}", d, j.ncols()),
        });
    }
    let b = numerics::pinv(j, 1e-10)?;
    let topology_bound_trace = (0..d - 1).map(|i| b[(i, i)]).sum();
    let noise_var_bound = b[(d - 1, d - 1)];
    // The reduced dimension solving r(r+1)/2 + 1 = d.
    let r = (((8 * (d - 1) + 1) as f64).sqrt() as usize - 1) / 2;
    Ok(CrbReport {
        j: j.clone(),
        b_crb: b,
        vech_order: vech_indices(r),
        topology_bound_trace,
        noise_var_bound,
        n_samples,
    })
}
