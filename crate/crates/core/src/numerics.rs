//! Dense symmetric linear-algebra primitives with explicit tolerance contracts.
//!
//! Everything downstream (covariance matching, projections, Fisher information)
//! is built on these three operations, so their numerical contracts are pinned
//! here and enforced by tests rather than assumed.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default relative threshold below which eigenvalues are clipped to zero in
/// [`psd_sqrt`].
pub const DEFAULT_CLIP_TOL: f64 = 1e-8;
/// Default relative singular-value cutoff for [`pinv`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Maximum relative asymmetry accepted by [`sym_eig`].
const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix is not symmetric: relative asymmetry {asymmetry:.3e} exceeds {tol:.3e}")]
    NonSymmetric { asymmetry: f64, tol: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error(
        "matrix is not approximately PSD: smallest eigenvalue {min_eigenvalue:.6e} \
         below -{clip_tol:.1e} * ||S||_2 = {threshold:.6e}"
    )]
    NotApproxPsd {
        min_eigenvalue: f64,
        clip_tol: f64,
        threshold: f64,
    },
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
///
/// Column `i` of `eigenvectors` pairs with `eigenvalues[i]`. The sign of each
/// eigenvector is normalized so its first non-negligible entry is positive,
/// which keeps seeded tests deterministic.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SymEig {
    /// Rebuild `V * diag(lambda) * V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.eigenvectors
            * DMatrix::from_diagonal(&self.eigenvalues)
            * self.eigenvectors.transpose()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Spectral norm, `max_i |lambda_i|`.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |a, &l| a.max(l.abs()))
    }

    /// Apply `f` to every eigenvalue and rebuild the matrix.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mapped = self.eigenvalues.map(f);
        symmetrize(
            &(&self.eigenvectors * DMatrix::from_diagonal(&mapped) * self.eigenvectors.transpose()),
        )
    }
}

/// `(S + S^T) / 2`.
pub fn symmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    (s + s.transpose()) * 0.5
}

fn check_finite(a: &DMatrix<f64>) -> Result<(), NumericsError> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite)
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// The input may deviate from exact symmetry by at most `1e-9` relative
/// Frobenius asymmetry; it is symmetrized before factorization. Eigenpairs are
/// sorted by descending eigenvalue and eigenvector signs are fixed so the
/// first entry with magnitude above `1e-12 * max|v|` is positive.
pub fn sym_eig(s: &DMatrix<f64>) -> Result<SymEig, NumericsError> {
    check_finite(s)?;
    assert_eq!(s.nrows(), s.ncols(), "sym_eig requires a square matrix");
    let scale = s.norm().max(1.0);
    let asymmetry = (s - s.transpose()).norm() / scale;
    if asymmetry > SYMMETRY_TOL {
        return Err(NumericsError::NonSymmetric {
            asymmetry,
            tol: SYMMETRY_TOL,
        });
    }
    let se = symmetrize(s).symmetric_eigen();

    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        se.eigenvalues[b]
            .partial_cmp(&se.eigenvalues[a])
            .expect("finite eigenvalues")
    });

    let mut eigenvalues = DVector::zeros(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues[dst] = se.eigenvalues[src];
        let mut col = se.eigenvectors.column(src).clone_owned();
        let amax = col.amax();
        if let Some(lead) = col.iter().find(|x| x.abs() > 1e-12 * amax)
            && *lead < 0.0
        {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Symmetric PSD square root with eigenvalue clipping.
///
/// Eigenvalues in `[-clip_tol * ||S||_2, 0)` are treated as numerical noise
/// and clipped to zero; anything more negative is rejected, since it signals
/// a covariance that cannot come from the assumed model.
pub fn psd_sqrt(s: &DMatrix<f64>, clip_tol: f64) -> Result<DMatrix<f64>, NumericsError> {
    let se = sym_eig(s)?;
    let threshold = -clip_tol * se.spectral_norm();
    let min_eigenvalue = se.min_eigenvalue();
    if min_eigenvalue < threshold {
        return Err(NumericsError::NotApproxPsd {
            min_eigenvalue,
            clip_tol,
            threshold,
        });
    }
    Ok(se.map_eigenvalues(|l| l.max(0.0).sqrt()))
}

/// Moore-Penrose pseudo-inverse via SVD.
///
/// Singular values below `rank_tol * sigma_max` are treated as zero.
pub fn pinv(a: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>, NumericsError> {
    check_finite(a)?;
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().fold(0.0_f64, |m, &s| m.max(s));
    let cutoff = rank_tol * sigma_max;
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let inv_sigma = DVector::from_iterator(
        svd.singular_values.len(),
        svd.singular_values
            .iter()
            .map(|&s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 }),
    );
    Ok(v_t.transpose() * DMatrix::from_diagonal(&inv_sigma) * u.transpose())
}
