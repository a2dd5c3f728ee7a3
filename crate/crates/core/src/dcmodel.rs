//! DC power-flow measurement synthesis and covariance computation.
//!
//! Measurements follow `p[n] = L theta[n] + w[n]` with Gaussian states and
//! noise; covariances are available in both bus and reduced coordinates.

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::graph::{LaplacianPair, Reduction};
use crate::numerics;

#[derive(Debug, Error)]
pub enum DcModelError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("state prior is not positive definite (smallest eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),
    #[error("degenerate signal: Tr{{L~ S L~}} = {0:.3e} is not positive")]
    DegenerateSignal(f64),
}

/// Gaussian prior on the bus voltage angles.
///
/// Stores both the bus-coordinate covariance and its reduction
/// `U^T Sigma_theta U`.
#[derive(Debug, Clone)]
pub struct StatePrior {
    sigma_theta: DMatrix<f64>,
    sigma_theta_reduced: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl StatePrior {
    pub fn new(sigma_theta: DMatrix<f64>) -> Result<Self, DcModelError> {
        let m = sigma_theta.nrows();
        if sigma_theta.ncols() != m || m < 2 {
            return Err(DcModelError::ShapeMismatch {
                expected: "square, at least 2x2".to_string(),
                found: format!("{}x{}", m, sigma_theta.ncols()),
            });
        }
        let se = numerics::sym_eig(&sigma_theta)
            .map_err(|_| DcModelError::NotPositiveDefinite(f64::NAN))?;
        if se.min_eigenvalue() <= 0.0 {
            return Err(DcModelError::NotPositiveDefinite(se.min_eigenvalue()));
        }
        let chol = nalgebra::Cholesky::new(sigma_theta.clone())
            .ok_or(DcModelError::NotPositiveDefinite(se.min_eigenvalue()))?
            .l();
        let red = Reduction::new(m);
        let sigma_theta_reduced = red.u().transpose() * &sigma_theta * red.u();
        Ok(Self {
            sigma_theta,
            sigma_theta_reduced,
            chol,
        })
    }

    /// `Sigma_theta = c^2 I`.
    pub fn isotropic(bus_count: usize, c: f64) -> Result<Self, DcModelError> {
        Self::new(DMatrix::identity(bus_count, bus_count) * (c * c))
    }

    pub fn sigma_theta(&self) -> &DMatrix<f64> {
        &self.sigma_theta
    }

    pub fn sigma_theta_reduced(&self) -> &DMatrix<f64> {
        &self.sigma_theta_reduced
    }

    pub fn bus_count(&self) -> usize {
        self.sigma_theta.nrows()
    }
}

/// A batch of active-power injection measurements, one column per time sample.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    p: DMatrix<f64>,
    centered: bool,
    seed: u64,
}

impl MeasurementSet {
    pub fn new(p: DMatrix<f64>, centered: bool, seed: u64) -> Self {
        Self { p, centered, seed }
    }

    /// `M x N` matrix of measurements in p.u.
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn bus_count(&self) -> usize {
        self.p.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.p.ncols()
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draw one standard normal via Box-Muller from two uniforms.
fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    // 1 - u in (0, 1], keeps ln away from zero.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Simulate `p[n] = L theta[n] + w[n]` for `n = 0..N-1`.
///
/// States are i.i.d. `N(0, Sigma_theta)`, noise is `N(0, sigma2 I)`
/// independent of the states, and the draw order is per-sample (all state
/// normals, then all noise normals), so a longer run with the same seed
/// extends a shorter one sample for sample. Noise is drawn as unit normals
/// scaled by `sqrt(sigma2)`, so the same seed yields coupled realizations
/// across noise levels. Returns the measurements and the true states.
pub fn simulate(
    lp: &LaplacianPair,
    prior: &StatePrior,
    sigma2: f64,
    n_samples: usize,
    seed: u64,
) -> Result<(MeasurementSet, DMatrix<f64>), DcModelError> {
    let m = lp.bus_count();
    if prior.bus_count() != m {
        return Err(DcModelError::ShapeMismatch {
            expected: format!("{m}x{m} prior"),
            found: format!("{}x{}", prior.bus_count(), prior.bus_count()),
        });
    }
    assert!(sigma2 >= 0.0, "noise variance must be nonnegative");
    assert!(n_samples > 0, "need at least one sample");

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let noise_std = sigma2.sqrt();
    let mut states = DMatrix::zeros(m, n_samples);
    let mut p = DMatrix::zeros(m, n_samples);
    let mut z = nalgebra::DVector::zeros(m);
    for n in 0..n_samples {
        for i in 0..m {
            z[i] = standard_normal(&mut rng);
        }
        let theta = &prior.chol * &z;
        let mut col = lp.laplacian() * &theta;
        for i in 0..m {
            col[i] += noise_std * standard_normal(&mut rng);
        }
        states.set_column(n, &theta);
        p.set_column(n, &col);
    }
    Ok((MeasurementSet::new(p, false, seed), states))
}

/// Subtract the per-bus sample mean from every measurement.
pub fn center(ms: &MeasurementSet) -> MeasurementSet {
    let n = ms.sample_count() as f64;
    let mut p = ms.p.clone();
    for i in 0..p.nrows() {
        let mean = p.row(i).sum() / n;
        for j in 0..p.ncols() {
            p[(i, j)] -= mean;
        }
    }
    MeasurementSet::new(p, true, ms.seed)
}

/// Sample covariance `(1/N) sum p[n] p[n]^T` and its reduced counterpart
/// `U^+ Sigma^ (U^+)^T`.
pub fn sample_covariance(ms: &MeasurementSet, red: &Reduction) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = ms.sample_count() as f64;
    let full = numerics::symmetrize(&(&ms.p * ms.p.transpose() / n));
    let reduced = numerics::symmetrize(
        &red.reduce_covariance(&full)
            .expect("reduction dimension fixed by construction"),
    );
    (full, reduced)
}

/// Model covariances `Sigma_p = L^T Sigma_theta L + sigma2 I` and
/// `Sigma_p~ = L~^T Sigma_theta~ L~ + sigma2 U^+ (U^+)^T`.
pub fn model_covariance(
    lp: &LaplacianPair,
    prior: &StatePrior,
    sigma2: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = lp.bus_count();
    let full = lp.laplacian().transpose() * prior.sigma_theta() * lp.laplacian()
        + DMatrix::identity(m, m) * sigma2;
    let reduced = lp.reduced().transpose() * prior.sigma_theta_reduced() * lp.reduced()
        + lp.reduction().noise_shape() * sigma2;
    (numerics::symmetrize(&full), numerics::symmetrize(&reduced))
}

/// `Tr{L~ Sigma_theta~ L~}`, the reduced-system signal power.
pub fn signal_power(lp: &LaplacianPair, prior: &StatePrior) -> f64 {
    (lp.reduced() * prior.sigma_theta_reduced() * lp.reduced()).trace()
}

/// Noise variance realizing a target SNR, `sigma2 = Tr{L~ S~ L~} / 10^(dB/10)`.
pub fn snr_to_noise_var(
    lp: &LaplacianPair,
    prior: &StatePrior,
    snr_db: f64,
) -> Result<f64, DcModelError> {
    let trace = signal_power(lp, prior);
    if trace <= 0.0 {
        return Err(DcModelError::DegenerateSignal(trace));
    }
    Ok(trace / 10f64.powf(snr_db / 10.0))
}

/// Inverse of [`snr_to_noise_var`].
pub fn noise_var_to_snr_db(
    lp: &LaplacianPair,
    prior: &StatePrior,
    sigma2: f64,
) -> Result<f64, DcModelError> {
    let trace = signal_power(lp, prior);
    if trace <= 0.0 {
        return Err(DcModelError::DegenerateSignal(trace));
    }
    Ok(10.0 * (trace / sigma2).log10())
}
