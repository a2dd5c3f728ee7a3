//! Blind estimation of power-grid states and topology from DC power
//! measurements.
//!
//! Under the linearized DC model `p[n] = L theta[n] + w[n]`, the bus voltage
//! angles (states) and the weighted Laplacian `L` (topology) can both be
//! recovered from second-order statistics of the measurements alone, because
//! the Laplacian structure removes the usual scaling and permutation
//! ambiguities of blind source separation. This crate implements the full
//! maximum-likelihood pipeline around that observation:
//!
//! - [`numerics`]: symmetric eigendecompositions, PSD square roots and
//!   pseudo-inverses with pinned tolerance contracts;
//! - [`graph`]: weighted graphs, Laplacian reduction/expansion, property
//!   validation, Watts-Strogatz generation, case-file parsing and the
//!   F-score metric;
//! - [`dcmodel`]: measurement simulation and model/sample covariances;
//! - [`estimators`]: noise-variance ML, two-phase recovery (relaxed
//!   positive-definite estimate followed by the closest-Laplacian
//!   projection), augmented-Lagrangian recovery, sparsity thresholding, MMSE
//!   state estimation and the end-to-end pipeline;
//! - [`crb`]: the closed-form Fisher information and Cramer-Rao bound for
//!   `[vech(L~), sigma2]`, with a finite-difference validation oracle;
//! - [`harness`]: seeded Monte-Carlo experiments, runtime benchmarks and CSV
//!   serialization.

pub mod crb;
pub mod dcmodel;
pub mod estimators;
pub mod graph;
pub mod harness;
pub mod numerics;
