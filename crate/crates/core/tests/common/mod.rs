#![allow(dead_code)] // shared across test binaries; not every binary uses every oracle

//! Shared test oracles: brute-force projection QP and random problem
//! generators. Everything here is independent of the library's solver paths.

use mlbest::graph::{self, WeightedGraph};
use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_chacha::ChaCha12Rng;

/// Lower-triangle pair list (i < j) for an `m x m` matrix.
fn pairs(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            out.push((i, j));
        }
    }
    out
}

/// Exact Frobenius projection of a symmetric matrix onto
/// {symmetric, zero row sums, off-diagonal <= 0} by enumerating active sets
/// of the equivalent bound-constrained QP.
///
/// Parameterization: one variable per unordered off-diagonal pair, with the
/// diagonal determined by the zero-row-sum constraint. The objective is
/// strictly convex, so the optimum is the feasible candidate of minimum
/// objective across all active sets.
pub fn projection_qp_oracle(t: &DMatrix<f64>) -> DMatrix<f64> {
    let m = t.nrows();
    assert_eq!(m, t.ncols());
    let t = (t + t.transpose()) * 0.5;
    let edge = pairs(m);
    let p = edge.len();
    assert!(p <= 12, "active-set enumeration only at toy sizes");

    // f(x) = sum_i (T_ii + sum_{e ni i} x_e)^2 + 2 sum_e (T_e - x_e)^2
    // grad_e at x: 2 sum_{i in e} (T_ii + sum_{e' ni i} x_{e'}) - 4 (T_e - x_e)
    // hess[e][f] = 2 |e cap f| + 4 delta_ef
    let mut hess = DMatrix::zeros(p, p);
    for (a, &(i, j)) in edge.iter().enumerate() {
        for (b, &(k, l)) in edge.iter().enumerate() {
            let shared = [i, j].iter().filter(|v| [k, l].contains(v)).count() as f64;
            hess[(a, b)] = 2.0 * shared;
        }
        hess[(a, a)] += 4.0;
    }
    let grad0 = DVector::from_fn(p, |e, _| {
        let (i, j) = edge[e];
        2.0 * (t[(i, i)] + t[(j, j)]) - 4.0 * t[(i, j)]
    });

    let objective = |x: &DVector<f64>| -> f64 {
        let mut f = 0.0;
        for i in 0..m {
            let mut diag = t[(i, i)];
            for (e, &(a, b)) in edge.iter().enumerate() {
                if a == i || b == i {
                    diag += x[e];
                }
            }
            f += diag * diag;
        }
        for (e, &(a, b)) in edge.iter().enumerate() {
            let d = t[(a, b)] - x[e];
            f += 2.0 * d * d;
        }
        f
    };

    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << p) {
        let free: Vec<usize> = (0..p).filter(|e| mask & (1 << e) == 0).collect();
        let mut x = DVector::zeros(p);
        if !free.is_empty() {
            let nf = free.len();
            let mut h = DMatrix::zeros(nf, nf);
            let mut g = DVector::zeros(nf);
            for (a, &ea) in free.iter().enumerate() {
                g[a] = -grad0[ea];
                for (b, &eb) in free.iter().enumerate() {
                    h[(a, b)] = hess[(ea, eb)];
                }
            }
            let sol = match h.lu().solve(&g) {
                Some(s) => s,
                None => continue,
            };
            for (a, &ea) in free.iter().enumerate() {
                x[ea] = sol[a];
            }
        }
        if x.iter().any(|&v| v > 1e-10) {
            continue;
        }
        let x = x.map(|v| v.min(0.0));
        let f = objective(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }

    let (_, x) = best.expect("the all-active candidate is always feasible");
    let mut l = DMatrix::zeros(m, m);
    for (e, &(i, j)) in edge.iter().enumerate() {
        l[(i, j)] = x[e];
        l[(j, i)] = x[e];
        l[(i, i)] -= x[e];
        l[(j, j)] -= x[e];
    }
    l
}

/// Random symmetric matrix with entries scaled to `[-scale, scale]`.
pub fn random_symmetric(m: usize, scale: f64, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale);
    (&a + a.transpose()) * 0.5
}

/// Random connected weighted graph on `m` buses: a random spanning tree plus
/// extra edges, weights uniform in `[0.3, 1.8)`.
pub fn random_connected_graph(
    m: usize,
    extra_edges: usize,
    rng: &mut ChaCha12Rng,
) -> WeightedGraph {
    let mut branches: Vec<(usize, usize, f64)> = Vec::new();
    let weight = |rng: &mut ChaCha12Rng| 0.3 + 1.5 * rng.random::<f64>();
    for v in 2..=m {
        let parent = 1 + rng.random_range(0..v - 1);
        branches.push((parent, v, weight(rng)));
    }
    let mut attempts = 0;
    let mut added = 0;
    while added < extra_edges && attempts < 50 {
        attempts += 1;
        let a = 1 + rng.random_range(0..m);
        let b = 1 + rng.random_range(0..m);
        if a == b {
            continue;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if branches.iter().any(|&(x, y, _)| (x, y) == (lo, hi)) {
            continue;
        }
        branches.push((lo, hi, weight(rng)));
        added += 1;
    }
    WeightedGraph::new(m, branches).expect("construction is valid by design")
}

/// Random symmetric positive-definite matrix `A^T A + 0.1 I`, scaled.
pub fn random_spd(n: usize, scale: f64, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    (a.transpose() * &a + DMatrix::<f64>::identity(n, n) * 0.1) * scale
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    values[values.len() / 2]
}

/// Path to the bundled IEEE-14 case file.
pub fn ieee14_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases/ieee14.case")
}

pub fn ieee14_pair() -> graph::LaplacianPair {
    let g = graph::load_case(ieee14_path()).expect("bundled case parses");
    graph::laplacian_from_graph(&g).expect("IEEE-14 is connected")
}
