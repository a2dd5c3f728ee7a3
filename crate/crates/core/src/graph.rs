//! Graph and Laplacian data model: construction, validation, generation,
//! case-file ingestion, and topology-classification metrics.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph is disconnected")]
    DisconnectedGraph,
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("failed to generate a connected graph after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("invalid branch at line {line}: reactance must be positive, got {reactance}")]
    InvalidBranch { line: usize, reactance: f64 },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}

/// An undirected branch between two 1-indexed buses with positive susceptance
/// in p.u.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
}

/// Bus set plus undirected branches with positive susceptances.
///
/// Branches are stored with `from < to`, lexicographically sorted, without
/// duplicates. Buses are 1-indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    bus_count: usize,
    branches: Vec<Branch>,
}

impl WeightedGraph {
    /// Build a graph, normalizing branch orientation and ordering.
    ///
    /// Rejects self-loops, non-positive susceptances, out-of-range buses and
    /// duplicate branches.
    pub fn new(bus_count: usize, branches: Vec<(usize, usize, f64)>) -> Result<Self, GraphError> {
        if bus_count < 2 {
            return Err(GraphError::InvalidGraph(format!(
                "need at least 2 buses, got {bus_count}"
            )));
        }
        let mut normalized = Vec::with_capacity(branches.len());
        for (a, b, susceptance) in branches {
            if a == b {
                return Err(GraphError::InvalidGraph(format!("self-loop at bus {a}")));
            }
            if a == 0 || b == 0 || a > bus_count || b > bus_count {
                return Err(GraphError::InvalidGraph(format!(
                    "branch ({a},{b}) outside buses 1..={bus_count}"
                )));
            }
            if !susceptance.is_finite() || susceptance <= 0.0 {
                return Err(GraphError::InvalidGraph(format!(
                    "branch ({a},{b}) has non-positive susceptance {susceptance}"
                )));
            }
            let (from, to) = if a < b { (a, b) } else { (b, a) };
            normalized.push(Branch {
                from,
                to,
                susceptance,
            });
        }
        normalized.sort_by_key(|b| (b.from, b.to));
        for w in normalized.windows(2) {
            if w[0].from == w[1].from && w[0].to == w[1].to {
                return Err(GraphError::InvalidGraph(format!(
                    "duplicate branch ({},{})",
                    w[0].from, w[0].to
                )));
            }
        }
        Ok(Self {
            bus_count,
            branches: normalized,
        })
    }

    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// Connectivity check via union-find on branches.
    pub fn is_connected(&self) -> bool {
        let mut uf = UnionFind::new(self.bus_count);
        for b in &self.branches {
            uf.union(b.from - 1, b.to - 1);
        }
        uf.component_count() == 1
    }

    /// Scale every susceptance by `factor`.
    fn scaled(&self, factor: f64) -> Self {
        let branches = self
            .branches
            .iter()
            .map(|b| Branch {
                susceptance: b.susceptance * factor,
                ..*b
            })
            .collect();
        Self {
            bus_count: self.bus_count,
            branches,
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }

    fn component_count(&mut self) -> usize {
        let n = self.parent.len();
        let mut roots: Vec<usize> = (0..n).map(|i| self.find(i)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }
}

/// Connectivity of an arbitrary symmetric support pattern: buses `i`, `j` are
/// adjacent when `|m[(i,j)]| > tol` for off-diagonal `(i,j)`.
pub fn offdiag_support_connected(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if m[(i, j)].abs() > tol || m[(j, i)].abs() > tol {
                uf.union(i, j);
            }
        }
    }
    uf.component_count() == 1
}

/// The reduction operator `U = [-1^T; I]` of size `M x (M-1)`, its
/// pseudo-inverse, and the noise-shape product `U^+ (U^+)^T` they induce.
///
/// The reference bus is bus 1: the reduced Laplacian removes the first
/// row and column.
#[derive(Debug, Clone)]
pub struct Reduction {
    bus_count: usize,
    u: DMatrix<f64>,
    u_pinv: DMatrix<f64>,
    noise_shape: DMatrix<f64>,
}

impl Reduction {
    pub fn new(bus_count: usize) -> Self {
        assert!(bus_count >= 2, "reduction needs at least 2 buses");
        let r = bus_count - 1;
        let mut u = DMatrix::zeros(bus_count, r);
        for j in 0..r {
            u[(0, j)] = -1.0;
            u[(j + 1, j)] = 1.0;
        }
        // (U^T U)^{-1} = I - (1/M) 11^T in closed form, so U^+ = (I - 11^T/M) U^T
        // and U^+ (U^+)^T = I - 11^T/M.
        let m = bus_count as f64;
        let mut gram_inv = DMatrix::from_element(r, r, -1.0 / m);
        for i in 0..r {
            gram_inv[(i, i)] += 1.0;
        }
        let u_pinv = &gram_inv * u.transpose();
        Self {
            bus_count,
            u,
            u_pinv,
            noise_shape: gram_inv,
        }
    }

    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    pub fn reduced_dim(&self) -> usize {
        self.bus_count - 1
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn u_pinv(&self) -> &DMatrix<f64> {
        &self.u_pinv
    }

    /// `U^+ (U^+)^T`, the covariance shape of the reduced noise.
    pub fn noise_shape(&self) -> &DMatrix<f64> {
        &self.noise_shape
    }

    /// `U A U^T`, lifting a reduced matrix back to bus coordinates.
    pub fn expand(&self, reduced: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
        let r = self.reduced_dim();
        if reduced.nrows() != r || reduced.ncols() != r {
            return Err(GraphError::ShapeMismatch {
                expected: format!("{r}x{r}"),
                found: format!("{}x{}", reduced.nrows(), reduced.ncols()),
            });
        }
        Ok(&self.u * reduced * self.u.transpose())
    }

    /// `U^+ A (U^+)^T`, pushing a bus-coordinate covariance down to reduced
    /// coordinates.
    pub fn reduce_covariance(&self, full: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
        let m = self.bus_count;
        if full.nrows() != m || full.ncols() != m {
            return Err(GraphError::ShapeMismatch {
                expected: format!("{m}x{m}"),
                found: format!("{}x{}", full.nrows(), full.ncols()),
            });
        }
        Ok(&self.u_pinv * full * self.u_pinv.transpose())
    }
}

/// Full Laplacian, its first-order reduction, and the cached reduction
/// operator.
#[derive(Debug, Clone)]
pub struct LaplacianPair {
    laplacian: DMatrix<f64>,
    reduced: DMatrix<f64>,
    reduction: Reduction,
}

impl LaplacianPair {
    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn reduced(&self) -> &DMatrix<f64> {
        &self.reduced
    }

    pub fn reduction(&self) -> &Reduction {
        &self.reduction
    }

    pub fn bus_count(&self) -> usize {
        self.reduction.bus_count()
    }
}

/// Build the Laplacian pair of a connected weighted graph.
///
/// Off-diagonal `(m,k)` is `-b_{m,k}` for a branch, the diagonal holds the sum
/// of incident susceptances.
pub fn laplacian_from_graph(g: &WeightedGraph) -> Result<LaplacianPair, GraphError> {
    if !g.is_connected() {
        return Err(GraphError::DisconnectedGraph);
    }
    let m = g.bus_count();
    let mut l = DMatrix::zeros(m, m);
    for b in g.branches() {
        let (i, j) = (b.from - 1, b.to - 1);
        l[(i, j)] -= b.susceptance;
        l[(j, i)] -= b.susceptance;
        l[(i, i)] += b.susceptance;
        l[(j, j)] += b.susceptance;
    }
    let reduced = reduce_laplacian(&l)?;
    Ok(LaplacianPair {
        laplacian: l,
        reduced,
        reduction: Reduction::new(m),
    })
}

/// Drop the first row and column of a zero-row-sum matrix.
pub fn reduce_laplacian(l: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
    let m = l.nrows();
    if l.ncols() != m || m < 2 {
        return Err(GraphError::ShapeMismatch {
            expected: "square, at least 2x2".to_string(),
            found: format!("{}x{}", m, l.ncols()),
        });
    }
    Ok(l.view((1, 1), (m - 1, m - 1)).clone_owned())
}

/// Lift a reduced Laplacian back to the full `M x M` matrix via `U L~ U^T`.
pub fn expand_laplacian(reduced: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
    let r = reduced.nrows();
    if reduced.ncols() != r {
        return Err(GraphError::ShapeMismatch {
            expected: "square".to_string(),
            found: format!("{}x{}", r, reduced.ncols()),
        });
    }
    Reduction::new(r + 1).expand(reduced)
}

/// Property report for a candidate Laplacian.
///
/// `p1` through `p4` follow the reduced-Laplacian properties (full rank, PSD,
/// nonpositive off-diagonals, diagonal dominance); `null_space` checks
/// `L 1 = 0`; `p5` reports the off-diagonal zero-pseudonorm of the reduced
/// matrix against its maximum `(M-1)(M-2)`.
#[derive(Debug, Clone)]
pub struct LaplacianReport {
    pub null_space: bool,
    pub p1_full_rank: bool,
    pub p2_psd: bool,
    pub p3_nonpositive_offdiag: bool,
    pub p4_diag_dominant: bool,
    pub p5_offdiag_nonzeros: usize,
    pub p5_offdiag_capacity: usize,
    pub violations: Vec<String>,
}

impl LaplacianReport {
    pub fn passes_p1_to_p4(&self) -> bool {
        self.null_space
            && self.p1_full_rank
            && self.p2_psd
            && self.p3_nonpositive_offdiag
            && self.p4_diag_dominant
    }
}

impl fmt::Display for LaplacianReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "null space (L*1 = 0):        {}", self.null_space)?;
        writeln!(f, "P.1 full-rank reduction:     {}", self.p1_full_rank)?;
        writeln!(f, "P.2 positive semidefinite:   {}", self.p2_psd)?;
        writeln!(
            f,
            "P.3 nonpositive off-diagonal: {}",
            self.p3_nonpositive_offdiag
        )?;
        writeln!(f, "P.4 diagonally dominant:     {}", self.p4_diag_dominant)?;
        writeln!(
            f,
            "P.5 off-diagonal nonzeros:   {} of {}",
            self.p5_offdiag_nonzeros, self.p5_offdiag_capacity
        )?;
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        Ok(())
    }
}

/// Check a square symmetric matrix against the Laplacian properties.
pub fn validate_laplacian(l: &DMatrix<f64>, tol: f64) -> LaplacianReport {
    let m = l.nrows();
    assert_eq!(m, l.ncols(), "validate_laplacian requires a square matrix");
    let scale = l.norm().max(1.0);
    let mut violations = Vec::new();

    let mut null_space = true;
    for i in 0..m {
        let row_sum: f64 = l.row(i).sum();
        if row_sum.abs() > tol * scale {
            null_space = false;
            violations.push(format!("row {} sums to {row_sum:.3e}", i + 1));
        }
    }

    let mut p3 = true;
    for i in 0..m {
        for j in 0..m {
            if i != j && l[(i, j)] > tol * scale {
                p3 = false;
                violations.push(format!(
                    "off-diagonal ({},{}) = {:.3e} > 0",
                    i + 1,
                    j + 1,
                    l[(i, j)]
                ));
            }
        }
    }

    let reduced = l.view((1, 1), (m - 1, m - 1)).clone_owned();

    let mut p4 = true;
    for k in 0..m - 1 {
        let off: f64 = (0..m - 1)
            .filter(|&j| j != k)
            .map(|j| reduced[(k, j)].abs())
            .sum();
        if off > reduced[(k, k)].abs() + tol * scale {
            p4 = false;
            violations.push(format!(
                "reduced row {} not diagonally dominant: {off:.3e} > {:.3e}",
                k + 1,
                reduced[(k, k)].abs()
            ));
        }
    }

    let (p1, p2) = match crate::numerics::sym_eig(&crate::numerics::symmetrize(l)) {
        Ok(se) => {
            let p2 = se.min_eigenvalue() >= -tol * se.spectral_norm().max(1.0);
            if !p2 {
                violations.push(format!("negative eigenvalue {:.3e}", se.min_eigenvalue()));
            }
            let p1 = match crate::numerics::sym_eig(&crate::numerics::symmetrize(&reduced)) {
                Ok(ser) => {
                    let full_rank = ser.min_eigenvalue() > tol * ser.spectral_norm().max(1.0);
                    if !full_rank {
                        violations.push(format!(
                            "reduced matrix rank-deficient: smallest eigenvalue {:.3e}",
                            ser.min_eigenvalue()
                        ));
                    }
                    full_rank
                }
                Err(_) => false,
            };
            (p1, p2)
        }
        Err(_) => (false, false),
    };

    let r = m - 1;
    let nnz = (0..r)
        .flat_map(|i| (0..r).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && reduced[(i, j)].abs() > tol * scale)
        .count();

    LaplacianReport {
        null_space,
        p1_full_rank: p1,
        p2_psd: p2,
        p3_nonpositive_offdiag: p3,
        p4_diag_dominant: p4,
        p5_offdiag_nonzeros: nnz,
        p5_offdiag_capacity: r * r.saturating_sub(1),
        violations,
    }
}

/// Uniform susceptance distribution on `[lo, hi)` used by the generator.
#[derive(Debug, Clone, Copy)]
pub struct WeightRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for WeightRange {
    fn default() -> Self {
        // Positive weights on both sides of 1 keep P.1-P.4 valid; the model
        // itself does not prescribe a distribution.
        Self { lo: 0.5, hi: 1.5 }
    }
}

/// Watts-Strogatz small-world graph with weighted branches.
///
/// Starts from a ring lattice where every bus connects to `mean_degree / 2`
/// neighbors on each side, rewires each lattice edge's far endpoint with
/// probability `rewire_prob`, and draws susceptances from `weights`.
/// Regenerates with an incremented sub-seed until connected (at most 100
/// attempts). When `target_frobenius` is given, susceptances are rescaled so
/// the Laplacian's Frobenius norm matches it.
pub fn watts_strogatz(
    bus_count: usize,
    mean_degree: usize,
    rewire_prob: f64,
    weights: WeightRange,
    target_frobenius: Option<f64>,
    seed: u64,
) -> Result<WeightedGraph, GraphError> {
    if mean_degree == 0 || !mean_degree.is_multiple_of(2) || mean_degree >= bus_count {
        return Err(GraphError::InvalidGraph(format!(
            "mean degree {mean_degree} must be even, positive and below {bus_count}"
        )));
    }
    if !(0.0..=1.0).contains(&rewire_prob) {
        return Err(GraphError::InvalidGraph(format!(
            "rewire probability {rewire_prob} outside [0,1]"
        )));
    }
    const MAX_ATTEMPTS: usize = 100;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let mut present = vec![vec![false; bus_count]; bus_count];
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let half = mean_degree / 2;
        for (i, j) in (0..bus_count).flat_map(|i| (1..=half).map(move |j| (i, j))) {
            let k = (i + j) % bus_count;
            if !present[i][k] {
                present[i][k] = true;
                present[k][i] = true;
                edges.push((i, k));
            }
        }
        // Rewire the far endpoint of each lattice edge with probability beta.
        for edge in edges.iter_mut() {
            if rng.random::<f64>() < rewire_prob {
                let (a, b) = *edge;
                let mut candidates: Vec<usize> = (0..bus_count)
                    .filter(|&c| c != a && !present[a][c])
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let pick = candidates.remove(rng.random_range(0..candidates.len()));
                present[a][b] = false;
                present[b][a] = false;
                present[a][pick] = true;
                present[pick][a] = true;
                *edge = (a, pick);
            }
        }
        let branches: Vec<(usize, usize, f64)> = edges
            .iter()
            .map(|&(a, b)| {
                let w = weights.lo + (weights.hi - weights.lo) * rng.random::<f64>();
                (a + 1, b + 1, w)
            })
            .collect();
        let graph = WeightedGraph::new(bus_count, branches)?;
        if !graph.is_connected() {
            continue;
        }
        if let Some(target) = target_frobenius {
            let lp = laplacian_from_graph(&graph)?;
            let norm = lp.laplacian().norm();
            return Ok(graph.scaled(target / norm));
        }
        return Ok(graph);
    }
    Err(GraphError::GenerationFailed {
        attempts: MAX_ATTEMPTS,
    })
}

/// F-score of the estimated edge set against the true edge set.
///
/// An edge is present when the off-diagonal magnitude exceeds `edge_tol`;
/// counts run over unordered pairs. Returns 1 when both edge sets are empty.
pub fn fscore(
    l_hat: &DMatrix<f64>,
    l_true: &DMatrix<f64>,
    edge_tol: f64,
) -> Result<f64, GraphError> {
    if l_hat.shape() != l_true.shape() || l_hat.nrows() != l_hat.ncols() {
        return Err(GraphError::ShapeMismatch {
            expected: format!("{}x{} square", l_true.nrows(), l_true.ncols()),
            found: format!("{}x{}", l_hat.nrows(), l_hat.ncols()),
        });
    }
    let m = l_hat.nrows();
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for i in 0..m {
        for j in (i + 1)..m {
            let est = l_hat[(i, j)].abs() > edge_tol;
            let truth = l_true[(i, j)].abs() > edge_tol;
            match (est, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2.0 * tp as f64 + fn_ as f64 + fp as f64))
}

/// Default edge-presence tolerance for [`fscore`]; estimators emit exact zeros
/// after thresholding, so any small positive value works.
pub const DEFAULT_EDGE_TOL: f64 = 1e-6;

/// Parse a case file into a weighted graph.
///
/// Format: optional `buses: M` header, a `branch:` section header, then
/// whitespace-separated rows `fbus tbus r x`. Lines starting with `#` are
/// ignored. DC susceptance is `b = 1/x` (branches are treated as lossless,
/// so `r` is read but unused) and parallel branches merge by susceptance
/// addition.
pub fn load_case(path: impl AsRef<Path>) -> Result<WeightedGraph, GraphError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| GraphError::ParseError {
        line: 0,
        message: format!("cannot read {}: {e}", path.as_ref().display()),
    })?;
    parse_case(&text)
}

/// Parse the case format from a string; see [`load_case`].
pub fn parse_case(text: &str) -> Result<WeightedGraph, GraphError> {
    let mut bus_count: Option<usize> = None;
    let mut in_branch_section = false;
    let mut raw: Vec<(usize, usize, f64, usize)> = Vec::new();
    let mut max_bus = 0usize;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("buses:") {
            bus_count = Some(rest.trim().parse().map_err(|_| GraphError::ParseError {
                line: line_no,
                message: format!("invalid bus count '{}'", rest.trim()),
            })?);
            continue;
        }
        if line == "branch:" {
            in_branch_section = true;
            continue;
        }
        if !in_branch_section {
            return Err(GraphError::ParseError {
                line: line_no,
                message: format!("unexpected line before 'branch:' section: '{line}'"),
            });
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(GraphError::ParseError {
                line: line_no,
                message: format!("expected 'fbus tbus r x', got {} fields", fields.len()),
            });
        }
        let fbus: usize = fields[0].parse().map_err(|_| GraphError::ParseError {
            line: line_no,
            message: format!("invalid fbus '{}'", fields[0]),
        })?;
        let tbus: usize = fields[1].parse().map_err(|_| GraphError::ParseError {
            line: line_no,
            message: format!("invalid tbus '{}'", fields[1]),
        })?;
        let _r: f64 = fields[2].parse().map_err(|_| GraphError::ParseError {
            line: line_no,
            message: format!("invalid resistance '{}'", fields[2]),
        })?;
        let x: f64 = fields[3].parse().map_err(|_| GraphError::ParseError {
            line: line_no,
            message: format!("invalid reactance '{}'", fields[3]),
        })?;
        if x <= 0.0 {
            return Err(GraphError::InvalidBranch {
                line: line_no,
                reactance: x,
            });
        }
        max_bus = max_bus.max(fbus).max(tbus);
        raw.push((fbus, tbus, 1.0 / x, line_no));
    }

    let bus_count = bus_count.unwrap_or(max_bus);
    if max_bus > bus_count {
        return Err(GraphError::ParseError {
            line: 0,
            message: format!("branch references bus {max_bus} beyond declared {bus_count}"),
        });
    }

    // Merge parallel branches: susceptances add.
    let mut merged: Vec<(usize, usize, f64)> = Vec::new();
    for (a, b, s, _) in raw {
        let key = if a < b { (a, b) } else { (b, a) };
        if let Some(existing) = merged.iter_mut().find(|(x, y, _)| (*x, *y) == key) {
            existing.2 += s;
        } else {
            merged.push((key.0, key.1, s));
        }
    }
    WeightedGraph::new(bus_count, merged)
}
