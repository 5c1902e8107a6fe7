//! Leading eigenpairs of symmetric operators, separation diagnostics,
//! spectral bisection, and brute-force oracles for small instances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{dot, norm2, symmetric_eigen, Matrix};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::powering::PowerOperator;
use crate::rng::SeedStream;
use crate::sparse::CsrMatrix;

/// A real symmetric linear map that can be applied to a block of vectors.
pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;

    /// `M · X` for an `n × p` block `X`.
    fn apply_block(&self, x: &Matrix) -> Matrix;

    /// Reject inputs that are not exactly symmetric.
    fn check_symmetric(&self) -> Result<()>;
}

impl SymmetricOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_block(&self, x: &Matrix) -> Matrix {
        self.mul_dense(x).expect("block shape matches operator")
    }

    fn check_symmetric(&self) -> Result<()> {
        match self.asymmetry() {
            Some((row, col)) => Err(Error::NotSymmetric { row, col }),
            None => Ok(()),
        }
    }
}

impl SymmetricOperator for Matrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply_block(&self, x: &Matrix) -> Matrix {
        self.matmul(x).expect("block shape matches operator")
    }

    fn check_symmetric(&self) -> Result<()> {
        if self.rows() != self.cols() {
            return Err(Error::Shape(format!(
                "{}x{} is not square",
                self.rows(),
                self.cols()
            )));
        }
        for i in 0..self.rows() {
            for j in 0..i {
                if self[(i, j)] != self[(j, i)] {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(())
    }
}

impl SymmetricOperator for PowerOperator {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn apply_block(&self, x: &Matrix) -> Matrix {
        self.matrix.apply_block(x)
    }

    fn check_symmetric(&self) -> Result<()> {
        self.matrix.check_symmetric()
    }
}

/// `B^power`, applied as repeated products without forming the power.
#[derive(Debug, Clone, Copy)]
pub struct MatrixPower<'a> {
    pub base: &'a CsrMatrix,
    pub power: usize,
}

impl SymmetricOperator for MatrixPower<'_> {
    fn dim(&self) -> usize {
        self.base.nrows()
    }

    fn apply_block(&self, x: &Matrix) -> Matrix {
        let mut y = x.clone();
        for _ in 0..self.power {
            y = self.base.apply_block(&y);
        }
        y
    }

    fn check_symmetric(&self) -> Result<()> {
        self.base.check_symmetric()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-8,
            max_iter: 5000,
            seed: 0,
        }
    }
}

impl EigenOptions {
    pub fn with_seed(self, seed: u64) -> Self {
        EigenOptions { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// Unit norm, sign fixed so that its entries sum to a non-negative value.
    pub vector: Vec<f64>,
}

fn normalize_sign(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    let flip = if s != 0.0 {
        s < 0.0
    } else {
        v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Orthonormalize `cols` in place by modified Gram–Schmidt, run twice.
/// Columns that collapse are replaced by fresh random directions.
fn orthonormalize(cols: &mut [Vec<f64>], rng: &mut impl Rng) {
    let n = cols.first().map_or(0, Vec::len);
    for c in 0..cols.len() {
        let mut attempts = 0;
        loop {
            let before = norm2(&cols[c]);
            for _pass in 0..2 {
                for p in 0..c {
                    let (done, rest) = cols.split_at_mut(c);
                    let h = dot(&done[p], &rest[0]);
                    for (x, q) in rest[0].iter_mut().zip(&done[p]) {
                        *x -= h * q;
                    }
                }
            }
            let after = norm2(&cols[c]);
            if after > 1e-10 * before.max(f64::MIN_POSITIVE) && after > 1e-300 {
                cols[c].iter_mut().for_each(|x| *x /= after);
                break;
            }
            attempts += 1;
            assert!(
                attempts < 100,
                "cannot extend an orthonormal basis in dimension {n}"
            );
            cols[c] = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        }
    }
}

fn to_block(cols: &[Vec<f64>]) -> Matrix {
    Matrix::from_columns(cols).expect("equal-length columns")
}

/// The `m` eigenpairs of largest magnitude, by block subspace iteration with a
/// Rayleigh–Ritz projection each step. Results are sorted by descending
/// `|value|` and each satisfies `‖Mv − λv‖ ≤ tol · max(1, |λ|)`.
pub fn top_eigenpairs(
    op: &dyn SymmetricOperator,
    m: usize,
    opts: &EigenOptions,
) -> Result<Vec<EigenPair>> {
    let n = op.dim();
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "requested {m} eigenpairs of a {n}-dimensional operator"
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {}", opts.tol)));
    }
    op.check_symmetric()?;

    let p = n.min((2 * m).max(m + 10));
    let mut rng = SeedStream::root(opts.seed).stream("eigen").rng();
    let mut basis: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.gen::<f64>() - 0.5).collect())
        .collect();
    orthonormalize(&mut basis, &mut rng);

    let mut worst = f64::INFINITY;
    for _iter in 0..opts.max_iter.max(1) {
        let q = to_block(&basis);
        let z = op.apply_block(&q);
        let mut h = q.t_matmul(&z)?;
        for i in 0..p {
            for j in 0..i {
                let s = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = s;
                h[(j, i)] = s;
            }
        }
        let (vals, u) = symmetric_eigen(&h);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()).then(a.cmp(&b)));
        let mut u_sorted = Matrix::zeros(p, p);
        for (c, &k) in order.iter().enumerate() {
            for r in 0..p {
                u_sorted[(r, c)] = u[(r, k)];
            }
        }
        let ritz = q.matmul(&u_sorted)?;
        let mritz = z.matmul(&u_sorted)?;

        worst = 0.0f64;
        let mut converged = true;
        for c in 0..m {
            let lam = vals[order[c]];
            let res = (0..n)
                .map(|i| {
                    let d = mritz[(i, c)] - lam * ritz[(i, c)];
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            let rel = res / lam.abs().max(1.0);
            worst = worst.max(rel);
            if rel > opts.tol {
                converged = false;
            }
        }
        if converged {
            return Ok((0..m)
                .map(|c| {
                    let mut v = ritz.column(c);
                    let nv = norm2(&v);
                    v.iter_mut().for_each(|x| *x /= nv);
                    normalize_sign(&mut v);
                    EigenPair {
                        value: vals[order[c]],
                        vector: v,
                    }
                })
                .collect());
        }
        basis = (0..p).map(|c| mritz.column(c)).collect();
        orthonormalize(&mut basis, &mut rng);
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: worst,
    })
}

/// Leading-eigenvalue summary of one operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// `|λ1| / |λ2|`.
    pub gap12: f64,
    /// `|λ2| / |λ3|`.
    pub gap23: f64,
    pub r: usize,
    pub theta_l1: f64,
    pub n: usize,
    pub seed: u64,
}

/// Separation report for any symmetric operator; `r` and `theta_l1` are
/// recorded as given.
pub fn separation_of(
    op: &dyn SymmetricOperator,
    r: usize,
    theta_l1: f64,
    opts: &EigenOptions,
) -> Result<SeparationReport> {
    let n = op.dim();
    let pairs = if n == 0 {
        Vec::new()
    } else {
        top_eigenpairs(op, n.min(3), opts)?
    };
    let lam = |k: usize| pairs.get(k).map_or(0.0, |p| p.value);
    let (l1, l2, l3) = (lam(0), lam(1), lam(2));
    Ok(SeparationReport {
        lambda1: l1,
        lambda2: l2,
        lambda3: l3,
        gap12: l1.abs() / l2.abs(),
        gap23: l2.abs() / l3.abs(),
        r,
        theta_l1,
        n,
        seed: opts.seed,
    })
}

pub fn separation_report(op: &PowerOperator, opts: &EigenOptions) -> Result<SeparationReport> {
    separation_of(op, op.order(), op.theta.l1_norm(), opts)
}

/// Spectral bisection: the sign of the eigenvector belonging to the
/// second-largest eigenvalue in magnitude (zeros map to `+1`).
pub fn recover_communities(op: &dyn SymmetricOperator, opts: &EigenOptions) -> Result<Vec<i8>> {
    let pairs = top_eigenpairs(op, 2, opts)?;
    Ok(pairs[1]
        .vector
        .iter()
        .map(|&x| if x < 0.0 { -1 } else { 1 })
        .collect())
}

/// `|⟨labels, σ⟩| / n`: agreement with a ±1 truth, insensitive to a global flip.
pub fn overlap(labels: &[i8], sigma: &[f64]) -> f64 {
    assert_eq!(labels.len(), sigma.len());
    if labels.is_empty() {
        return 0.0;
    }
    let s: f64 = labels
        .iter()
        .zip(sigma)
        .map(|(&l, &t)| f64::from(l) * t)
        .sum();
    s.abs() / labels.len() as f64
}

/// `D^{-1/2} A D^{-1/2}` of the plain graph; isolated nodes give zero rows.
pub fn normalized_adjacency(graph: &Graph) -> CsrMatrix {
    let d: Vec<f64> = graph
        .degrees()
        .into_iter()
        .map(|k| if k == 0 { 0.0 } else { 1.0 / (k as f64).sqrt() })
        .collect();
    graph
        .adjacency_matrix()
        .map_entries(|i, j, v| v * d[i] * d[j])
}

pub const SAW_NODE_CAP: usize = 64;
pub const SAW_MAX_LENGTH: usize = 6;

/// Counts of self-avoiding paths of exactly `k` edges between every pair of
/// distinct nodes, by exhaustive search. Refused above [`SAW_NODE_CAP`] nodes
/// or [`SAW_MAX_LENGTH`] edges.
pub fn self_avoiding_count_matrix(graph: &Graph, k: usize) -> Result<Vec<Vec<u64>>> {
    self_avoiding_count_matrix_capped(graph, k, SAW_NODE_CAP)
}

pub fn self_avoiding_count_matrix_capped(
    graph: &Graph,
    k: usize,
    node_cap: usize,
) -> Result<Vec<Vec<u64>>> {
    let n = graph.n();
    if n > node_cap {
        return Err(Error::OracleRefused(format!(
            "{n} nodes exceeds the exhaustive-search cap of {node_cap}"
        )));
    }
    if k == 0 || k > SAW_MAX_LENGTH {
        return Err(Error::OracleRefused(format!(
            "path length {k} outside 1..={SAW_MAX_LENGTH}"
        )));
    }
    fn walk(g: &Graph, u: usize, left: usize, seen: &mut [bool], row: &mut [u64]) {
        if left == 0 {
            row[u] += 1;
            return;
        }
        for &w in g.neighbors(u) {
            let w = w as usize;
            if !seen[w] {
                seen[w] = true;
                walk(g, w, left - 1, seen, row);
                seen[w] = false;
            }
        }
    }
    let mut out = vec![vec![0u64; n]; n];
    let mut seen = vec![false; n];
    for (s, row) in out.iter_mut().enumerate() {
        seen[s] = true;
        walk(graph, s, k, &mut seen, row);
        seen[s] = false;
        row[s] = 0;
    }
    Ok(out)
}

/// Constructive two-layer weights aligning hidden units with two leading
/// eigenvectors of a rank-2 operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop5Weights {
    /// `d × 2`, least-squares solution of `X · W1 = [φ1 φ2]`.
    pub w1: Matrix,
    /// `[[−1/(λ1λ2), 1/(λ1λ2)], [2/λ2², −2/λ2²]]`.
    pub w2: Matrix,
    /// Largest relative residual `‖X w − φ‖ / ‖φ‖` over the two columns.
    pub residual: f64,
}

pub const PROP5_MIN_EIGENVALUE: f64 = 1e-8;
pub const PROP5_RESIDUAL_TOL: f64 = 1e-6;

/// Least squares `min ‖X w − b‖` for each column of `b`, via a modified
/// Gram–Schmidt QR of `X`. Numerically dependent columns get zero weight.
pub fn least_squares(x: &Matrix, b: &[Vec<f64>]) -> Result<Matrix> {
    let (n, d) = x.shape();
    if b.iter().any(|c| c.len() != n) {
        return Err(Error::Shape(format!(
            "right-hand side length differs from {n} rows"
        )));
    }
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    let mut r = Matrix::zeros(d, d);
    for j in 0..d {
        let mut v = x.column(j);
        let norm0 = norm2(&v);
        let mut coef = vec![0.0; q.len()];
        for _pass in 0..2 {
            for (p, qp) in q.iter().enumerate() {
                let h = dot(qp, &v);
                coef[p] += h;
                for (a, b) in v.iter_mut().zip(qp) {
                    *a -= h * b;
                }
            }
        }
        let nv = norm2(&v);
        if norm0 == 0.0 || nv <= 1e-12 * norm0 {
            continue;
        }
        let col = kept.len();
        for (p, c) in coef.into_iter().enumerate() {
            r[(p, col)] = c;
        }
        r[(col, col)] = nv;
        v.iter_mut().for_each(|a| *a /= nv);
        q.push(v);
        kept.push(j);
    }
    let k = kept.len();
    let mut w = Matrix::zeros(d, b.len());
    for (c, rhs) in b.iter().enumerate() {
        let mut y: Vec<f64> = q.iter().map(|qp| dot(qp, rhs)).collect();
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| r[(i, j)] * y[j]).sum();
            y[i] = (y[i] - s) / r[(i, i)];
        }
        for (i, &j) in kept.iter().enumerate() {
            w[(j, c)] = y[i];
        }
    }
    Ok(w)
}

pub fn prop5_weights(
    phi1: &[f64],
    phi2: &[f64],
    lambda1: f64,
    lambda2: f64,
    x: &Matrix,
) -> Result<Prop5Weights> {
    if !(lambda1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "λ1 = {lambda1} must be positive"
        )));
    }
    if !(lambda2 >= PROP5_MIN_EIGENVALUE) {
        return Err(Error::IllConditioned(format!(
            "λ2 = {lambda2} below {PROP5_MIN_EIGENVALUE}"
        )));
    }
    let targets = vec![phi1.to_vec(), phi2.to_vec()];
    let w1 = least_squares(x, &targets)?;
    let fit = x.matmul(&w1)?;
    let residual = targets
        .iter()
        .enumerate()
        .map(|(c, t)| {
            let err: Vec<f64> = t.iter().enumerate().map(|(i, v)| fit[(i, c)] - v).collect();
            norm2(&err) / norm2(t).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);
    if residual > PROP5_RESIDUAL_TOL {
        log::warn!("eigenvectors are not in the feature span: relative residual {residual:.3e}");
    }
    let a = 1.0 / (lambda1 * lambda2);
    let b = 2.0 / (lambda2 * lambda2);
    let w2 = Matrix::from_rows(&[vec![-a, a], vec![b, -b]])?;
    Ok(Prop5Weights { w1, w2, residual })
}

/// `Â · ReLU(Â X W1) · W2`.
pub fn two_layer_forward(
    a: &dyn SymmetricOperator,
    x: &Matrix,
    w1: &Matrix,
    w2: &Matrix,
) -> Result<Matrix> {
    let h = a.apply_block(&x.matmul(w1)?).map(|v| v.max(0.0));
    Ok(a.apply_block(&h.matmul(w2)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(v.len(), v.len());
        for (i, &x) in v.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    #[test]
    fn identity_eigenvalues() {
        let pairs = top_eigenpairs(&Matrix::identity(5), 2, &EigenOptions::default()).unwrap();
        for p in &pairs {
            assert!((p.value - 1.0).abs() < 1e-12);
            assert!((norm2(&p.vector) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn diagonal_magnitude_order() {
        let pairs = top_eigenpairs(&diag(&[3.0, -2.0, 1.0]), 3, &EigenOptions::default()).unwrap();
        let vals: Vec<f64> = pairs.iter().map(|p| p.value).collect();
        for (v, e) in vals.iter().zip([3.0, -2.0, 1.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        for (k, p) in pairs.iter().enumerate() {
            assert!((p.vector[k].abs() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut m = Matrix::identity(3);
        m[(0, 1)] = 1.0;
        assert!(matches!(
            top_eigenpairs(&m, 1, &EigenOptions::default()),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(top_eigenpairs(&Matrix::identity(3), 4, &EigenOptions::default()).is_err());
        assert!(top_eigenpairs(&Matrix::identity(3), 0, &EigenOptions::default()).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        // Nearly tied magnitudes beyond the block make one iteration insufficient.
        let v: Vec<f64> = (0..40).map(|i| 1.0 - i as f64 * 1e-3).collect();
        let opts = EigenOptions {
            max_iter: 1,
            ..Default::default()
        };
        assert!(matches!(
            top_eigenpairs(&diag(&v), 3, &opts),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn zero_matrix_report() {
        let rep = separation_of(&Matrix::zeros(4, 4), 1, 0.0, &EigenOptions::default()).unwrap();
        assert_eq!((rep.lambda1, rep.lambda2, rep.lambda3), (0.0, 0.0, 0.0));
        assert!(rep.gap12.is_nan() && rep.gap23.is_nan());
    }

    #[test]
    fn two_cliques_split() {
        let mut edges = Vec::new();
        for base in [0, 5] {
            for i in 0..5 {
                for j in i + 1..5 {
                    edges.push((base + i, base + j));
                }
            }
        }
        let g = Graph::from_edges(10, edges).unwrap().0;
        let labels = recover_communities(&g.adjacency_matrix(), &EigenOptions::default()).unwrap();
        let truth: Vec<f64> = (0..10).map(|i| if i < 5 { 1.0 } else { -1.0 }).collect();
        assert_eq!(overlap(&labels, &truth), 1.0);
    }

    #[test]
    fn saw_small_cases() {
        let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap().0;
        let adj: Vec<Vec<u64>> = (0..3)
            .map(|i| (0..3).map(|j| u64::from(i != j)).collect())
            .collect();
        assert_eq!(self_avoiding_count_matrix(&tri, 1).unwrap(), adj);
        assert_eq!(self_avoiding_count_matrix(&tri, 2).unwrap(), adj);
        let p3 = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap().0;
        let m = self_avoiding_count_matrix(&p3, 2).unwrap();
        assert_eq!(m, vec![vec![0, 0, 1], vec![0, 0, 0], vec![1, 0, 0]]);
        assert!(self_avoiding_count_matrix(&Graph::empty(65), 1).is_err());
        assert!(self_avoiding_count_matrix(&p3, 7).is_err());
    }

    #[test]
    fn prop5_closed_form() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let w = prop5_weights(&[s, s], &[s, -s], 1.0, 1.0, &Matrix::identity(2)).unwrap();
        assert_eq!(
            w.w2,
            Matrix::from_rows(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap()
        );
        assert!(w.residual < 1e-12);
        assert!(matches!(
            prop5_weights(&[s, s], &[s, -s], 1.0, 1e-9, &Matrix::identity(2)),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn least_squares_rank_deficient() {
        // Third column duplicates the first.
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
        ])
        .unwrap();
        let b = vec![vec![2.0, 3.0, 5.0]];
        let w = least_squares(&x, &b).unwrap();
        let fit = x.matmul(&w).unwrap();
        for i in 0..3 {
            assert!((fit[(i, 0)] - b[0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_adjacency_regular() {
        let g = Graph::from_edges(4, (0..4).map(|i| (i, (i + 1) % 4)))
            .unwrap()
            .0;
        let pairs = top_eigenpairs(&normalized_adjacency(&g), 1, &EigenOptions::default()).unwrap();
        assert!((pairs[0].value.abs() - 1.0).abs() < 1e-10);
    }
}
