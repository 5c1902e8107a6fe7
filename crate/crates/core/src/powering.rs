//! Distance-k adjacency families, powered graphs, feature-driven
//! sparsification, and the variable power operators built from them.
//!
//! For a graph `G` and order `r`, `A_k` marks node pairs at shortest-path
//! distance exactly `k` (`A_0` is the identity support). The supports are
//! disjoint and their union is the support of `(I + A)^r`. The variable power
//! operator is `Σ_k θ_k Ā_k`, where `Ā_k ⊆ A_k` is the optionally pruned
//! layer. The VPN convolution normalizes it with the *original* degrees:
//! `D^{-1/2} (I + Σ θ_k Ā_k) D^{-1/2}`, `D_ii = 1 + deg(i)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BfsScratch, Graph};
use crate::sparse::{CsrMatrix, Pattern};

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceAdjacencyFamily {
    layers: Vec<Pattern>,
    pruned: Option<Vec<Pattern>>,
}

impl DistanceAdjacencyFamily {
    pub fn order(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn n(&self) -> usize {
        self.layers[0].n()
    }

    /// Exact distance-`k` support.
    pub fn exact(&self, k: usize) -> &Pattern {
        &self.layers[k]
    }

    /// Pruned distance-`k` support if sparsified, otherwise the exact one.
    pub fn layer(&self, k: usize) -> &Pattern {
        match &self.pruned {
            Some(p) => &p[k],
            None => &self.layers[k],
        }
    }

    pub fn is_pruned(&self) -> bool {
        self.pruned.is_some()
    }

    /// Original-graph degree of node `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.layers[1].row(i).len()
    }

    /// Drop any pruning and return the exact family.
    pub fn unpruned(mut self) -> Self {
        self.pruned = None;
        self
    }
}

fn check_order(r: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::InvalidParameter(
            "power order must be at least 1".into(),
        ));
    }
    if r >= u16::MAX as usize {
        return Err(Error::InvalidParameter(format!(
            "power order {r} too large"
        )));
    }
    Ok(())
}

/// Exact distance-k supports for `k = 0..=r`, one bounded BFS per node.
pub fn distance_adjacency_family(graph: &Graph, r: usize) -> Result<DistanceAdjacencyFamily> {
    check_order(r)?;
    let n = graph.n();
    let per_node: Vec<Vec<Vec<u32>>> = (0..n)
        .into_par_iter()
        .map_init(
            || BfsScratch::new(n),
            |scratch, i| {
                let mut rows = vec![Vec::new(); r + 1];
                scratch.run(graph, &[i], r, |v, d| rows[d as usize].push(v as u32));
                for row in &mut rows {
                    row.sort_unstable();
                }
                rows
            },
        )
        .collect();
    let mut layers: Vec<Vec<Vec<u32>>> = vec![Vec::with_capacity(n); r + 1];
    for rows in per_node {
        for (k, row) in rows.into_iter().enumerate() {
            layers[k].push(row);
        }
    }
    Ok(DistanceAdjacencyFamily {
        layers: layers.into_iter().map(Pattern::from_rows).collect(),
        pruned: None,
    })
}

/// The graph connecting every pair at distance `1..=k`.
pub fn powered_graph(graph: &Graph, k: usize) -> Result<Graph> {
    check_order(k)?;
    let n = graph.n();
    let adj: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map_init(
            || BfsScratch::new(n),
            |scratch, i| {
                let mut row = Vec::new();
                scratch.run(graph, &[i], k, |v, d| {
                    if d > 0 {
                        row.push(v as u32)
                    }
                });
                row.sort_unstable();
                row
            },
        )
        .collect();
    Ok(Graph::from_sorted_lists(adj))
}

/// Feature-space dissimilarity used to rank far edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aloofness {
    /// `1 − cos(x_i, x_j)`; rows with zero norm are maximally aloof (2).
    #[default]
    Cosine,
    Euclidean,
}

impl std::str::FromStr for Aloofness {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Aloofness::Cosine),
            "euclidean" => Ok(Aloofness::Euclidean),
            _ => Err(Error::InvalidParameter(format!("unknown aloofness `{s}`"))),
        }
    }
}

/// Per-node quota of far (distance ≥ 2) edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    KeepAll,
    /// Node `i` nominates `⌈factor · deg(i)⌉` far neighbors.
    Factor(f64),
}

impl Budget {
    pub fn from_factor(f: f64) -> Result<Budget> {
        if f.is_infinite() && f > 0.0 {
            Ok(Budget::KeepAll)
        } else if f.is_finite() && f >= 0.0 {
            Ok(Budget::Factor(f))
        } else {
            Err(Error::InvalidParameter(format!("budget factor {f}")))
        }
    }

    fn quota(self, degree: usize) -> usize {
        match self {
            Budget::KeepAll => usize::MAX,
            Budget::Factor(f) => (f * degree as f64).ceil() as usize,
        }
    }
}

/// Candidate and kept far-edge counts for one degree decile.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DecileStats {
    pub min_degree: usize,
    pub max_degree: usize,
    pub nodes: usize,
    pub candidates: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SparsifyStats {
    pub deciles: Vec<DecileStats>,
    pub far_before: usize,
    pub far_after: usize,
}

fn sparse_dot(a: (&[u32], &[f64]), b: (&[u32], &[f64])) -> f64 {
    let (mut p, mut q, mut s) = (0, 0, 0.0);
    while p < a.0.len() && q < b.0.len() {
        match a.0[p].cmp(&b.0[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                s += a.1[p] * b.1[q];
                p += 1;
                q += 1;
            }
        }
    }
    s
}

struct FeatureGeometry<'a> {
    x: &'a CsrMatrix,
    sq_norms: Vec<f64>,
    kind: Aloofness,
}

impl FeatureGeometry<'_> {
    fn aloofness(&self, i: usize, j: usize) -> f64 {
        let dot = sparse_dot(self.x.row(i), self.x.row(j));
        match self.kind {
            Aloofness::Cosine => {
                let (ni, nj) = (self.sq_norms[i], self.sq_norms[j]);
                if ni == 0.0 || nj == 0.0 {
                    2.0
                } else {
                    1.0 - dot / (ni.sqrt() * nj.sqrt())
                }
            }
            Aloofness::Euclidean => (self.sq_norms[i] + self.sq_norms[j] - 2.0 * dot)
                .max(0.0)
                .sqrt(),
        }
    }
}

/// Prune far edges by feature aloofness.
///
/// Each node ranks its distance-2..r candidates by ascending aloofness (ties
/// to the smaller index) and nominates its first `⌈factor · deg(i)⌉`. A far
/// edge survives if either endpoint nominated it. Distance-0 and distance-1
/// supports are never touched.
pub fn sparsify(
    family: DistanceAdjacencyFamily,
    features: &CsrMatrix,
    phi: Aloofness,
    budget: Budget,
) -> Result<(DistanceAdjacencyFamily, SparsifyStats)> {
    let n = family.n();
    if features.nrows() != n {
        return Err(Error::Shape(format!(
            "{} feature rows for {n} nodes",
            features.nrows()
        )));
    }
    let r = family.order();
    let geo = FeatureGeometry {
        x: features,
        sq_norms: (0..n)
            .map(|i| features.row(i).1.iter().map(|v| v * v).sum())
            .collect(),
        kind: phi,
    };
    let candidates_of = |i: usize| -> usize { (2..=r).map(|k| family.exact(k).row(i).len()).sum() };

    let nominations: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let quota = budget.quota(family.degree(i));
            let cands = candidates_of(i);
            if quota == 0 || cands == 0 {
                return Vec::new();
            }
            let mut scored: Vec<(f64, u32)> = (2..=r)
                .flat_map(|k| family.exact(k).row(i).iter().copied())
                .map(|j| (geo.aloofness(i, j as usize), j))
                .collect();
            if quota < scored.len() {
                scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                scored.truncate(quota);
            }
            let mut nom: Vec<u32> = scored.into_iter().map(|(_, j)| j).collect();
            nom.sort_unstable();
            nom
        })
        .collect();

    let nominated = |i: usize, j: usize| nominations[i].binary_search(&(j as u32)).is_ok();
    let mut pruned = Vec::with_capacity(r + 1);
    pruned.push(family.exact(0).clone());
    pruned.push(family.exact(1).clone());
    for k in 2..=r {
        pruned.push(
            family
                .exact(k)
                .filter(|i, j| nominated(i, j) || nominated(j, i)),
        );
    }

    let kept_of = |i: usize| -> usize { (2..=r).map(|k| pruned[k].row(i).len()).sum() };
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (family.degree(i), i));
    let mut stats = SparsifyStats::default();
    for d in 0..10 {
        let chunk = &by_degree[d * n / 10..(d + 1) * n / 10];
        if chunk.is_empty() {
            continue;
        }
        stats.deciles.push(DecileStats {
            min_degree: family.degree(chunk[0]),
            max_degree: family.degree(*chunk.last().unwrap()),
            nodes: chunk.len(),
            candidates: chunk.iter().map(|&i| candidates_of(i)).sum(),
            kept: chunk.iter().map(|&i| kept_of(i)).sum(),
        });
    }
    stats.far_before = (2..=r).map(|k| family.exact(k).nnz()).sum::<usize>() / 2;
    stats.far_after = (2..=r).map(|k| pruned[k].nnz()).sum::<usize>() / 2;
    for (d, s) in stats.deciles.iter().enumerate() {
        log::info!(
            "sparsify decile {d} (degree {}..={}): {} candidate / {} kept far entries",
            s.min_degree,
            s.max_degree,
            s.candidates,
            s.kept
        );
    }

    Ok((
        DistanceAdjacencyFamily {
            layers: family.layers,
            pruned: Some(pruned),
        },
        stats,
    ))
}

/// Weights `θ_0..θ_r` of a variable power operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThetaVector(Vec<f64>);

impl ThetaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter(
                "theta must have at least one entry".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite theta entry {v}"
            )));
        }
        Ok(ThetaVector(values))
    }

    /// `θ = (1, 1, …, 1)` of order `r`.
    pub fn ones(r: usize) -> Self {
        ThetaVector(vec![1.0; r + 1])
    }

    /// `θ_0 = 0`, `θ_1 = 1`, `θ_k = 1e-3` beyond: the renormalized GCN
    /// operator plus a small far-field term.
    pub fn vpn_init(r: usize) -> Self {
        let mut v = vec![1e-3; r + 1];
        v[0] = 0.0;
        v[1] = 1.0;
        ThetaVector(v)
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }
}

/// `Σ_k θ_k Ā_k` as a symmetric sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerOperator {
    pub matrix: CsrMatrix,
    pub theta: ThetaVector,
}

impl PowerOperator {
    pub fn order(&self) -> usize {
        self.theta.order()
    }
}

fn check_theta(family: &DistanceAdjacencyFamily, theta: &ThetaVector) -> Result<()> {
    if theta.as_slice().len() != family.order() + 1 {
        return Err(Error::Shape(format!(
            "theta has {} entries for order {}",
            theta.as_slice().len(),
            family.order()
        )));
    }
    Ok(())
}

/// Assemble `Σ_k θ_k Ā_k`. Layers with `θ_k = 0` contribute no entries.
pub fn assemble_power_operator(
    family: &DistanceAdjacencyFamily,
    theta: &ThetaVector,
) -> Result<PowerOperator> {
    check_theta(family, theta)?;
    let n = family.n();
    let th = theta.as_slice();
    let rows: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<(u32, f64)> = th
                .iter()
                .enumerate()
                .filter(|(_, &t)| t != 0.0)
                .flat_map(|(k, &t)| family.layer(k).row(i).iter().map(move |&j| (j, t)))
                .collect();
            row.sort_unstable_by_key(|&(j, _)| j);
            row
        })
        .collect();
    Ok(PowerOperator {
        matrix: CsrMatrix::from_row_entries(n, n, rows),
        theta: theta.clone(),
    })
}

fn inv_sqrt_degrees(graph: &Graph) -> Vec<f64> {
    (0..graph.n())
        .map(|i| 1.0 / ((1 + graph.degree(i)) as f64).sqrt())
        .collect()
}

#[inline]
fn normalized_entry(identity: f64, value: f64, di: f64, dj: f64) -> f64 {
    // di·dj first: the product commutes exactly, so the result is bitwise
    // symmetric in (i, j)
    (identity + value) * (di * dj)
}

/// `D^{-1/2} (I + M) D^{-1/2}` with `D_ii = 1 + deg_G(i)` of the original graph.
pub fn vpn_convolution(op: &PowerOperator, graph: &Graph) -> Result<CsrMatrix> {
    let n = graph.n();
    if op.matrix.nrows() != n {
        return Err(Error::Shape(format!(
            "operator is {}x{}, graph has {n} nodes",
            op.matrix.nrows(),
            op.matrix.ncols()
        )));
    }
    let dinv = inv_sqrt_degrees(graph);
    let rows: Vec<Vec<(u32, f64)>> = (0..n)
        .map(|i| {
            let (cols, vals) = op.matrix.row(i);
            let mut row: Vec<(u32, f64)> = cols
                .iter()
                .zip(vals)
                .map(|(&j, &v)| {
                    let id = if j as usize == i { 1.0 } else { 0.0 };
                    (j, normalized_entry(id, v, dinv[i], dinv[j as usize]))
                })
                .collect();
            if cols.binary_search(&(i as u32)).is_err() {
                row.push((i as u32, normalized_entry(1.0, 0.0, dinv[i], dinv[i])));
            }
            row
        })
        .collect();
    Ok(CsrMatrix::from_row_entries(n, n, rows))
}

/// The renormalized GCN operator `D̃^{-1/2}(I + A)D̃^{-1/2}`.
pub fn vanilla_gcn_convolution(graph: &Graph) -> CsrMatrix {
    let dinv = inv_sqrt_degrees(graph);
    let n = graph.n();
    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<(u32, f64)> = graph
                .neighbors(i)
                .iter()
                .map(|&j| (j, normalized_entry(0.0, 1.0, dinv[i], dinv[j as usize])))
                .collect();
            row.push((i as u32, normalized_entry(1.0, 0.0, dinv[i], dinv[i])));
            row
        })
        .collect();
    CsrMatrix::from_row_entries(n, n, rows)
}

/// VPN operator with its per-layer normalized slices precomputed, so that
/// `A(θ)` can be re-assembled in `O(nnz)` and `∂loss/∂θ_k` read off `∂loss/∂A`.
#[derive(Debug, Clone)]
pub struct NormalizedFamily {
    /// Union support of the (pruned) layers, plus the diagonal.
    support: CsrMatrix,
    /// Layer index of each stored entry.
    layer_of: Vec<u8>,
    /// `1` on the diagonal (the added identity), `0` elsewhere.
    identity: Vec<f64>,
    /// `D_i^{-1/2} D_j^{-1/2}` for each stored entry.
    scale: Vec<f64>,
    dinv: Vec<f64>,
    order: usize,
}

impl NormalizedFamily {
    pub fn new(family: &DistanceAdjacencyFamily, graph: &Graph) -> Result<Self> {
        let n = graph.n();
        if family.n() != n {
            return Err(Error::Shape(format!(
                "family over {} nodes, graph has {n}",
                family.n()
            )));
        }
        let r = family.order();
        if r >= u8::MAX as usize {
            return Err(Error::InvalidParameter(format!("order {r} too large")));
        }
        let dinv = inv_sqrt_degrees(graph);
        let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
        let mut tags: Vec<Vec<(u32, u8)>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row: Vec<(u32, u8)> = (0..=r)
                .flat_map(|k| family.layer(k).row(i).iter().map(move |&j| (j, k as u8)))
                .collect();
            if family.layer(0).row(i).is_empty() {
                row.push((i as u32, 0));
            }
            row.sort_unstable_by_key(|&(j, _)| j);
            rows.push(row.iter().map(|&(j, _)| (j, 0.0)).collect());
            tags.push(row);
        }
        let support = CsrMatrix::from_row_entries(n, n, rows);
        let mut layer_of = Vec::with_capacity(support.nnz());
        let mut identity = Vec::with_capacity(support.nnz());
        let mut scale = Vec::with_capacity(support.nnz());
        for (i, row) in tags.iter().enumerate() {
            for &(j, k) in row {
                layer_of.push(k);
                identity.push(if j as usize == i { 1.0 } else { 0.0 });
                scale.push(dinv[i] * dinv[j as usize]);
            }
        }
        Ok(NormalizedFamily {
            support,
            layer_of,
            identity,
            scale,
            dinv,
            order: r,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nnz(&self) -> usize {
        self.support.nnz()
    }

    pub fn support(&self) -> &CsrMatrix {
        &self.support
    }

    /// `A(θ) = D^{-1/2}(I + Σ θ_k Ā_k)D^{-1/2}`.
    pub fn assemble(&self, theta: &ThetaVector) -> Result<CsrMatrix> {
        if theta.order() != self.order {
            return Err(Error::Shape(format!(
                "theta of order {} for a family of order {}",
                theta.order(),
                self.order
            )));
        }
        let th = theta.as_slice();
        let mut m = self.support.clone();
        let mut e = 0;
        for i in 0..m.nrows() {
            let cols = self.support.row(i).0;
            for &j in cols {
                let v = th[self.layer_of[e] as usize];
                m.values_mut()[e] =
                    normalized_entry(self.identity[e], v, self.dinv[i], self.dinv[j as usize]);
                e += 1;
            }
        }
        Ok(m)
    }

    /// `∂loss/∂θ_k = Σ_{(i,j) ∈ Ā_k} D_i^{-1/2} D_j^{-1/2} ∂loss/∂A_ij`, given
    /// `∂loss/∂A` on this support (same entry order).
    pub fn theta_gradient(&self, grad_a: &[f64]) -> Vec<f64> {
        assert_eq!(grad_a.len(), self.scale.len());
        let mut g = vec![0.0; self.order + 1];
        for ((&k, &s), &ga) in self.layer_of.iter().zip(&self.scale).zip(grad_a) {
            g[k as usize] += s * ga;
        }
        g
    }
}

/// Degree counts with everything at or above `bin_cap` in the last bin.
pub fn degree_histogram(graph: &Graph, bin_cap: usize) -> Vec<usize> {
    assert!(bin_cap >= 1, "bin_cap must be at least 1");
    let mut h = vec![0; bin_cap + 1];
    for d in graph.degrees() {
        h[d.min(bin_cap)] += 1;
    }
    h
}

pub fn histogram_mean(h: &[usize]) -> f64 {
    let total: usize = h.iter().sum();
    if total == 0 {
        return 0.0;
    }
    h.iter()
        .enumerate()
        .map(|(d, &c)| (d * c) as f64)
        .sum::<f64>()
        / total as f64
}
