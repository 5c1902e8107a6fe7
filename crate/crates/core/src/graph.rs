//! Undirected, unweighted simple graphs in compressed sorted-neighbor form,
//! plus the node data (features, labels, splits) bound to them.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, SeedStream};
use crate::sparse::{CsrMatrix, Pattern};

/// Saturating hop distance; [`UNREACHABLE`] marks nodes beyond the radius.
pub type Distance = u16;
pub const UNREACHABLE: Distance = Distance::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

/// What [`Graph::from_edges`] discarded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeCleanup {
    pub input_pairs: usize,
    pub self_loops: usize,
    pub duplicates: usize,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph {
            offsets: vec![0; n + 1],
            neighbors: Vec::new(),
        }
    }

    /// Build from an edge list. Self-loops and repeated pairs (in either
    /// orientation) are dropped and counted.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, EdgeCleanup)> {
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut stats = EdgeCleanup::default();
        for (u, v) in edges {
            stats.input_pairs += 1;
            for x in [u, v] {
                if x >= n {
                    return Err(Error::NodeOutOfRange { index: x, n });
                }
            }
            if u == v {
                stats.self_loops += 1;
                continue;
            }
            adj[u].push(v as u32);
            adj[v].push(u as u32);
        }
        let mut directed_dups = 0;
        for list in &mut adj {
            list.sort_unstable();
            let before = list.len();
            list.dedup();
            directed_dups += before - list.len();
        }
        stats.duplicates = directed_dups / 2;
        Ok((Self::from_sorted_lists(adj), stats))
    }

    /// Build from symmetric, sorted, loop-free neighbor lists.
    pub(crate) fn from_sorted_lists(adj: Vec<Vec<u32>>) -> Self {
        let mut offsets = Vec::with_capacity(adj.len() + 1);
        offsets.push(0);
        let mut neighbors = Vec::with_capacity(adj.iter().map(Vec::len).sum());
        for list in adj {
            neighbors.extend_from_slice(&list);
            offsets.push(neighbors.len());
        }
        let g = Graph { offsets, neighbors };
        debug_assert!(g.check_invariants().is_ok());
        g
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n()).map(|i| self.degree(i)).collect()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.n() == 0 {
            0.0
        } else {
            self.neighbors.len() as f64 / self.n() as f64
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&(j as u32)).is_ok()
    }

    /// Canonical edge list: `(i, j)` with `i < j`, lexicographically sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n())
            .flat_map(|i| {
                self.neighbors(i)
                    .iter()
                    .map(move |&j| (i, j as usize))
                    .filter(|&(i, j)| i < j)
            })
            .collect()
    }

    pub fn adjacency_pattern(&self) -> Pattern {
        Pattern::from_rows((0..self.n()).map(|i| self.neighbors(i).to_vec()).collect())
    }

    pub fn adjacency_matrix(&self) -> CsrMatrix {
        self.adjacency_pattern().to_matrix(1.0)
    }

    /// Verify sortedness, absence of loops and duplicates, and symmetry.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for i in 0..self.n() {
            let nb = self.neighbors(i);
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("neighbors of {i} not strictly sorted"));
            }
            for &j in nb {
                let j = j as usize;
                if j == i {
                    return Err(format!("self-loop at {i}"));
                }
                if j >= self.n() || !self.has_edge(j, i) {
                    return Err(format!("edge ({i},{j}) has no reverse"));
                }
            }
        }
        Ok(())
    }
}

/// Reusable buffers for repeated bounded BFS from different sources.
#[derive(Debug, Clone)]
pub struct BfsScratch {
    dist: Vec<Distance>,
    visited: Vec<u32>,
    queue: VecDeque<u32>,
}

impl BfsScratch {
    pub fn new(n: usize) -> Self {
        BfsScratch {
            dist: vec![UNREACHABLE; n],
            visited: Vec::new(),
            queue: VecDeque::new(),
        }
    }

    /// Run a BFS truncated at `radius` from all `sources` at once, then call
    /// `visit(node, distance)` for every reached node in discovery order.
    /// Nodes farther than `radius` are never touched.
    pub fn run(
        &mut self,
        graph: &Graph,
        sources: &[usize],
        radius: usize,
        mut visit: impl FnMut(usize, Distance),
    ) {
        let radius = radius.min(UNREACHABLE as usize - 1) as Distance;
        for &v in &self.visited {
            self.dist[v as usize] = UNREACHABLE;
        }
        self.visited.clear();
        self.queue.clear();
        for &s in sources {
            if self.dist[s] == UNREACHABLE {
                self.dist[s] = 0;
                self.visited.push(s as u32);
                self.queue.push_back(s as u32);
            }
        }
        while let Some(u) = self.queue.pop_front() {
            let du = self.dist[u as usize];
            if du == radius {
                continue;
            }
            for &w in graph.neighbors(u as usize) {
                if self.dist[w as usize] == UNREACHABLE {
                    self.dist[w as usize] = du + 1;
                    self.visited.push(w);
                    self.queue.push_back(w);
                }
            }
        }
        for &v in &self.visited {
            visit(v as usize, self.dist[v as usize]);
        }
    }
}

/// Exact hop distances from `source`, truncated at `r`.
pub fn bounded_bfs(graph: &Graph, source: usize, r: usize) -> Vec<Distance> {
    assert!(source < graph.n(), "source {source} out of range");
    let mut out = vec![UNREACHABLE; graph.n()];
    BfsScratch::new(graph.n()).run(graph, &[source], r, |v, d| out[v] = d);
    out
}

/// Nodes within `r` hops of any source, sorted ascending.
pub fn ball(graph: &Graph, sources: &[usize], r: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if !sources.is_empty() {
        BfsScratch::new(graph.n()).run(graph, sources, r, |v, _| out.push(v));
    }
    out.sort_unstable();
    out
}

/// Relabel nodes: edge `(i, j)` becomes `(perm[i], perm[j])`.
pub fn permute_graph(graph: &Graph, perm: &[usize]) -> Result<Graph> {
    check_permutation(perm, graph.n())?;
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); graph.n()];
    for i in 0..graph.n() {
        let list = &mut adj[perm[i]];
        list.extend(graph.neighbors(i).iter().map(|&j| perm[j as usize] as u32));
        list.sort_unstable();
    }
    Ok(Graph::from_sorted_lists(adj))
}

pub fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidParameter(format!(
            "permutation has length {} for {n} nodes",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidParameter(format!(
                "not a bijection (value {p})"
            )));
        }
    }
    Ok(())
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Node class, with a sentinel for unlabeled nodes that can never be
/// confused with class 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(u32);

impl Label {
    pub const UNLABELED: Label = Label(u32::MAX);

    pub fn class(c: usize) -> Label {
        assert!(c < u32::MAX as usize);
        Label(c as u32)
    }

    pub fn get(self) -> Option<usize> {
        (self != Label::UNLABELED).then_some(self.0 as usize)
    }

    pub fn is_labeled(self) -> bool {
        self != Label::UNLABELED
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct NodeData {
    /// `n × d` feature matrix.
    pub features: CsrMatrix,
    pub labels: Vec<Label>,
    pub num_classes: usize,
    pub splits: Splits,
}

impl NodeData {
    pub fn new(
        features: CsrMatrix,
        labels: Vec<Label>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self> {
        let data = NodeData {
            features,
            labels,
            num_classes,
            splits,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.features.nrows() != n {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows for {n} labels",
                self.features.nrows()
            )));
        }
        for l in &self.labels {
            if let Some(c) = l.get() {
                if c >= self.num_classes {
                    return Err(Error::InvalidDataset(format!(
                        "label {c} outside {} classes",
                        self.num_classes
                    )));
                }
            }
        }
        let mut owner = vec![0u8; n];
        for (tag, set) in [
            (1u8, &self.splits.train),
            (2, &self.splits.val),
            (3, &self.splits.test),
        ] {
            for &i in set {
                if i >= n {
                    return Err(Error::NodeOutOfRange { index: i, n });
                }
                if owner[i] != 0 {
                    return Err(Error::InvalidDataset(format!(
                        "node {i} appears in more than one split (or twice)"
                    )));
                }
                owner[i] = tag;
            }
        }
        if let Some(&i) = self
            .splits
            .train
            .iter()
            .find(|&&i| !self.labels[i].is_labeled())
        {
            return Err(Error::InvalidDataset(format!(
                "train node {i} has no label"
            )));
        }
        Ok(())
    }
}

/// Parameters of a stochastic block model with `k` equal communities:
/// intra-community pairs connect with probability `a_intra / n`, others with
/// `a_inter / n`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SbmParams {
    n: usize,
    k: usize,
    a_intra: f64,
    a_inter: f64,
    seed: u64,
}

impl SbmParams {
    pub fn new(n: usize, k: usize, a_intra: f64, a_inter: f64, seed: u64) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::InvalidParameter("n and k must be positive".into()));
        }
        if !n.is_multiple_of(k) {
            return Err(Error::InvalidParameter(format!(
                "{n} nodes cannot be split evenly into {k} communities"
            )));
        }
        for (name, a) in [("a_intra", a_intra), ("a_inter", a_inter)] {
            let p = a / n as f64;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "{name}/n = {p} is not a probability"
                )));
            }
        }
        Ok(SbmParams {
            n,
            k,
            a_intra,
            a_inter,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn a_intra(&self) -> f64 {
        self.a_intra
    }
    pub fn a_inter(&self) -> f64 {
        self.a_inter
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SbmParams { seed, ..self }
    }

    pub fn xi1(&self) -> f64 {
        (self.a_intra + self.a_inter) / 2.0
    }

    pub fn xi2(&self) -> f64 {
        (self.a_intra - self.a_inter) / 2.0
    }

    /// `ξ2² / ξ1`; weak recovery is possible above 1.
    pub fn snr(&self) -> f64 {
        self.xi2() * self.xi2() / self.xi1()
    }
}

/// Sample an SBM graph. Returns the graph and each node's community id in
/// `0..k`; the partition is a uniformly random balanced one.
pub fn sbm_generate(params: &SbmParams) -> (Graph, Vec<usize>) {
    let n = params.n;
    let stream = SeedStream::root(params.seed).stream(rng::SBM);
    let mut rng = stream.rng();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut community = vec![0usize; n];
    for (pos, &node) in order.iter().enumerate() {
        community[node] = pos % params.k;
    }
    let p_in = params.a_intra / n as f64;
    let p_out = params.a_inter / n as f64;
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let p = if community[i] == community[j] {
                p_in
            } else {
                p_out
            };
            // gen::<f64>() is in [0, 1): p = 1 always connects, p = 0 never.
            if rng.gen::<f64>() < p {
                adj[i].push(j as u32);
                adj[j].push(i as u32);
            }
        }
    }
    // Lower-index neighbors were appended in increasing i order, upper ones in
    // increasing j order, so every list is already sorted.
    (Graph::from_sorted_lists(adj), community)
}

/// ±1 membership vector for a two-community assignment.
pub fn sigma(community: &[usize]) -> Vec<f64> {
    community
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { -1.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn path(n: usize) -> Graph {
        Graph::from_edges(n, (0..n.saturating_sub(1)).map(|i| (i, i + 1)))
            .unwrap()
            .0
    }

    #[test]
    fn triangle_from_three_lines() {
        let (g, stats) = Graph::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(g.degrees(), vec![2, 2, 2]);
        assert_eq!(g.num_edges(), 3);
        assert_eq!(stats.self_loops + stats.duplicates, 0);
    }

    #[test]
    fn self_loop_and_duplicate_dropped() {
        let (g, stats) = Graph::from_edges(2, [(0, 0), (0, 1), (0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(stats.self_loops, 1);
        assert_eq!(stats.duplicates, 1);
        let (g, stats) = Graph::from_edges(2, [(1, 0), (0, 1)]).unwrap();
        assert_eq!((g.num_edges(), stats.duplicates), (1, 1));
    }

    #[test]
    fn out_of_range_edge_rejected() {
        assert!(matches!(
            Graph::from_edges(2, [(0, 2)]),
            Err(Error::NodeOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn bfs_on_path_truncates() {
        let g = path(4);
        assert_eq!(bounded_bfs(&g, 0, 2), vec![0, 1, 2, UNREACHABLE]);
    }

    #[test]
    fn bfs_from_isolated_node() {
        let (g, _) = Graph::from_edges(4, [(1, 2)]).unwrap();
        assert_eq!(
            bounded_bfs(&g, 0, 3),
            vec![0, UNREACHABLE, UNREACHABLE, UNREACHABLE]
        );
    }

    #[test]
    fn bfs_scratch_reuse_resets() {
        let g = path(5);
        let mut s = BfsScratch::new(5);
        let mut first = Vec::new();
        s.run(&g, &[0], 4, |v, d| first.push((v, d)));
        let mut second = Vec::new();
        s.run(&g, &[4], 1, |v, d| second.push((v, d)));
        assert_eq!(first.len(), 5);
        assert_eq!(second, vec![(4, 0), (3, 1)]);
    }

    #[test]
    fn permutation_cases() {
        let g = path(4);
        assert_eq!(permute_graph(&g, &[0, 1, 2, 3]).unwrap(), g);
        let (tri, _) = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(permute_graph(&tri, &[2, 0, 1]).unwrap(), tri);
        assert_eq!(permute_graph(&g, &[3, 2, 1, 0]).unwrap().edges(), g.edges());
        assert!(permute_graph(&g, &[0, 0, 1, 2]).is_err());
        assert!(permute_graph(&g, &[0, 1, 2]).is_err());
    }

    #[test]
    fn sbm_degenerate_probabilities() {
        let p = SbmParams::new(10, 2, 0.0, 0.0, 1).unwrap();
        assert_eq!(sbm_generate(&p).0.num_edges(), 0);

        let p = SbmParams::new(10, 2, 10.0, 0.0, 1).unwrap();
        let (g, comm) = sbm_generate(&p);
        assert_eq!(g.num_edges(), 2 * 10);
        for (i, j) in g.edges() {
            assert_eq!(comm[i], comm[j]);
        }
        assert!(g.degrees().iter().all(|&d| d == 4));
        assert_eq!(comm.iter().filter(|&&c| c == 0).count(), 5);
    }

    #[test]
    fn sbm_rejects_bad_probability() {
        assert!(SbmParams::new(10, 2, 11.0, 0.0, 0).is_err());
        assert!(SbmParams::new(10, 2, -1.0, 0.0, 0).is_err());
        assert!(SbmParams::new(11, 2, 1.0, 0.0, 0).is_err());
        let p = SbmParams::new(2000, 2, 14.0, 2.0, 0).unwrap();
        assert_eq!((p.xi1(), p.xi2(), p.snr()), (8.0, 6.0, 4.5));
    }

    #[test]
    fn node_data_validation() {
        let f = CsrMatrix::identity(3);
        let labels = vec![Label::class(0), Label::UNLABELED, Label::class(1)];
        let ok = Splits {
            train: vec![0],
            val: vec![1],
            test: vec![2],
        };
        assert!(NodeData::new(f.clone(), labels.clone(), 2, ok.clone()).is_ok());
        let overlap = Splits {
            train: vec![0],
            val: vec![0],
            test: vec![],
        };
        assert!(NodeData::new(f.clone(), labels.clone(), 2, overlap).is_err());
        let unlabeled_train = Splits {
            train: vec![1],
            ..Default::default()
        };
        assert!(NodeData::new(f.clone(), labels.clone(), 2, unlabeled_train).is_err());
        assert!(NodeData::new(f, labels, 1, ok).is_err());
        assert_eq!(Label::UNLABELED.get(), None);
        assert_ne!(Label::UNLABELED, Label::class(0));
    }
}
