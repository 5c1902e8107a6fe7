//! Independent oracles shared by the integration and acceptance tests. Nothing
//! here calls into the library's numerics; each routine is the slow,
//! obviously-correct version of what the library does fast.
#![allow(dead_code)]

use graphpow::dense::Matrix;
use graphpow::graph::{Graph, Label};
use graphpow::sparse::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const UNREACHABLE: usize = usize::MAX;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x7E57_0000)
}

/// Erdős–Rényi G(n, p).
pub fn gnp(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, edges).unwrap().0
}

pub fn path(n: usize) -> Graph {
    Graph::from_edges(n, (1..n).map(|i| (i - 1, i))).unwrap().0
}

pub fn complete(n: usize) -> Graph {
    let mut e = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            e.push((i, j));
        }
    }
    Graph::from_edges(n, e).unwrap().0
}

pub fn dense_adjacency(g: &Graph) -> Vec<Vec<bool>> {
    let n = g.n();
    let mut a = vec![vec![false; n]; n];
    for (i, j) in g.edges() {
        a[i][j] = true;
        a[j][i] = true;
    }
    a
}

/// All-pairs shortest path lengths by Floyd–Warshall.
pub fn floyd_warshall(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.n();
    let a = dense_adjacency(g);
    let mut d = vec![vec![UNREACHABLE; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if a[i][j] {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if d[i][k] == UNREACHABLE {
                continue;
            }
            for j in 0..n {
                if d[k][j] != UNREACHABLE && d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Support of the boolean power `(I + A)^r`.
pub fn boolean_power(g: &Graph, r: usize) -> Vec<Vec<bool>> {
    let n = g.n();
    let mut base = dense_adjacency(g);
    for (i, row) in base.iter_mut().enumerate() {
        row[i] = true;
    }
    let mut acc = base.clone();
    for _ in 1..r {
        let mut next = vec![vec![false; n]; n];
        for i in 0..n {
            for k in 0..n {
                if acc[i][k] {
                    for j in 0..n {
                        next[i][j] |= base[k][j];
                    }
                }
            }
        }
        acc = next;
    }
    acc
}

/// Eigenvalues of a dense symmetric matrix by cyclic Jacobi rotations,
/// written out independently of the library's solver.
pub fn jacobi_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i][j] * a[i][j];
                }
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.abs().partial_cmp(&x.abs()).unwrap());
    ev
}

pub fn random_symmetric(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng(seed);
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = rng.gen_range(-1.0..1.0);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

pub fn to_matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

pub fn dense_of(a: &CsrMatrix) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; a.ncols()]; a.nrows()];
    for (i, j, v) in a.triplets() {
        d[i][j] += v;
    }
    d
}

pub fn dense_of_matrix(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, |r| r.len()));
    let mut c = vec![vec![0.0; m]; n];
    for i in 0..n {
        for t in 0..k {
            for j in 0..m {
                c[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    c
}

/// `A · ReLU(A · X · W1) · W2` in plain nested loops.
pub fn straight_line_logits(
    a: &[Vec<f64>],
    x: &[Vec<f64>],
    w1: &[Vec<f64>],
    w2: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let mut h = mm(a, &mm(x, w1));
    for row in &mut h {
        for v in row.iter_mut() {
            *v = v.max(0.0);
        }
    }
    mm(a, &mm(&h, w2))
}

/// Mean cross-entropy over `idx` computed directly from logits.
pub fn straight_line_loss(logits: &[Vec<f64>], labels: &[usize], idx: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in idx {
        let row = &logits[i];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
    }
    total / idx.len() as f64
}

pub fn random_dense(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn labels_of(classes: &[usize]) -> Vec<Label> {
    classes.iter().map(|&c| Label::class(c)).collect()
}

/// Relative error with a floor so that entries that are zero up to
/// round-off do not dominate.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// A random 7-node training instance for gradient checks. Odd seeds carry
/// dropout masks; VPN gets a random θ.
pub struct GradInstance {
    pub model: graphpow::nn::GcnModel,
    pub prop: graphpow::nn::Propagation,
    pub features: CsrMatrix,
    pub labels: Vec<Label>,
    pub train: Vec<usize>,
    pub masks: Vec<graphpow::nn::DropoutMasks>,
}

pub fn grad_instance(seed: u64, mode: graphpow::nn::OperatorMode) -> GradInstance {
    use graphpow::nn::{build_propagation, DropoutMasks, GcnModel, HyperParams, OperatorMode};
    use graphpow::powering::ThetaVector;
    let mut r = rng(1000 + seed);
    let (n, d, h, c) = (7, 3, 4, 3);
    let g = gnp(n, 0.35, 2000 + seed);
    let x = CsrMatrix::from_dense(&to_matrix(&random_dense(n, d, &mut r)));
    let classes: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
    let order = 2 + (seed as usize % 2);
    let mut hyper = HyperParams::for_mode(mode, order).with_seed(seed);
    hyper.hidden = h;
    hyper.decay_all_layers = seed.is_multiple_of(3);
    hyper.budget_factor = None;
    if mode == OperatorMode::Rgcn {
        hyper.alpha = (0..order - 1).map(|_| r.gen_range(0.1..1.0)).collect();
    }
    let prop = build_propagation(&g, &x, mode, &hyper).unwrap();
    let mut model = GcnModel::new(d, c, mode, hyper.clone()).unwrap();
    if let Some(t) = model.theta.as_mut() {
        let vals: Vec<f64> = (0..=order).map(|_| r.gen_range(-0.5..1.0)).collect();
        *t = ThetaVector::new(vals).unwrap();
    }
    let terms = match &prop {
        graphpow::nn::Propagation::Multi(t) => t.len(),
        _ => 1,
    };
    let masks = (0..terms)
        .map(|t| {
            if seed % 2 == 1 {
                DropoutMasks::sample(&hyper, &x, n, 0, t)
            } else {
                DropoutMasks::none()
            }
        })
        .collect();
    GradInstance {
        model,
        prop,
        features: x,
        labels: labels_of(&classes),
        train: vec![0, 1, 2, 4, 6],
        masks,
    }
}

/// Largest relative error of analytic gradients vs central differences
/// (step `eps`) over W1, W2 and θ.
pub fn max_gradient_error(inst: &GradInstance, eps: f64) -> f64 {
    use graphpow::nn::{loss_and_grads, GcnModel, LossInputs};
    let inputs = LossInputs {
        features: &inst.features,
        labels: &inst.labels,
        train: &inst.train,
    };
    let loss = |m: &GcnModel| {
        loss_and_grads(m, &inst.prop, inputs, &inst.masks)
            .unwrap()
            .loss
    };
    let g = loss_and_grads(&inst.model, &inst.prop, inputs, &inst.masks).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = |analytic: &[f64], set: &dyn Fn(&mut GcnModel, usize, f64)| {
        for (k, &a) in analytic.iter().enumerate() {
            let mut plus = inst.model.clone();
            set(&mut plus, k, eps);
            let mut minus = inst.model.clone();
            set(&mut minus, k, -eps);
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            worst = worst.max(rel_err(a, numeric));
        }
    };
    probe(g.w1.as_slice(), &|m, k, e| m.w1.as_mut_slice()[k] += e);
    probe(g.w2.as_slice(), &|m, k, e| m.w2.as_mut_slice()[k] += e);
    if let Some(gt) = &g.theta {
        probe(gt, &|m, k, e| {
            m.theta.as_mut().unwrap().as_mut_slice()[k] += e
        });
    }
    worst
}

/// One receptive-field trial: perturb the features of a node farther than
/// `L·r = 2r` from a probe node and check that the probe's logits do not move
/// at all. Returns `Ok(false)` when the sampled graph has no such node.
pub fn receptive_field_trial(seed: u64) -> Result<bool, String> {
    use graphpow::nn::{build_propagation, predict, GcnModel, HyperParams, OperatorMode};
    use graphpow::powering::ThetaVector;
    let mut r = rng(50_000 + seed);
    let n = r.gen_range(8..40);
    let g = gnp(n, r.gen_range(1.0..3.0) / n as f64, 60_000 + seed);
    let (mode, order) = if seed.is_multiple_of(3) {
        (OperatorMode::Vanilla, 1)
    } else {
        (OperatorMode::Vpn, r.gen_range(2..4))
    };
    let dist = floyd_warshall(&g);
    let v = r.gen_range(0..n);
    let far: Vec<usize> = (0..n)
        .filter(|&u| dist[v][u] == UNREACHABLE || dist[v][u] > 2 * order)
        .collect();
    if far.is_empty() {
        return Ok(false);
    }
    let u = far[r.gen_range(0..far.len())];
    let d = 5;
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if r.gen_bool(0.5) {
                        r.gen_range(0.0..1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut hyper = HyperParams::for_mode(mode, order).with_seed(seed);
    hyper.dropout = 0.0;
    if r.gen_bool(0.5) {
        hyper.budget_factor = Some(r.gen_range(0.0..2.0));
    }
    let mut model = GcnModel::new(d, 3, mode, hyper.clone()).map_err(|e| e.to_string())?;
    if let Some(t) = model.theta.as_mut() {
        *t = ThetaVector::new((0..=order).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    }
    // The operator is built once, from the clean features: sparsification
    // ranks far pairs by feature similarity, so rebuilding it after the
    // perturbation would let `u` reorder other nodes' nominations.
    let clean = CsrMatrix::from_dense(&to_matrix(&rows)).row_normalized();
    let prop = build_propagation(&g, &clean, mode, &hyper).map_err(|e| e.to_string())?;
    let logits_for = |rows: &[Vec<f64>]| {
        let x = CsrMatrix::from_dense(&to_matrix(rows)).row_normalized();
        predict(&model, &prop, &x).unwrap()
    };
    let before = logits_for(&rows);
    rows[u] = (0..d).map(|_| r.gen_range(-5.0..5.0)).collect();
    let after = logits_for(&rows);
    let same = before
        .row(v)
        .iter()
        .zip(after.row(v))
        .all(|(a, b)| a.to_bits() == b.to_bits());
    if same {
        Ok(true)
    } else {
        Err(format!(
            "seed {seed}: {mode} r={order}, probe {v}, perturbed {u} at distance {}",
            dist[v][u]
        ))
    }
}

/// Directory of a dataset bundle: `$GRAPHPOW_DATA/<name>`, defaulting to
/// `<workspace>/data/<name>`.
pub fn bundle_dir(name: &str) -> std::path::PathBuf {
    let root = std::env::var_os("GRAPHPOW_DATA")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    root.join(name)
}

pub fn load_bundle(name: &str) -> Result<graphpow::io::Dataset, String> {
    let dir = bundle_dir(name);
    if !dir.join("edges.txt").is_file() {
        return Err(format!("dataset bundle missing: {}", dir.display()));
    }
    graphpow::io::load_graph_text(&dir)
        .map(|(d, _)| d)
        .map_err(|e| e.to_string())
}
