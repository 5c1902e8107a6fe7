//! DICE evasion attacks ("delete internally, connect externally") and the
//! robustness metrics used to compare trained models on perturbed graphs.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{ball, Graph, Label, NodeData};
use crate::nn::{build_propagation, predict, GcnModel, OperatorMode, Propagation};
use crate::protocol::mean_std;
use crate::rng::{SeedStream, ATTACK};
use crate::sparse::CsrMatrix;

/// Above this many nodes, insertion candidates are drawn by rejection
/// sampling instead of being enumerated.
const MATERIALIZE_MAX_N: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackEdit {
    /// Deleted same-class edges `(i, j)`, `i < j`, in the order drawn.
    pub removed: Vec<(usize, usize)>,
    /// Inserted cross-class pairs `(i, j)`, `i < j`, in the order drawn.
    pub added: Vec<(usize, usize)>,
    pub rate: f64,
    pub seed: u64,
}

impl AttackEdit {
    pub fn len(&self) -> usize {
        self.removed.len() + self.added.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every node touched by an edit, sorted and deduplicated.
    pub fn endpoints(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .removed
            .iter()
            .chain(&self.added)
            .flat_map(|&(i, j)| [i, j])
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Check the class constraints, the budget, and that `perturbed` is
    /// exactly `original` with the edits applied.
    pub fn verify(
        &self,
        original: &Graph,
        labels: &[Label],
        perturbed: &Graph,
    ) -> std::result::Result<(), String> {
        let class = |i: usize| labels[i].get();
        for &(i, j) in &self.removed {
            if !original.has_edge(i, j) {
                return Err(format!("removed pair ({i},{j}) was not an edge"));
            }
            if class(i).is_none() || class(i) != class(j) {
                return Err(format!("removed edge ({i},{j}) is not intra-class"));
            }
        }
        for &(i, j) in &self.added {
            if i == j || original.has_edge(i, j) {
                return Err(format!("added pair ({i},{j}) already present or a loop"));
            }
            if class(i).is_none() || class(j).is_none() || class(i) == class(j) {
                return Err(format!("added pair ({i},{j}) is not inter-class"));
            }
        }
        let budget = attack_budget(original.num_edges(), self.rate);
        if self.len() != budget {
            return Err(format!("{} edits for a budget of {budget}", self.len()));
        }
        let mut expect: HashSet<(usize, usize)> = original.edges().into_iter().collect();
        for e in &self.removed {
            if !expect.remove(e) {
                return Err(format!("edge {e:?} removed twice"));
            }
        }
        for &e in &self.added {
            if !expect.insert(e) {
                return Err(format!("pair {e:?} added twice"));
            }
        }
        let got: HashSet<(usize, usize)> = perturbed.edges().into_iter().collect();
        if got != expect || perturbed.n() != original.n() {
            return Err("perturbed graph differs from original plus edits".into());
        }
        perturbed.check_invariants()
    }
}

/// `round(rate · |E|)`.
pub fn attack_budget(num_edges: usize, rate: f64) -> usize {
    (rate * num_edges as f64).round() as usize
}

enum InsertPool {
    Listed(Vec<(usize, usize)>),
    Sampled {
        labeled: Vec<usize>,
        remaining: usize,
        taken: HashSet<(usize, usize)>,
    },
}

impl InsertPool {
    fn new(graph: &Graph, labels: &[Label]) -> Self {
        let labeled: Vec<usize> = (0..graph.n()).filter(|&i| labels[i].is_labeled()).collect();
        if graph.n() <= MATERIALIZE_MAX_N {
            let mut pairs = Vec::new();
            for (a, &i) in labeled.iter().enumerate() {
                for &j in &labeled[a + 1..] {
                    if labels[i] != labels[j] && !graph.has_edge(i, j) {
                        pairs.push((i, j));
                    }
                }
            }
            return InsertPool::Listed(pairs);
        }
        let mut per_class = std::collections::HashMap::<usize, usize>::new();
        for &i in &labeled {
            *per_class.entry(labels[i].get().unwrap()).or_default() += 1;
        }
        let total = labeled.len() * labeled.len().saturating_sub(1) / 2;
        let same: usize = per_class
            .values()
            .map(|&c| c * c.saturating_sub(1) / 2)
            .sum();
        let existing = graph
            .edges()
            .into_iter()
            .filter(|&(i, j)| {
                labels[i].is_labeled() && labels[j].is_labeled() && labels[i] != labels[j]
            })
            .count();
        InsertPool::Sampled {
            labeled,
            remaining: total - same - existing,
            taken: HashSet::new(),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            InsertPool::Listed(v) => v.is_empty(),
            InsertPool::Sampled { remaining, .. } => *remaining == 0,
        }
    }

    fn draw(&mut self, graph: &Graph, labels: &[Label], rng: &mut impl Rng) -> (usize, usize) {
        match self {
            InsertPool::Listed(v) => {
                let k = rng.gen_range(0..v.len());
                v.swap_remove(k)
            }
            InsertPool::Sampled {
                labeled,
                remaining,
                taken,
            } => loop {
                let a = labeled[rng.gen_range(0..labeled.len())];
                let b = labeled[rng.gen_range(0..labeled.len())];
                let e = (a.min(b), a.max(b));
                if labels[a] != labels[b] && !graph.has_edge(a, b) && taken.insert(e) {
                    *remaining -= 1;
                    return e;
                }
            },
        }
    }
}

/// DICE: `round(rate·|E|)` edits, each a fair coin between deleting a random
/// same-class edge and inserting a random cross-class non-edge (the other
/// pool is used when the chosen one is exhausted). Unlabeled nodes are never
/// touched.
pub fn dice_attack(
    graph: &Graph,
    labels: &[Label],
    rate: f64,
    seed: u64,
) -> Result<(Graph, AttackEdit)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!(
            "attack rate {rate} outside [0, 1]"
        )));
    }
    if labels.len() != graph.n() {
        return Err(Error::Shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            graph.n()
        )));
    }
    let budget = attack_budget(graph.num_edges(), rate);
    let mut rng = SeedStream::root(seed).stream(ATTACK).rng();
    let mut removable: Vec<(usize, usize)> = graph
        .edges()
        .into_iter()
        .filter(|&(i, j)| labels[i].is_labeled() && labels[i] == labels[j])
        .collect();
    let mut insertable = if budget > 0 {
        InsertPool::new(graph, labels)
    } else {
        InsertPool::Listed(Vec::new())
    };
    let mut edit = AttackEdit {
        removed: Vec::new(),
        added: Vec::new(),
        rate,
        seed,
    };
    for _ in 0..budget {
        let want_remove = rng.gen_bool(0.5);
        let remove = match (removable.is_empty(), insertable.is_empty()) {
            (true, true) => {
                return Err(Error::BudgetExhausted {
                    achieved: edit.len(),
                    requested: budget,
                })
            }
            (true, false) => false,
            (false, true) => true,
            (false, false) => want_remove,
        };
        if remove {
            let k = rng.gen_range(0..removable.len());
            let e = removable.swap_remove(k);
            log::trace!("dice: remove {e:?}");
            edit.removed.push(e);
        } else {
            let e = insertable.draw(graph, labels, &mut rng);
            log::trace!("dice: insert {e:?}");
            edit.added.push(e);
        }
    }
    let removed: HashSet<(usize, usize)> = edit.removed.iter().copied().collect();
    let edges = graph
        .edges()
        .into_iter()
        .filter(|e| !removed.contains(e))
        .chain(edit.added.iter().copied());
    let (perturbed, _) = Graph::from_edges(graph.n(), edges)?;
    Ok((perturbed, edit))
}

/// Nodes within `layers · r` hops (in the original graph) of any edited
/// endpoint: the only nodes whose outputs can change.
pub fn attacked_node_set(graph: &Graph, edit: &AttackEdit, layers: usize, r: usize) -> Vec<usize> {
    ball(graph, &edit.endpoints(), layers * r)
}

/// Post-attack accuracy of a model minus that of the baseline.
pub fn robustness_merit(acc_post_model: f64, acc_post_vanilla: f64) -> f64 {
    acc_post_model - acc_post_vanilla
}

/// `1 − acc_post / acc_pre` over `attacked ∩ eval`, from stored predictions.
/// `None` when the intersection is empty or nothing was right before.
pub fn attack_deterioration(
    pred_pre: &[usize],
    pred_post: &[usize],
    labels: &[Label],
    attacked: &[usize],
    eval: &[usize],
) -> Option<f64> {
    let attacked: HashSet<usize> = attacked.iter().copied().collect();
    let nodes: Vec<usize> = eval
        .iter()
        .copied()
        .filter(|i| attacked.contains(i))
        .collect();
    if nodes.is_empty() {
        return None;
    }
    let hits = |pred: &[usize]| {
        nodes
            .iter()
            .filter(|&&i| labels[i].get() == Some(pred[i]))
            .count() as f64
    };
    let pre = hits(pred_pre);
    if pre == 0.0 {
        return None;
    }
    Some(1.0 - hits(pred_post) / pre)
}

/// Receptive-field radius per layer of a model's inference operator.
pub fn operator_scope(model: &GcnModel) -> usize {
    match model.mode {
        OperatorMode::Vpn => model.hyper.r,
        OperatorMode::Vanilla | OperatorMode::Rgcn => 1,
    }
}

/// The operator a frozen model runs on at inference time on `graph`. r-GCN
/// only regularizes training, so it infers with the baseline operator; VPN
/// re-sparsifies the family of `graph`.
pub fn inference_propagation(
    graph: &Graph,
    raw_features: &CsrMatrix,
    model: &GcnModel,
) -> Result<Propagation> {
    let mode = match model.mode {
        OperatorMode::Rgcn => OperatorMode::Vanilla,
        m => m,
    };
    build_propagation(graph, raw_features, mode, &model.hyper)
}

/// Models trained on the clean graph, one per training seed.
#[derive(Debug, Clone)]
pub struct TrainedSet {
    pub mode: OperatorMode,
    pub models: Vec<GcnModel>,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub rates: Vec<f64>,
    pub attack_seeds: Vec<u64>,
    /// Network depth `L` used for the attacked-node radius.
    pub layers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            rates: vec![0.05, 0.10, 0.15, 0.20, 0.25, 0.30],
            attack_seeds: vec![0, 1, 2],
            layers: 2,
        }
    }
}

/// One mode's outcome on one attacked graph, averaged over training seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelOutcome {
    pub mode: OperatorMode,
    pub acc_post: f64,
    pub merit: f64,
    /// Mean over training seeds where it is defined.
    pub deterioration: Option<f64>,
    pub n_attacked: usize,
    /// Per-training-seed post-attack test accuracies.
    pub acc_post_runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRecord {
    pub dataset: String,
    pub rate: f64,
    pub seed: u64,
    pub edits: usize,
    pub outcomes: Vec<ModelOutcome>,
}

/// Inputs of an evasion sweep: clean graph, node data and raw features.
#[derive(Debug, Clone, Copy)]
pub struct SweepData<'a> {
    pub name: &'a str,
    pub graph: &'a Graph,
    pub data: &'a NodeData,
    /// Features as fed to the network (after any normalization).
    pub features: &'a CsrMatrix,
}

fn predictions(model: &GcnModel, graph: &Graph, sd: &SweepData<'_>) -> Result<Vec<usize>> {
    let prop = inference_propagation(graph, &sd.data.features, model)?;
    Ok(predict(model, &prop, sd.features)?.row_argmax())
}

/// Attack the clean graph at every `(rate, attack seed)` cell, rebuild each
/// model's inference operator on the perturbed graph, and score the frozen
/// weights on the test split. Merits are relative to the `Vanilla` set,
/// which must be present.
pub fn evasion_sweep(
    sd: SweepData<'_>,
    sets: &[TrainedSet],
    cfg: &SweepConfig,
) -> Result<Vec<RobustnessRecord>> {
    if !sets.iter().any(|s| s.mode == OperatorMode::Vanilla) {
        return Err(Error::InvalidParameter(
            "sweep needs vanilla models as the baseline".into(),
        ));
    }
    let labels = &sd.data.labels;
    let test = &sd.data.splits.test;
    let clean: Vec<Vec<Vec<usize>>> = sets
        .iter()
        .map(|s| {
            s.models
                .par_iter()
                .map(|m| predictions(m, sd.graph, &sd))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(f64, u64)> = cfg
        .rates
        .iter()
        .flat_map(|&r| cfg.attack_seeds.iter().map(move |&s| (r, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(rate, seed)| {
            let (perturbed, edit) = dice_attack(sd.graph, labels, rate, seed)?;
            let mut outcomes = Vec::with_capacity(sets.len());
            for (set, clean_preds) in sets.iter().zip(&clean) {
                let mut accs = Vec::with_capacity(set.models.len());
                let mut dets = Vec::new();
                let mut n_attacked = 0;
                for (model, pre) in set.models.iter().zip(clean_preds) {
                    let post = predictions(model, &perturbed, &sd)?;
                    accs.push(prediction_accuracy(&post, sd.data));
                    let attacked =
                        attacked_node_set(sd.graph, &edit, cfg.layers, operator_scope(model));
                    n_attacked = attacked.len();
                    if let Some(d) = attack_deterioration(pre, &post, labels, &attacked, test) {
                        dets.push(d);
                    }
                }
                outcomes.push(ModelOutcome {
                    mode: set.mode,
                    acc_post: mean_std(&accs).0,
                    merit: 0.0,
                    deterioration: (!dets.is_empty()).then(|| mean_std(&dets).0),
                    n_attacked,
                    acc_post_runs: accs,
                });
            }
            let base = outcomes
                .iter()
                .find(|o| o.mode == OperatorMode::Vanilla)
                .map(|o| o.acc_post)
                .expect("vanilla present");
            for o in &mut outcomes {
                o.merit = robustness_merit(o.acc_post, base);
            }
            Ok(RobustnessRecord {
                dataset: sd.name.to_string(),
                rate,
                seed,
                edits: edit.len(),
                outcomes,
            })
        })
        .collect()
}

/// Per-(mode, rate) means and standard deviations over attack seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    pub mode: OperatorMode,
    pub rate: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub merit_mean: f64,
    pub merit_std: f64,
    pub deterioration_mean: Option<f64>,
}

pub fn summarize_sweep(records: &[RobustnessRecord]) -> Vec<RateSummary> {
    let mut keys: Vec<(OperatorMode, f64)> = Vec::new();
    for r in records {
        for o in &r.outcomes {
            if !keys.iter().any(|&(m, x)| m == o.mode && x == r.rate) {
                keys.push((o.mode, r.rate));
            }
        }
    }
    keys.into_iter()
        .map(|(mode, rate)| {
            let outs: Vec<&ModelOutcome> = records
                .iter()
                .filter(|r| r.rate == rate)
                .flat_map(|r| r.outcomes.iter().filter(|o| o.mode == mode))
                .collect();
            let accs: Vec<f64> = outs.iter().map(|o| o.acc_post).collect();
            let merits: Vec<f64> = outs.iter().map(|o| o.merit).collect();
            let dets: Vec<f64> = outs.iter().filter_map(|o| o.deterioration).collect();
            let (acc_mean, acc_std) = mean_std(&accs);
            let (merit_mean, merit_std) = mean_std(&merits);
            RateSummary {
                mode,
                rate,
                acc_mean,
                acc_std,
                merit_mean,
                merit_std,
                deterioration_mean: (!dets.is_empty()).then(|| mean_std(&dets).0),
            }
        })
        .collect()
}

/// Test accuracy of `model` on the clean graph through the sweep's
/// inference path; equals the accuracy reported at the end of training.
pub fn clean_accuracy(model: &GcnModel, sd: &SweepData<'_>) -> Result<f64> {
    Ok(prediction_accuracy(
        &predictions(model, sd.graph, sd)?,
        sd.data,
    ))
}

fn prediction_accuracy(pred: &[usize], data: &NodeData) -> f64 {
    let test = &data.splits.test;
    if test.is_empty() {
        return 0.0;
    }
    let hits = test
        .iter()
        .filter(|&&i| data.labels[i].get() == Some(pred[i]))
        .count();
    hits as f64 / test.len() as f64
}
