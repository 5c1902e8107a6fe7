use std::collections::BTreeSet;

use graphpow::adversarial::{
    attack_deterioration, attacked_node_set, clean_accuracy, dice_attack, evasion_sweep,
    inference_propagation, SweepConfig, SweepData, TrainedSet,
};
use graphpow::graph::{Graph, Label, SbmParams};
use graphpow::io::Dataset;
use graphpow::nn::{predict, prepare_features, train, HyperParams, OperatorMode, TrainResult};
use graphpow::synthetic::{sbm_dataset, SyntheticConfig};

fn edge_set(g: &Graph) -> BTreeSet<(usize, usize)> {
    g.edges().into_iter().collect()
}

/// Independent check of every DICE invariant.
fn check_dice(g: &Graph, labels: &[Label], rate: f64, seed: u64) {
    let (p, edit) = dice_attack(g, labels, rate, seed).unwrap();
    let before = edge_set(g);
    let after = edge_set(&p);
    assert_eq!(edit.len(), (rate * g.num_edges() as f64).round() as usize);
    let mut expect = before.clone();
    for &(i, j) in &edit.removed {
        assert!(
            i < j && before.contains(&(i, j)),
            "removed non-edge ({i},{j})"
        );
        assert!(labels[i].is_labeled() && labels[i] == labels[j]);
        assert!(expect.remove(&(i, j)), "removed twice");
    }
    for &(i, j) in &edit.added {
        assert!(
            i < j && !before.contains(&(i, j)),
            "added existing ({i},{j})"
        );
        assert!(labels[i].is_labeled() && labels[j].is_labeled() && labels[i] != labels[j]);
        assert!(expect.insert((i, j)), "added twice");
    }
    assert_eq!(after, expect);
    assert!(p.check_invariants().is_ok());
    assert!(edit.verify(g, labels, &p).is_ok());
}

fn dataset(n: usize, seed: u64) -> Dataset {
    let mut cfg = SyntheticConfig::new(SbmParams::new(n, 2, 10.0, 2.0, seed).unwrap());
    cfg.feature_dim = 60;
    sbm_dataset(&cfg).unwrap()
}

#[test]
fn dice_invariants_hold_across_rates() {
    let ds = dataset(400, 1);
    for (k, rate) in [0.0, 0.05, 0.1, 0.3, 0.7, 1.0].into_iter().enumerate() {
        check_dice(&ds.graph, &ds.data.labels, rate, k as u64);
    }
}

#[test]
fn dice_invariants_with_sampled_insertions() {
    // above the enumeration cutoff insertions are drawn by rejection sampling
    let ds = dataset(3000, 2);
    check_dice(&ds.graph, &ds.data.labels, 0.2, 5);
}

#[test]
fn dice_skips_unlabeled_nodes() {
    let ds = dataset(200, 3);
    let mut labels = ds.data.labels.clone();
    for l in labels.iter_mut().step_by(3) {
        *l = Label::UNLABELED;
    }
    check_dice(&ds.graph, &labels, 0.5, 0);
}

#[test]
fn dice_is_deterministic() {
    let ds = dataset(300, 4);
    let a = dice_attack(&ds.graph, &ds.data.labels, 0.15, 9).unwrap();
    let b = dice_attack(&ds.graph, &ds.data.labels, 0.15, 9).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.edges(), b.0.edges());
    let c = dice_attack(&ds.graph, &ds.data.labels, 0.15, 10).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn attacked_set_is_monotone_and_saturates() {
    let ds = dataset(300, 5);
    let (_, edit) = dice_attack(&ds.graph, &ds.data.labels, 0.02, 0).unwrap();
    let mut prev: Vec<usize> = Vec::new();
    for scope in 1..6 {
        let s = attacked_node_set(&ds.graph, &edit, 1, scope);
        assert!(prev.iter().all(|v| s.contains(v)));
        prev = s;
    }
    let (_, all) = dice_attack(&ds.graph, &ds.data.labels, 1.0, 0).unwrap();
    let touched = all.endpoints();
    let s = attacked_node_set(&ds.graph, &all, 2, 1);
    assert!(touched.iter().all(|v| s.contains(v)));
}

fn trained(ds: &Dataset, mode: OperatorMode, seed: u64) -> TrainResult {
    let mut h = HyperParams::for_mode(mode, 3).with_seed(seed);
    h.epochs = 60;
    train(ds, mode, &h).unwrap()
}

#[test]
fn sweep_at_rate_zero_reproduces_training_accuracy() {
    let ds = dataset(300, 6);
    let x = prepare_features(&ds.data, &HyperParams::default());
    let sd = SweepData {
        name: &ds.name,
        graph: &ds.graph,
        data: &ds.data,
        features: &x,
    };
    let mut sets = Vec::new();
    let mut accs = Vec::new();
    for mode in OperatorMode::ALL {
        let runs: Vec<TrainResult> = (0..2).map(|s| trained(&ds, mode, s)).collect();
        for r in &runs {
            assert_eq!(clean_accuracy(&r.model, &sd).unwrap(), r.test_acc);
        }
        accs.push(runs.iter().map(|r| r.test_acc).collect::<Vec<_>>());
        sets.push(TrainedSet {
            mode,
            models: runs.into_iter().map(|r| r.model).collect(),
        });
    }
    let cfg = SweepConfig {
        rates: vec![0.0],
        attack_seeds: vec![0],
        layers: 2,
    };
    let recs = evasion_sweep(sd, &sets, &cfg).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].edits, 0);
    for (o, want) in recs[0].outcomes.iter().zip(&accs) {
        assert_eq!(&o.acc_post_runs, want);
        assert_eq!(o.n_attacked, 0);
        assert_eq!(o.deterioration, None);
    }
    let vanilla = recs[0]
        .outcomes
        .iter()
        .find(|o| o.mode == OperatorMode::Vanilla)
        .unwrap();
    assert_eq!(vanilla.merit, 0.0);
    for o in &recs[0].outcomes {
        assert_eq!(o.merit, o.acc_post - vanilla.acc_post);
    }
}

#[test]
fn deterioration_matches_recomputation_from_predictions() {
    let ds = dataset(300, 7);
    let x = prepare_features(&ds.data, &HyperParams::default());
    let run = trained(&ds, OperatorMode::Vanilla, 0);
    let (perturbed, edit) = dice_attack(&ds.graph, &ds.data.labels, 0.2, 3).unwrap();
    let pred = |g: &Graph| {
        let prop = inference_propagation(g, &ds.data.features, &run.model).unwrap();
        predict(&run.model, &prop, &x).unwrap().row_argmax()
    };
    let pre = pred(&ds.graph);
    let post = pred(&perturbed);
    let attacked = attacked_node_set(&ds.graph, &edit, 2, 1);
    // straight-line recomputation
    let test = &ds.data.splits.test;
    let nodes: Vec<usize> = test
        .iter()
        .copied()
        .filter(|i| attacked.contains(i))
        .collect();
    assert!(!nodes.is_empty());
    let correct = |p: &[usize]| {
        nodes
            .iter()
            .filter(|&&i| ds.data.labels[i] == Label::class(p[i]))
            .count() as f64
            / nodes.len() as f64
    };
    let want = 1.0 - correct(&post) / correct(&pre);
    let got = attack_deterioration(&pre, &post, &ds.data.labels, &attacked, test).unwrap();
    assert!((got - want).abs() < 1e-15);
    // identical predictions → 0; nodes outside the attacked set never change
    assert_eq!(
        attack_deterioration(&pre, &pre, &ds.data.labels, &attacked, test),
        Some(0.0)
    );
    for i in 0..ds.graph.n() {
        if !attacked.contains(&i) {
            assert_eq!(pre[i], post[i], "node {i} outside the attacked set changed");
        }
    }
    // through the sweep machinery
    let sd = SweepData {
        name: &ds.name,
        graph: &ds.graph,
        data: &ds.data,
        features: &x,
    };
    let cfg = SweepConfig {
        rates: vec![0.2],
        attack_seeds: vec![3],
        layers: 2,
    };
    let rec = &evasion_sweep(
        sd,
        &[TrainedSet {
            mode: OperatorMode::Vanilla,
            models: vec![run.model.clone()],
        }],
        &cfg,
    )
    .unwrap()[0];
    assert_eq!(rec.outcomes[0].deterioration, Some(got));
    assert_eq!(rec.outcomes[0].n_attacked, attacked.len());
}
