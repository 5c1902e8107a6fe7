//! Subcommand implementations. Each writes its outputs plus a manifest under
//! the configured output directory.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;

use graphpow::adversarial::{evasion_sweep, summarize_sweep, SweepConfig, SweepData, TrainedSet};
use graphpow::graph::{sbm_generate, sigma};
use graphpow::io::{load_graph_text, Dataset};
use graphpow::nn::{
    build_propagation, embed, load_weights, prepare_features, train_prepared, weights_to_text,
    GcnModel, OperatorMode, TrainResult,
};
use graphpow::powering::{
    assemble_power_operator, degree_histogram, distance_adjacency_family, histogram_mean,
    powered_graph, sparsify, Budget, ThetaVector,
};
use graphpow::protocol::{mean_std, top_by_validation, RunScore};
use graphpow::spectral::{
    normalized_adjacency, overlap, recover_communities, separation_of, EigenOptions, MatrixPower,
    SeparationReport, SymmetricOperator,
};
use graphpow::synthetic::sbm_dataset;

use crate::config::{ConfigError, DataSource, ExperimentConfig};
use crate::output::{atomic_with, atomic_write, hash_inputs, write_json, write_manifest};

fn load_data(cfg: &ExperimentConfig) -> anyhow::Result<(Dataset, BTreeMap<String, String>)> {
    match &cfg.data {
        None => Err(ConfigError::Invalid(
            "no data source: set data.dataset or the [sbm] section".into(),
        )
        .into()),
        Some(DataSource::Bundle { path, name }) => {
            let (mut ds, report) = load_graph_text(path)?;
            if let Some(n) = name {
                ds.name = n.clone();
            }
            log::info!(
                "loaded {}: n={} |E|={} d={} classes={} labeled={}",
                ds.name,
                ds.graph.n(),
                ds.graph.num_edges(),
                ds.data.features.ncols(),
                ds.data.num_classes,
                report.labeled
            );
            Ok((ds, hash_inputs(path)?))
        }
        Some(DataSource::Sbm(s)) => Ok((sbm_dataset(s)?, BTreeMap::new())),
    }
}

pub fn power(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let (ds, inputs) = load_data(cfg)?;
    let out = &cfg.out;
    let r = cfg.r;
    let family = distance_adjacency_family(&ds.graph, r)?;
    for k in 0..=r {
        let m = family.exact(k).to_matrix(1.0);
        atomic_with(&out.join(format!("A_{k}.txt")), |p| m.write_triplets(p))?;
    }
    let budget = cfg.hyper.budget()?;
    let pruned = if budget != Budget::KeepAll {
        let (pruned, stats) = sparsify(
            family.clone(),
            &ds.data.features,
            cfg.hyper.aloofness,
            budget,
        )?;
        for k in 0..=r {
            let m = pruned.layer(k).to_matrix(1.0);
            atomic_with(&out.join(format!("Abar_{k}.txt")), |p| m.write_triplets(p))?;
        }
        write_json(&out.join("sparsify_stats.json"), &stats)?;
        Some(pruned)
    } else {
        None
    };

    #[derive(Serialize)]
    struct LayerSummary {
        k: usize,
        nnz_exact: usize,
        nnz_pruned: Option<usize>,
        powered_edges: usize,
        powered_mean_degree: f64,
    }
    let mut layers = Vec::new();
    for k in 1..=r {
        let g = powered_graph(&ds.graph, k)?;
        let hist = degree_histogram(&g, cfg.bin_cap);
        let mut csv = String::from("degree,count\n");
        for (d, c) in hist.iter().enumerate() {
            let label = if d == cfg.bin_cap {
                format!(">={d}")
            } else {
                d.to_string()
            };
            csv.push_str(&format!("{label},{c}\n"));
        }
        atomic_write(&out.join(format!("degree_hist_{k}.csv")), csv.as_bytes())?;
        layers.push(LayerSummary {
            k,
            nnz_exact: family.exact(k).nnz(),
            nnz_pruned: pruned.as_ref().map(|p| p.layer(k).nnz()),
            powered_edges: g.num_edges(),
            powered_mean_degree: g.mean_degree(),
        });
        log::info!(
            "G^({k}): {} edges, mean degree {:.2} (histogram mean {:.2})",
            g.num_edges(),
            g.mean_degree(),
            histogram_mean(&hist)
        );
    }
    write_json(&out.join("summary.json"), &layers)?;
    write_manifest(out, "power", &cfg.raw, inputs)
}

fn dump_matrix(m: &graphpow::dense::Matrix) -> String {
    let mut s = format!("{} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

fn run_name(mode: OperatorMode, seed: u64) -> String {
    format!("{mode}-seed{seed}")
}

/// Train every configured seed for `mode`; per-seed artifacts go to `out`.
fn train_seeds(
    ds: &Dataset,
    mode: OperatorMode,
    hyper: &graphpow::nn::HyperParams,
    seeds: &[u64],
    out: &Path,
    dump_embeddings: bool,
) -> anyhow::Result<Vec<TrainResult>> {
    let prop = build_propagation(&ds.graph, &ds.data.features, mode, hyper)?;
    let x = prepare_features(&ds.data, hyper);
    seeds
        .par_iter()
        .map(|&seed| -> anyhow::Result<TrainResult> {
            let h = hyper.clone().with_seed(seed);
            let res = train_prepared(&prop, &x, &ds.data, mode, &h, &ds.name)?;
            let name = run_name(mode, seed);
            write_json(&out.join("runs").join(format!("{name}.json")), &res)?;
            atomic_write(
                &out.join("weights").join(format!("{name}.txt")),
                weights_to_text(&res.model).as_bytes(),
            )?;
            if dump_embeddings {
                let h1 = embed(&res.model, &prop, &x)?;
                atomic_write(
                    &out.join("embeddings").join(format!("{name}.txt")),
                    dump_matrix(&h1).as_bytes(),
                )?;
            }
            log::info!("{name}: test {:.4} val {:.4}", res.test_acc, res.val_acc);
            Ok(res)
        })
        .collect()
}

pub fn train(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let (ds, inputs) = load_data(cfg)?;
    let results = train_seeds(&ds, cfg.mode, &cfg.hyper, &cfg.seeds, &cfg.out, true)?;
    let scores: Vec<RunScore> = results
        .iter()
        .map(|r| RunScore {
            seed: r.seed,
            val_acc: r.val_acc,
            test_acc: r.test_acc,
        })
        .collect();
    let keep = if cfg.keep_top == 0 {
        scores.len().div_ceil(2)
    } else {
        cfg.keep_top
    };
    let top = top_by_validation(&scores, keep);
    let all: Vec<f64> = scores.iter().map(|s| s.test_acc).collect();
    let (mean_all, std_all) = mean_std(&all);
    let theta_mean: Option<Vec<f64>> = results.first().and_then(|r| r.theta.as_ref()).map(|t| {
        (0..t.len())
            .map(|k| {
                let v: Vec<f64> = results
                    .iter()
                    .filter_map(|r| r.theta.as_ref().map(|t| t[k]))
                    .collect();
                mean_std(&v).0
            })
            .collect()
    });

    #[derive(Serialize)]
    struct Summary<'a> {
        mode: OperatorMode,
        dataset: &'a str,
        top: graphpow::protocol::SweepSummary,
        mean_test_all: f64,
        std_test_all: f64,
        theta_mean: Option<Vec<f64>>,
    }
    let summary = Summary {
        mode: cfg.mode,
        dataset: &ds.name,
        top,
        mean_test_all: mean_all,
        std_test_all: std_all,
        theta_mean,
    };
    println!(
        "{} {}: top-{} mean test accuracy {:.2}% ± {:.2} over {} runs",
        ds.name,
        cfg.mode,
        summary.top.kept,
        100.0 * summary.top.mean_test,
        100.0 * summary.top.std_test,
        summary.top.runs
    );
    write_json(&cfg.out.join("summary.json"), &summary)?;
    write_manifest(&cfg.out, "train", &cfg.raw, inputs)
}

pub fn attack(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let (ds, mut inputs) = load_data(cfg)?;
    if !cfg.attack.modes.contains(&OperatorMode::Vanilla) {
        return Err(ConfigError::Invalid(
            "attack.modes must include vanilla (the baseline)".into(),
        )
        .into());
    }
    let mut sets = Vec::new();
    for &mode in &cfg.attack.modes {
        let hyper = cfg.attack_hyper(mode);
        let models: Vec<GcnModel> = if cfg.attack.train_inline {
            train_seeds(&ds, mode, &hyper, &cfg.seeds, &cfg.out, false)?
                .into_iter()
                .map(|r| r.model)
                .collect()
        } else {
            let dir = cfg.attack.weights_dir.as_ref().ok_or_else(|| {
                ConfigError::Invalid(
                    "attack.train_inline is false but attack.weights_dir is not set".into(),
                )
            })?;
            let mut models = Vec::new();
            for &seed in &cfg.seeds {
                let path = dir.join(format!("{}.txt", run_name(mode, seed)));
                if !path.is_file() {
                    return Err(ConfigError::Invalid(format!(
                        "missing weights {} (train them first or enable attack.train_inline)",
                        path.display()
                    ))
                    .into());
                }
                let w = load_weights(&path)?;
                let mut m = GcnModel::new(
                    ds.data.features.ncols(),
                    ds.data.num_classes,
                    mode,
                    hyper.clone().with_seed(seed),
                )?;
                if w.w1.shape() != m.w1.shape() || w.w2.shape() != m.w2.shape() {
                    return Err(ConfigError::Invalid(format!(
                        "{}: weight shapes {:?}/{:?} do not match the dataset",
                        path.display(),
                        w.w1.shape(),
                        w.w2.shape()
                    ))
                    .into());
                }
                if mode == OperatorMode::Vpn && w.theta.as_ref().map(|t| t.order()) != Some(hyper.r)
                {
                    return Err(ConfigError::Invalid(format!(
                        "{}: theta missing or not of order {}",
                        path.display(),
                        hyper.r
                    ))
                    .into());
                }
                m.w1 = w.w1;
                m.w2 = w.w2;
                if mode == OperatorMode::Vpn {
                    m.theta = w.theta;
                }
                inputs.extend(hash_inputs(&path)?);
                models.push(m);
            }
            models
        };
        sets.push(TrainedSet { mode, models });
    }
    let x = prepare_features(&ds.data, &cfg.hyper);
    let sd = SweepData {
        name: &ds.name,
        graph: &ds.graph,
        data: &ds.data,
        features: &x,
    };
    let sweep = SweepConfig {
        rates: cfg.attack.rates.clone(),
        attack_seeds: cfg.attack.attack_seeds.clone(),
        layers: cfg.attack.layers,
    };
    let records = evasion_sweep(sd, &sets, &sweep)?;

    let path = cfg.out.join("robustness.csv");
    atomic_with(&path, |p| -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record([
            "dataset",
            "mode",
            "rate",
            "seed",
            "acc_post",
            "merit",
            "deterioration",
            "n_attacked",
        ])?;
        for rec in &records {
            for o in &rec.outcomes {
                w.write_record([
                    rec.dataset.clone(),
                    o.mode.to_string(),
                    rec.rate.to_string(),
                    rec.seed.to_string(),
                    format!("{:.4}", 100.0 * o.acc_post),
                    format!("{:.4}", 100.0 * o.merit),
                    o.deterioration
                        .map(|d| format!("{:.4}", 100.0 * d))
                        .unwrap_or_default(),
                    o.n_attacked.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;

    let summary: Vec<_> = summarize_sweep(&records)
        .into_iter()
        .map(|mut s| {
            s.acc_mean *= 100.0;
            s.acc_std *= 100.0;
            s.merit_mean *= 100.0;
            s.merit_std *= 100.0;
            s.deterioration_mean = s.deterioration_mean.map(|d| 100.0 * d);
            s
        })
        .collect();
    for s in &summary {
        println!(
            "{} rate {:.2}: acc {:.2} ± {:.2}, merit {:+.2}",
            s.mode, s.rate, s.acc_mean, s.acc_std, s.merit_mean
        );
    }
    #[derive(Serialize)]
    struct AttackSummary<'a> {
        dataset: &'a str,
        rates: Vec<graphpow::adversarial::RateSummary>,
        records: &'a [graphpow::adversarial::RobustnessRecord],
    }
    write_json(
        &cfg.out.join("robustness_summary.json"),
        &AttackSummary {
            dataset: &ds.name,
            rates: summary,
            records: &records,
        },
    )?;
    write_manifest(&cfg.out, "attack", &cfg.raw, inputs)
}

#[derive(Debug, Serialize)]
struct BenchCell {
    r: usize,
    seed: u64,
    operator: &'static str,
    report: Option<SeparationReport>,
    overlap: Option<f64>,
    /// Fraction of nodes on the right side, up to a global flip.
    agreement: Option<f64>,
    error: Option<String>,
}

fn bench_operator(
    name: &'static str,
    op: &dyn SymmetricOperator,
    r: usize,
    theta_l1: f64,
    seed: u64,
    truth: &[f64],
    opts: &EigenOptions,
) -> BenchCell {
    let result = separation_of(op, r, theta_l1, opts).and_then(|rep| {
        let labels = recover_communities(op, opts)?;
        Ok((rep, overlap(&labels, truth)))
    });
    match result {
        Ok((rep, ov)) => BenchCell {
            r,
            seed,
            operator: name,
            report: Some(rep),
            overlap: Some(ov),
            agreement: Some(0.5 * (1.0 + ov)),
            error: None,
        },
        Err(e) => {
            log::warn!("{name} r={r} seed={seed}: {e}");
            BenchCell {
                r,
                seed,
                operator: name,
                report: None,
                overlap: None,
                agreement: None,
                error: Some(e.to_string()),
            }
        }
    }
}

pub fn sbm_bench(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let params = cfg
        .sbm
        .ok_or_else(|| ConfigError::Invalid("sbm-bench needs the [sbm] section".into()))?;
    println!(
        "SBM n={} k={} a={} b={}: xi1={:.3} xi2={:.3} xi2^2/xi1={:.3}",
        params.n(),
        params.k(),
        params.a_intra(),
        params.a_inter(),
        params.xi1(),
        params.xi2(),
        params.snr()
    );
    if params.snr() <= 1.0 {
        log::warn!(
            "xi2^2/xi1 = {:.3} ≤ 1: below the recovery threshold",
            params.snr()
        );
    }
    let cells: Vec<(usize, u64)> = cfg
        .bench
        .r_values
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let results: Vec<Vec<BenchCell>> = cells
        .par_iter()
        .map(|&(r, seed)| -> anyhow::Result<Vec<BenchCell>> {
            let (g, community) = sbm_generate(&params.with_seed(seed));
            let truth = sigma(&community);
            let opts = EigenOptions {
                tol: cfg.bench.tol,
                max_iter: cfg.bench.max_iter,
                seed,
            };
            let family = distance_adjacency_family(&g, r)?;
            let theta = ThetaVector::ones(r);
            let vpo = assemble_power_operator(&family, &theta)?;
            let a = g.adjacency_matrix();
            let na = normalized_adjacency(&g);
            Ok(vec![
                bench_operator(
                    "variable_power",
                    &vpo,
                    r,
                    theta.l1_norm(),
                    seed,
                    &truth,
                    &opts,
                ),
                bench_operator("adjacency", &a, 1, 1.0, seed, &truth, &opts),
                bench_operator(
                    "matrix_power",
                    &MatrixPower { base: &a, power: r },
                    r,
                    1.0,
                    seed,
                    &truth,
                    &opts,
                ),
                bench_operator("normalized_adjacency", &na, 1, 1.0, seed, &truth, &opts),
            ])
        })
        .collect::<anyhow::Result<_>>()?;
    let cells: Vec<BenchCell> = results.into_iter().flatten().collect();

    let path = cfg.out.join("sbm_bench.csv");
    atomic_with(&path, |p| -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record([
            "r",
            "seed",
            "operator",
            "lambda1",
            "lambda2",
            "lambda3",
            "gap12",
            "gap23",
            "overlap",
            "agreement",
            "error",
        ])?;
        let num = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for c in &cells {
            let rep = c.report.as_ref();
            w.write_record([
                c.r.to_string(),
                c.seed.to_string(),
                c.operator.to_string(),
                num(rep.map(|x| x.lambda1)),
                num(rep.map(|x| x.lambda2)),
                num(rep.map(|x| x.lambda3)),
                num(rep.map(|x| x.gap12)),
                num(rep.map(|x| x.gap23)),
                num(c.overlap),
                num(c.agreement),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    for &r in &cfg.bench.r_values {
        for op in [
            "variable_power",
            "adjacency",
            "matrix_power",
            "normalized_adjacency",
        ] {
            let sel: Vec<&BenchCell> = cells
                .iter()
                .filter(|c| c.r == r && c.operator == op)
                .collect();
            let gaps: Vec<f64> = sel
                .iter()
                .filter_map(|c| c.report.as_ref().map(|x| x.gap23))
                .collect();
            let ovs: Vec<f64> = sel.iter().filter_map(|c| c.overlap).collect();
            println!(
                "r={r} {op:>20}: mean gap23 {:.3}, mean overlap {:.3}",
                mean_std(&gaps).0,
                mean_std(&ovs).0
            );
        }
    }
    write_json(&cfg.out.join("sbm_bench.json"), &cells)?;
    write_manifest(&cfg.out, "sbm-bench", &cfg.raw, BTreeMap::new()).context("writing manifest")
}
