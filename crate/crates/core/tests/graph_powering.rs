mod common;

use common::*;
use graphpow::graph::{
    ball, bounded_bfs, invert_permutation, permute_graph, sbm_generate, Distance, Graph, SbmParams,
};
use graphpow::powering::{
    assemble_power_operator, distance_adjacency_family, powered_graph, sparsify, vpn_convolution,
    Aloofness, Budget, ThetaVector,
};
use graphpow::sparse::CsrMatrix;
use proptest::prelude::*;
use rand::Rng;

fn bfs_distance(d: Distance) -> usize {
    if d == graphpow::graph::UNREACHABLE {
        UNREACHABLE
    } else {
        d as usize
    }
}

#[test]
fn bounded_bfs_matches_floyd_warshall_clipped() {
    for seed in 0..5 {
        let g = gnp(50, 0.1, seed);
        let fw = floyd_warshall(&g);
        for s in 0..g.n() {
            let got = bounded_bfs(&g, s, 4);
            for t in 0..g.n() {
                let want = if fw[s][t] <= 4 { fw[s][t] } else { UNREACHABLE };
                assert_eq!(bfs_distance(got[t]), want, "seed {seed} {s}->{t}");
            }
        }
    }
}

#[test]
fn unbounded_bfs_is_exact_on_small_graphs() {
    for seed in 0..10 {
        let n = 20 + (seed as usize * 5);
        let g = gnp(n, 0.06, 100 + seed);
        let fw = floyd_warshall(&g);
        for s in 0..n {
            let got = bounded_bfs(&g, s, n);
            for t in 0..n {
                assert_eq!(bfs_distance(got[t]), fw[s][t]);
            }
        }
    }
}

#[test]
fn sbm_mean_edge_count() {
    let p = SbmParams::new(1000, 2, 14.0, 2.0, 0).unwrap();
    let (pin, pout): (f64, f64) = (14.0 / 1000.0, 2.0 / 1000.0);
    let pairs_in: f64 = 2.0 * (500.0 * 499.0 / 2.0);
    let pairs_out: f64 = 500.0 * 500.0;
    // 2·C(500,2)·14/1000 + 500²·2/1000 = 3493 + 500
    let mean = pairs_in * pin + pairs_out * pout;
    assert!((mean - 3993.0).abs() < 1e-9);
    let var = pairs_in * pin * (1.0 - pin) + pairs_out * pout * (1.0 - pout);
    let seeds = 200;
    let mut total = 0.0;
    let (mut intra, mut inter) = (0.0, 0.0);
    for s in 0..seeds {
        let (g, comm) = sbm_generate(&p.with_seed(s));
        assert!(g.check_invariants().is_ok());
        assert_eq!(comm.iter().filter(|&&c| c == 0).count(), 500);
        total += g.num_edges() as f64;
        for (i, j) in g.edges() {
            if comm[i] == comm[j] {
                intra += 1.0;
            } else {
                inter += 1.0;
            }
        }
    }
    let sample_mean = total / seeds as f64;
    let sigma_mean = (var / seeds as f64).sqrt();
    assert!(
        (sample_mean - mean).abs() < 3.0 * sigma_mean,
        "mean {sample_mean} vs {mean} ± {sigma_mean}"
    );
    // intra/inter frequencies separately
    let f_in = intra / (seeds as f64 * pairs_in);
    let f_out = inter / (seeds as f64 * pairs_out);
    let s_in = (pin * (1.0 - pin) / (seeds as f64 * pairs_in)).sqrt();
    let s_out = (pout * (1.0 - pout) / (seeds as f64 * pairs_out)).sqrt();
    assert!((f_in - pin).abs() < 4.0 * s_in, "{f_in} vs {pin}");
    assert!((f_out - pout).abs() < 4.0 * s_out, "{f_out} vs {pout}");
}

#[test]
fn sbm_full_intra_gives_two_cliques() {
    let p = SbmParams::new(20, 2, 20.0, 0.0, 3).unwrap();
    let (g, comm) = sbm_generate(&p);
    assert_eq!(g.num_edges(), 2 * 45);
    for (i, j) in g.edges() {
        assert_eq!(comm[i], comm[j]);
    }
}

#[test]
fn family_matches_floyd_warshall() {
    for seed in 0..5 {
        let g = gnp(40, 0.08, 10 + seed);
        let fw = floyd_warshall(&g);
        let fam = distance_adjacency_family(&g, 4).unwrap();
        for k in 0..=4 {
            let layer = fam.exact(k);
            for i in 0..40 {
                for j in 0..40 {
                    assert_eq!(layer.contains(i, j), fw[i][j] == k, "k={k} ({i},{j})");
                }
            }
        }
    }
}

#[test]
fn powered_graph_is_boolean_power() {
    for seed in 0..5 {
        let g = gnp(30, 0.1, 20 + seed);
        for k in 1..=3 {
            let pg = powered_graph(&g, k).unwrap();
            let bp = boolean_power(&g, k);
            for i in 0..30 {
                for j in 0..30 {
                    if i != j {
                        assert_eq!(pg.has_edge(i, j), bp[i][j]);
                    }
                }
            }
        }
    }
}

#[test]
fn attacked_ball_monotone_in_scope() {
    let g = gnp(60, 0.05, 7);
    let sources = [3, 17];
    let mut prev = ball(&g, &sources, 0);
    for r in 1..6 {
        let b = ball(&g, &sources, r);
        assert!(prev.iter().all(|v| b.contains(v)));
        prev = b;
    }
}

fn arb_graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..max_n).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..3 * n)
            .prop_map(move |e| Graph::from_edges(n, e).unwrap().0)
    })
}

fn arb_graph_and_perm(max_n: usize) -> impl Strategy<Value = (Graph, Vec<usize>)> {
    arb_graph(max_n).prop_flat_map(|g| {
        let n = g.n();
        (Just(g), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
}

fn random_features(n: usize, d: usize, seed: u64) -> CsrMatrix {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if r.gen_bool(0.3) {
                        r.gen_range(0.0..1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    CsrMatrix::from_dense(&to_matrix(&rows))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layers_are_disjoint_and_cover_the_power((g, _) in arb_graph_and_perm(40), r in 1usize..5) {
        let fam = distance_adjacency_family(&g, r).unwrap();
        let bp = boolean_power(&g, r);
        for i in 0..g.n() {
            for j in 0..g.n() {
                let hits = (0..=r).filter(|&k| fam.exact(k).contains(i, j)).count();
                prop_assert!(hits <= 1);
                prop_assert_eq!(hits == 1, bp[i][j]);
            }
        }
    }

    #[test]
    fn family_is_permutation_equivariant((g, perm) in arb_graph_and_perm(30), r in 1usize..4) {
        let pg = permute_graph(&g, &perm).unwrap();
        let f = distance_adjacency_family(&g, r).unwrap();
        let pf = distance_adjacency_family(&pg, r).unwrap();
        for k in 0..=r {
            for (i, j) in f.exact(k).entries() {
                prop_assert!(pf.exact(k).contains(perm[i], perm[j]));
            }
            prop_assert_eq!(f.exact(k).nnz(), pf.exact(k).nnz());
        }
        let back = permute_graph(&pg, &invert_permutation(&perm)).unwrap();
        prop_assert_eq!(back.edges(), g.edges());
    }

    #[test]
    fn sparsify_never_adds_or_drops_near_edges(
        g in arb_graph(30),
        r in 2usize..4,
        factor in 0.0f64..3.0,
        seed in 0u64..1000,
        euclid in any::<bool>(),
    ) {
        let fam = distance_adjacency_family(&g, r).unwrap();
        let x = random_features(g.n(), 6, seed);
        let phi = if euclid { Aloofness::Euclidean } else { Aloofness::Cosine };
        let (p, stats) = sparsify(fam.clone(), &x, phi, Budget::from_factor(factor).unwrap()).unwrap();
        prop_assert_eq!(p.layer(0), fam.exact(0));
        prop_assert_eq!(p.layer(1), fam.exact(1));
        let mut kept = 0;
        for k in 2..=r {
            prop_assert!(p.layer(k).is_subset_of(fam.exact(k)));
            prop_assert!(p.layer(k).is_symmetric());
            kept += p.layer(k).nnz();
        }
        prop_assert_eq!(stats.far_after, kept / 2);
        // every node gets min(budget, candidates) of its own nominations
        for i in 0..g.n() {
            let cand: usize = (2..=r).map(|k| fam.exact(k).row(i).len()).sum();
            let own: usize = (2..=r).map(|k| p.layer(k).row(i).len()).sum();
            let budget = (factor * g.degree(i) as f64).ceil() as usize;
            prop_assert!(own >= budget.min(cand));
        }
    }

    #[test]
    fn vpn_operator_symmetric_and_gershgorin_bounded(
        g in arb_graph(25),
        r in 1usize..4,
        thetas in proptest::collection::vec(-2.0f64..2.0, 4),
    ) {
        let fam = distance_adjacency_family(&g, r).unwrap();
        let theta = ThetaVector::new(thetas[..=r].to_vec()).unwrap();
        let op = assemble_power_operator(&fam, &theta).unwrap();
        let m = vpn_convolution(&op, &g).unwrap();
        let d = dense_of(&m);
        let n = g.n();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(d[i][j].to_bits(), d[j][i].to_bits());
            }
        }
        let bound = d.iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let ev = jacobi_eigenvalues(&d);
        prop_assert!(ev[0].abs() <= bound + 1e-9);
    }
}

#[test]
fn star_plus_far_pair_keeps_similar_features() {
    // star 0-{1,2,3}, plus 3-4; node 4 is at distance 2 from 0, 3 from 1 and 2.
    let g = Graph::from_edges(5, [(0, 1), (0, 2), (0, 3), (3, 4)])
        .unwrap()
        .0;
    let fam = distance_adjacency_family(&g, 2).unwrap();
    let far: Vec<_> = fam.exact(2).entries().filter(|(i, j)| i < j).collect();
    assert_eq!(far, vec![(0, 4), (1, 2), (1, 3), (2, 3)]);
    // 0~4 and 1~3 have identical features; every other far pair is orthogonal
    let rows = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![0.0, 1.0, 0.0],
        vec![1.0, 0.0, 0.0],
    ];
    let x = CsrMatrix::from_dense(&to_matrix(&rows));
    let (p, _) = sparsify(fam, &x, Aloofness::Cosine, Budget::Factor(1.0)).unwrap();
    let kept: Vec<_> = p.layer(2).entries().filter(|(i, j)| i < j).collect();
    // node 0 (deg 3) nominates its only candidate 4 (identical features);
    // node 1 nominates 3 (identical) over 2 (orthogonal); node 2 (deg 1)
    // nominates 1 (tie among orthogonal candidates → smaller index); node 3
    // (deg 2) nominates 1 and 2; node 4 nominates 0.
    assert!(kept.contains(&(0, 4)));
    assert!(kept.contains(&(1, 3)));
    assert_eq!(kept, vec![(0, 4), (1, 2), (1, 3), (2, 3)]);
    let (p0, _) = sparsify(
        distance_adjacency_family(&g, 2).unwrap(),
        &x,
        Aloofness::Cosine,
        Budget::Factor(0.5),
    )
    .unwrap();
    // ceil(0.5·deg): node 0 → 2, nodes 1,2,4 → 1, node 3 → 1.
    // 1 → 3 (identical), 2 → 1 (tie, smaller index), 3 → 1, 4 → 0.
    let kept0: Vec<_> = p0.layer(2).entries().filter(|(i, j)| i < j).collect();
    assert_eq!(kept0, vec![(0, 4), (1, 2), (1, 3)]);
}
