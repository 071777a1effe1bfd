mod common;

use common::*;
use deepsta::graphs::{build_courier_graph, normalize_adjacency, CourierGraph};
use deepsta::node2vec::{embed, generate_walks, train_skipgram, WalkConfig};
use deepsta::rng;
use proptest::prelude::*;
use rand::Rng;

fn random_courier_graph(n: usize, seed: u64) -> CourierGraph {
    let mut r = rng::stream(seed, &[]);
    let series: Vec<Vec<f64>> = (0..n).map(|_| (0..12).map(|_| r.random::<f64>()).collect()).collect();
    build_courier_graph(&series).unwrap()
}

/// Largest |eigenvalue| of a symmetric matrix by power iteration.
fn spectral_radius(a: &[f64], n: usize) -> f64 {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.37).collect();
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    lambda
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn courier_graph_symmetric_clipped_and_repeatable(n in 1usize..9, seed in 0u64..100_000) {
        let g = random_courier_graph(n, seed);
        for i in 0..n {
            prop_assert_eq!(g.weight(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(g.weight(i, j), g.weight(j, i));
                prop_assert!((0.0..=1.0).contains(&g.weight(i, j)));
            }
        }
        prop_assert_eq!(g, random_courier_graph(n, seed));
    }

    #[test]
    fn normalized_adjacency_symmetric_with_unit_spectral_bound(n in 1usize..9, seed in 0u64..100_000) {
        let a = normalize_adjacency(&random_courier_graph(n, seed));
        let t = a.tensor();
        for i in 0..n {
            for j in 0..n {
                prop_assert!(t.get(i, j).is_finite());
                prop_assert_eq!(t.get(i, j), t.get(j, i));
            }
        }
        let rho = spectral_radius(t.data(), n);
        prop_assert!(rho <= 1.0 + 1e-9, "spectral radius {}", rho);
    }

    #[test]
    fn uniform_weights_give_unit_row_sums(n in 1usize..9, w in 0.01f64..1.0) {
        let mut weights = vec![w; n * n];
        for i in 0..n {
            weights[i * n + i] = 0.0;
        }
        let a = normalize_adjacency(&CourierGraph::from_weights(n, weights).unwrap());
        for s in a.row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn first_order_walks_follow_edge_weights() {
    for seed in 0..3 {
        let g = random_weighted_graph(6, seed);
        let tv = walk_transition_tv(&g, 100_000, seed);
        assert!(tv < 0.01, "seed {seed}: total variation {tv}");
    }
}

#[test]
fn walk_corpus_shape_and_determinism() {
    let g = random_weighted_graph(7, 4);
    let cfg = WalkConfig {
        walks_per_node: 3,
        walk_length: 9,
        seed: 11,
        ..WalkConfig::default()
    };
    let walks = generate_walks(&g, &cfg).unwrap();
    assert_eq!(walks.len(), 21);
    assert!(walks.iter().all(|w| w.len() == 9));
    assert_eq!(walks, generate_walks(&g, &cfg).unwrap());
}

#[test]
fn barbell_cliques_separate_for_every_seed() {
    for seed in 0..5 {
        let (intra, inter) = barbell_separation(seed);
        assert!(intra > inter, "seed {seed}: intra {intra} inter {inter}");
    }
}

#[test]
fn skipgram_loss_falls_and_embedding_is_repeatable() {
    let g = barbell();
    let cfg = WalkConfig::default();
    let out = embed(&g, &cfg).unwrap();
    assert_eq!(out.embedding.0.shape(), &[20, 128]);
    assert!(out.epoch_losses[0] > *out.epoch_losses.last().unwrap());
    assert!(out.embedding.0.is_finite());
    let walks = generate_walks(&g, &cfg).unwrap();
    assert_eq!(train_skipgram(&walks, 20, &cfg).unwrap().embedding, out.embedding);
}
