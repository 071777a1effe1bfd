//! Fixtures shared by the kernel benchmarks.

use deepsta::autodiff::Tensor;
use deepsta::graphs::WeightedGraph;
use deepsta::node2vec::WalkConfig;
use deepsta::rng;
use deepsta::scenario::{generate, ScenarioConfig};
use deepsta::training::TrainingData;
use rand::Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, &[rows as u64, cols as u64]);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Grid of `side x side` nodes with random positive weights.
pub fn grid_graph(side: usize, seed: u64) -> WeightedGraph {
    let mut r = rng::stream(seed, &[]);
    let mut edges = Vec::new();
    for i in 0..side {
        for j in 0..side {
            let v = i * side + j;
            if j + 1 < side {
                edges.push((v, v + 1, r.random_range(0.1..1.0)));
            }
            if i + 1 < side {
                edges.push((v, v + side, r.random_range(0.1..1.0)));
            }
        }
    }
    WeightedGraph::undirected(side * side, edges)
}

/// Default-sized scenario with a cheap embedding.
pub fn default_data() -> TrainingData {
    let panel = generate(&ScenarioConfig::default()).unwrap();
    let walk = WalkConfig {
        walks_per_node: 2,
        epochs: 1,
        ..WalkConfig::default()
    };
    TrainingData::build(&panel, &walk).unwrap()
}
