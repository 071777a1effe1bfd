//! District embeddings from second-order biased random walks and skip-gram
//! with negative sampling.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graphs::WeightedGraph;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    /// Return parameter; the previous node is weighted by `1/p`.
    pub p: f64,
    /// In-out parameter; nodes not adjacent to the previous node get `1/q`.
    pub q: f64,
    pub window_size: usize,
    pub negative_samples: usize,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 10,
            walk_length: 40,
            p: 1.0,
            q: 1.0,
            window_size: 5,
            negative_samples: 5,
            embedding_dim: 128,
            epochs: 5,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.q > 0.0) {
            return Err(Error::Config(format!("p and q must be positive (p={}, q={})", self.p, self.q)));
        }
        if self.walk_length < self.window_size + 1 {
            return Err(Error::Config(format!(
                "walk_length {} must be at least window_size + 1 = {}",
                self.walk_length,
                self.window_size + 1
            )));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Walker's alias method: O(1) draws from a fixed discrete distribution.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    /// `weights` must be non-negative with a positive sum.
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        let mut prob: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut alias = vec![0; n];
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| prob[i] < 1.0);
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            alias[s] = l;
            prob[l] -= 1.0 - prob[s];
            if prob[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        for i in large.into_iter().chain(small) {
            prob[i] = 1.0;
        }
        AliasTable { prob, alias }
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

/// Precomputed first- and second-order transition tables for one graph.
pub struct WalkSampler<'g> {
    graph: &'g WeightedGraph,
    first: Vec<Option<AliasTable>>,
    /// `second[t][k]`: transitions out of the k-th neighbour of `t`, having
    /// arrived from `t`.
    second: Vec<Vec<Option<AliasTable>>>,
}

impl<'g> WalkSampler<'g> {
    pub fn new(graph: &'g WeightedGraph, p: f64, q: f64) -> Self {
        let n = graph.node_count();
        let table = |ws: Vec<f64>| (!ws.is_empty() && ws.iter().sum::<f64>() > 0.0).then(|| AliasTable::new(&ws));
        let first = (0..n)
            .map(|v| table(graph.neighbors(v).iter().map(|&(_, w)| w).collect()))
            .collect();
        let second = (0..n)
            .map(|t| {
                graph
                    .neighbors(t)
                    .iter()
                    .map(|&(v, _)| {
                        let ws = graph
                            .neighbors(v)
                            .iter()
                            .map(|&(x, w)| {
                                if x == t {
                                    w / p
                                } else if graph.has_edge(t, x) {
                                    w
                                } else {
                                    w / q
                                }
                            })
                            .collect();
                        table(ws)
                    })
                    .collect()
            })
            .collect();
        WalkSampler { graph, first, second }
    }

    /// One walk of at most `length` nodes; stops early at a sink.
    pub fn walk<R: Rng + ?Sized>(&self, start: usize, length: usize, rng: &mut R) -> Vec<usize> {
        let mut walk = Vec::with_capacity(length);
        walk.push(start);
        if length < 2 {
            return walk;
        }
        let Some(t0) = &self.first[start] else {
            return walk;
        };
        let mut prev = start;
        let mut k = t0.sample(rng);
        let mut cur = self.graph.neighbors(start)[k].0;
        walk.push(cur);
        while walk.len() < length {
            let Some(t) = &self.second[prev][k] else {
                break;
            };
            let next_k = t.sample(rng);
            let next = self.graph.neighbors(cur)[next_k].0;
            // Index of `next` in `cur`'s neighbour list is `next_k`.
            prev = cur;
            k = next_k;
            cur = next;
            walk.push(cur);
        }
        walk
    }
}

/// `walks_per_node` walks from every node; each walk draws from its own
/// stream keyed by `(seed, round, node)`.
pub fn generate_walks(g: &WeightedGraph, cfg: &WalkConfig) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let sampler = WalkSampler::new(g, cfg.p, cfg.q);
    let mut walks = Vec::with_capacity(cfg.walks_per_node * g.node_count());
    for round in 0..cfg.walks_per_node {
        for node in 0..g.node_count() {
            let mut r = rng::stream(cfg.seed, &[1, round as u64, node as u64]);
            walks.push(sampler.walk(node, cfg.walk_length, &mut r));
        }
    }
    Ok(walks)
}

/// Negative-sample distribution proportional to `count^0.75`.
pub struct NegativeSampler {
    table: AliasTable,
    probs: Vec<f64>,
}

impl NegativeSampler {
    pub fn from_walks(walks: &[Vec<usize>], n_nodes: usize) -> Self {
        let mut counts = vec![0.0f64; n_nodes];
        for &v in walks.iter().flatten() {
            counts[v] += 1.0;
        }
        let powered: Vec<f64> = counts.iter().map(|c| c.powf(0.75)).collect();
        let total: f64 = powered.iter().sum();
        NegativeSampler {
            table: AliasTable::new(&powered),
            probs: powered.iter().map(|p| p / total).collect(),
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng)
    }
}

/// Row `j` is the embedding of district `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistrictEmbedding(pub Tensor);

impl DistrictEmbedding {
    pub fn zeros(n: usize, dim: usize) -> Self {
        DistrictEmbedding(Tensor::zeros(&[n, dim]))
    }

    pub fn district_count(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        self.0.row(j)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("district_id");
        for k in 0..self.dim() {
            write!(s, ",e{k}").unwrap();
        }
        s.push('\n');
        for j in 0..self.district_count() {
            write!(s, "{j}").unwrap();
            for v in self.row(j) {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Data("empty embedding file".into()))?;
        let dim = header.split(',').count() - 1;
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Data(format!("embedding row {i}: expected {} fields", dim + 1)));
            }
            let id: usize = fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("embedding row {i}: bad district id")))?;
            if id != i {
                return Err(Error::Data(format!("embedding rows must be ordered by district id; row {i} has id {id}")));
            }
            for f in &fields[1..] {
                data.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Data(format!("embedding row {i}: not a number {f:?}")))?,
                );
            }
            rows += 1;
        }
        Ok(DistrictEmbedding(Tensor::matrix(rows, dim, data)?))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        DistrictEmbedding::from_csv(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct SkipGramOutput {
    pub embedding: DistrictEmbedding,
    /// Mean negative-sampling loss per (center, context) pair, per epoch.
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn train_skipgram(walks: &[Vec<usize>], n_nodes: usize, cfg: &WalkConfig) -> Result<SkipGramOutput> {
    cfg.validate()?;
    if walks.iter().all(|w| w.is_empty()) {
        return Err(Error::Data("no walks to train on".into()));
    }
    let dim = cfg.embedding_dim;
    let mut init = rng::stream(cfg.seed, &[2]);
    let mut input: Vec<f64> = (0..n_nodes * dim)
        .map(|_| (init.random::<f64>() - 0.5) / dim as f64)
        .collect();
    let mut output = vec![0.0; n_nodes * dim];
    let negatives = NegativeSampler::from_walks(walks, n_nodes);

    let pairs_per_epoch: usize = walks
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|i| i.saturating_sub(cfg.window_size)..(i + cfg.window_size + 1).min(w.len()))
                .map(|r| r.len() - 1)
                .sum::<usize>()
        })
        .sum();
    let total = (pairs_per_epoch * cfg.epochs).max(1) as f64;
    let min_lr = cfg.learning_rate * 1e-4;

    let mut order: Vec<usize> = (0..walks.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut processed = 0usize;
    let mut grad_center = vec![0.0; dim];
    for epoch in 0..cfg.epochs {
        let mut r = rng::stream(cfg.seed, &[3, epoch as u64]);
        order.shuffle(&mut r);
        let mut loss_sum = 0.0;
        let mut pairs = 0usize;
        for &wi in &order {
            let walk = &walks[wi];
            for (i, &center) in walk.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window_size);
                let hi = (i + cfg.window_size + 1).min(walk.len());
                for j in lo..hi {
                    if j == i {
                        continue;
                    }
                    let lr = (cfg.learning_rate * (1.0 - processed as f64 / total)).max(min_lr);
                    processed += 1;
                    let context = walk[j];
                    grad_center.iter_mut().for_each(|g| *g = 0.0);
                    let cv = &input[center * dim..(center + 1) * dim];
                    for s in 0..=cfg.negative_samples {
                        let (target, label) = if s == 0 {
                            (context, 1.0)
                        } else {
                            (negatives.sample(&mut r), 0.0)
                        };
                        let ov = &mut output[target * dim..(target + 1) * dim];
                        let dot: f64 = cv.iter().zip(ov.iter()).map(|(a, b)| a * b).sum();
                        loss_sum -= if label == 1.0 { log_sigmoid(dot) } else { log_sigmoid(-dot) };
                        let g = lr * (label - sigmoid(dot));
                        for k in 0..dim {
                            grad_center[k] += g * ov[k];
                            ov[k] += g * cv[k];
                        }
                    }
                    input[center * dim..(center + 1) * dim]
                        .iter_mut()
                        .zip(&grad_center)
                        .for_each(|(v, g)| *v += g);
                    pairs += 1;
                }
            }
        }
        epoch_losses.push(loss_sum / pairs.max(1) as f64);
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("skip-gram produced non-finite embeddings".into()));
    }
    Ok(SkipGramOutput {
        embedding: DistrictEmbedding(Tensor::matrix(n_nodes, dim, input)?),
        epoch_losses,
    })
}

/// Walks plus skip-gram in one call.
pub fn embed(g: &WeightedGraph, cfg: &WalkConfig) -> Result<SkipGramOutput> {
    let walks = generate_walks(g, cfg)?;
    train_skipgram(&walks, g.node_count(), cfg)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
