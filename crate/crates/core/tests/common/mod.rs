//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use deepsta::autodiff::{Tape, Tensor, Var};
use deepsta::graphs::{NormalizedAdjacency, WeightedGraph};
use deepsta::model::{DeepSta, ModelConfig, ModelInputs, Variant, TARGET_CLIP};
use deepsta::node2vec::{cosine, embed, DistrictEmbedding, WalkConfig, WalkSampler};
use deepsta::rng;
use deepsta::scenario::{generate, prepare, Dataset, ScenarioConfig};
use rand::Rng;

pub const H: f64 = 1e-5;

/// Relative error with a small absolute floor, so entries whose true
/// derivative is zero are judged on absolute agreement.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn random_tensor(r: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-bound..bound)).collect()).unwrap()
}

/// Central differences of `f` with respect to every entry of every input.
pub fn numeric_grads(f: &dyn Fn(&[Tensor]) -> f64, inputs: &[Tensor], h: f64) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    (0..inputs.len())
        .map(|p| {
            (0..inputs[p].numel())
                .map(|k| {
                    let x0 = inputs[p].data()[k];
                    work[p].data_mut()[k] = x0 + h;
                    let up = f(&work);
                    work[p].data_mut()[k] = x0 - h;
                    let down = f(&work);
                    work[p].data_mut()[k] = x0;
                    (up - down) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

/// Largest relative error per input between backward and finite
/// differences for the scalar `sum(build(inputs) * R)` with a fixed random
/// weighting `R`, which keeps every output entry in play.
pub fn check_tape_fn(build: &dyn Fn(&mut Tape, &[Var]) -> Var, inputs: &[Tensor], seed: u64) -> Vec<f64> {
    let probe = |xs: &[Tensor], tape: &mut Tape, as_params: bool| -> (Var, Vec<Var>) {
        let vars: Vec<Var> = xs
            .iter()
            .map(|x| if as_params { tape.param(x.clone()) } else { tape.constant(x.clone()) })
            .collect();
        let out = build(tape, &vars);
        let w = random_tensor(&mut rng::stream(seed, &[77]), tape.value(out).shape(), 1.0);
        let w = tape.constant(w);
        let prod = tape.mul(out, w).unwrap();
        (tape.sum(prod), vars)
    };
    let mut tape = Tape::new();
    let (loss, vars) = probe(inputs, &mut tape, true);
    let grads = tape.backward(loss).unwrap();
    let f = |xs: &[Tensor]| {
        let mut t = Tape::new();
        let (l, _) = probe(xs, &mut t, false);
        t.value(l).data()[0]
    };
    let numeric = numeric_grads(&f, inputs, H);
    vars.iter()
        .zip(&numeric)
        .map(|(v, num)| {
            let g = grads.get(*v).expect("parameter gradient");
            g.data().iter().zip(num).map(|(a, n)| rel_err(*a, *n)).fold(0.0, f64::max)
        })
        .collect()
}

/// Two couriers over two districts with narrow layers, so every weight of
/// the end-to-end model can be perturbed.
pub struct MicroInstance {
    pub dataset: Dataset,
    pub embedding: DistrictEmbedding,
    pub adjacency: NormalizedAdjacency,
}

pub fn micro_instance() -> MicroInstance {
    let cfg = ScenarioConfig {
        n_couriers: 2,
        n_districts: 2,
        n_days: 45,
        team_size: 2,
        outbreak_days: vec![36],
        outbreak_duration: 6.0,
        ..ScenarioConfig::default()
    };
    let dataset = prepare(&generate(&cfg).unwrap()).unwrap().0;
    let embedding = DistrictEmbedding(random_tensor(&mut rng::stream(5, &[1]), &[2, 6], 1.0));
    // A fixed, fully mixing adjacency so the graph path carries gradient.
    let adjacency = NormalizedAdjacency(Tensor::from_rows(&[vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap());
    MicroInstance {
        dataset,
        embedding,
        adjacency,
    }
}

pub fn narrow_config(variant: Variant, feat_dim: usize, window: usize) -> ModelConfig {
    let mut c = ModelConfig::new(variant, feat_dim);
    c.road_dim = 6;
    c.hidden_dim = 5;
    c.gcn_dim = 5;
    c.lstm_hidden = 4;
    c.rnn_hidden = 3;
    c.memory_slots = 3;
    c.memory_dim = 4;
    c.window = window;
    c
}

/// Clipped-target MSE computed from the model's predictions, independent
/// of the tape's loss node.
pub fn loss_from_predictions(model: &DeepSta, inputs: &ModelInputs, samples: &[(usize, usize)], seed: u64) -> f64 {
    let pass = model.forward(inputs, samples, true, &mut rng::stream(seed, &[])).unwrap();
    let pred = pass.tape.value(pass.pred).data();
    samples
        .iter()
        .zip(pred)
        .map(|(&(i, d), p)| (p - inputs.label(i, d).clamp(TARGET_CLIP, 1.0 - TARGET_CLIP)).powi(2))
        .sum::<f64>()
        / samples.len() as f64
}

/// Largest relative error per parameter group between `loss_and_grads`
/// and finite differences of the end-to-end loss (training mode, fixed
/// dropout masks).
pub fn end_to_end_errors(model: &DeepSta, inputs: &ModelInputs, samples: &[(usize, usize)]) -> Vec<(String, f64)> {
    let seed = 41;
    let (_, grads) = model.loss_and_grads(inputs, samples, true, &mut rng::stream(seed, &[])).unwrap();
    let names: Vec<String> = model.params.names().into_iter().map(String::from).collect();
    let values: Vec<Tensor> = model.params.iter().map(|(_, t)| t.clone()).collect();
    let f = |xs: &[Tensor]| {
        let mut m = model.clone();
        for ((_, slot), x) in m.params.iter_mut().zip(xs) {
            *slot = x.clone();
        }
        loss_from_predictions(&m, inputs, samples, seed)
    };
    let numeric = numeric_grads(&f, &values, H);
    names
        .into_iter()
        .zip(grads.iter().zip(&numeric))
        .map(|(n, (g, num))| (n, g.data().iter().zip(num).map(|(a, b)| rel_err(*a, *b)).fold(0.0, f64::max)))
        .collect()
}

/// Brute-force memory read: query, softmax scores and weighted memory row
/// for one input vector, with explicit loops.
pub fn memory_oracle(x: &[f64], w_q: &Tensor, b_q: &[f64], slots: &Tensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (dm, lm) = (b_q.len(), slots.rows());
    let mut q = vec![0.0; dm];
    for j in 0..dm {
        let mut s = b_q[j];
        for (k, xk) in x.iter().enumerate() {
            s += xk * w_q.get(k, j);
        }
        q[j] = s;
    }
    let mut logits = vec![0.0; lm];
    for l in 0..lm {
        for j in 0..dm {
            logits[l] += slots.get(l, j) * q[j];
        }
    }
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut score: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = score.iter().sum();
    for s in &mut score {
        *s /= z;
    }
    let mut a = vec![0.0; dm];
    for l in 0..lm {
        for j in 0..dm {
            a[j] += score[l] * slots.get(l, j);
        }
    }
    (q, score, a)
}

/// `D^-1/2 (W + I) D^-1/2` followed by `ReLU(Σ_j Â_ij (x_j W))`, node by
/// node.
pub fn message_passing_oracle(weights: &[Vec<f64>], x: &Tensor, w: &Tensor) -> Vec<Vec<f64>> {
    let n = weights.len();
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + weights[i].iter().sum::<f64>()).collect();
    let a_hat = |i: usize, j: usize| {
        let wij = if i == j { 1.0 } else { weights[i][j] };
        wij / (deg[i] * deg[j]).sqrt()
    };
    let out_dim = w.cols();
    (0..n)
        .map(|i| {
            let mut h = vec![0.0; out_dim];
            for j in 0..n {
                for c in 0..out_dim {
                    let mut msg = 0.0;
                    for k in 0..x.cols() {
                        msg += x.get(j, k) * w.get(k, c);
                    }
                    h[c] += a_hat(i, j) * msg;
                }
            }
            h.into_iter().map(|v| v.max(0.0)).collect()
        })
        .collect()
}

/// Total variation between the empirical next-node law out of every node
/// (collected from long p = q = 1 walks, `samples` transitions per node)
/// and the analytic weight-proportional law. Returns the worst node.
pub fn walk_transition_tv(g: &WeightedGraph, samples: usize, seed: u64) -> f64 {
    let n = g.node_count();
    let sampler = WalkSampler::new(g, 1.0, 1.0);
    let mut counts = vec![vec![0usize; n]; n];
    let mut done = vec![0usize; n];
    let mut r = rng::stream(seed, &[]);
    let mut start = 0;
    while done.iter().any(|&c| c < samples) {
        let walk = sampler.walk(start, 1000, &mut r);
        for pair in walk.windows(2) {
            if done[pair[0]] < samples {
                counts[pair[0]][pair[1]] += 1;
                done[pair[0]] += 1;
            }
        }
        start = (start + 1) % n;
    }
    (0..n)
        .map(|v| {
            let total: f64 = g.neighbors(v).iter().map(|e| e.1).sum();
            let mut analytic = vec![0.0; n];
            for &(x, w) in g.neighbors(v) {
                analytic[x] = w / total;
            }
            0.5 * (0..n).map(|x| (counts[v][x] as f64 / samples as f64 - analytic[x]).abs()).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Two 10-node cliques joined by one bridge edge.
pub fn barbell() -> WeightedGraph {
    let mut edges = Vec::new();
    for c in 0..2 {
        for i in 0..10 {
            for j in (i + 1)..10 {
                edges.push((10 * c + i, 10 * c + j, 1.0));
            }
        }
    }
    edges.push((9, 10, 1.0));
    WeightedGraph::undirected(20, edges)
}

/// Mean cosine similarity of embedding rows within the same clique and
/// across cliques.
pub fn barbell_separation(seed: u64) -> (f64, f64) {
    let cfg = WalkConfig {
        seed,
        ..WalkConfig::default()
    };
    let emb = embed(&barbell(), &cfg).unwrap().embedding;
    let (mut intra, mut inter, mut ni, mut nx) = (0.0, 0.0, 0, 0);
    for i in 0..20 {
        for j in (i + 1)..20 {
            let c = cosine(emb.row(i), emb.row(j));
            if i / 10 == j / 10 {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    (intra / ni as f64, inter / nx as f64)
}

/// A random weighted graph on `n` nodes, fully connected, directed weights.
pub fn random_weighted_graph(n: usize, seed: u64) -> WeightedGraph {
    let mut r = rng::stream(seed, &[]);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                edges.push((i, j, r.random_range(0.05..2.0)));
            }
        }
    }
    WeightedGraph::from_edges(n, edges)
}

fn rt(seed: u64, shape: &[usize], bound: f64) -> Tensor {
    random_tensor(&mut rng::stream(seed, &[shape.len() as u64, shape[0] as u64]), shape, bound)
}

/// Trainable modules checked one at a time against finite differences.
pub const MODULES: [&str; 6] = ["fc", "gcn", "lstm", "rnn", "memory", "head"];

/// Largest relative gradient error over all inputs and weights of one
/// module, on random inputs in [-2, 2].
pub fn module_gradient_error(module: &str) -> f64 {
    use deepsta::model::{anomaly_forward, gcn_forward, linear, lstm_forward, memory_attend, LstmLayer, MemoryParams, RnnParams};
    let errs = match module {
        "fc" => {
            let f = |t: &mut Tape, v: &[Var]| linear(t, v[0], v[1], v[2]).unwrap();
            check_tape_fn(&f, &[rt(1, &[4, 6], 2.0), rt(2, &[6, 3], 2.0), rt(3, &[3], 2.0)], 1)
        }
        "gcn" => {
            let adj = Tensor::from_rows(&[vec![0.5, 0.3, 0.2], vec![0.3, 0.4, 0.3], vec![0.2, 0.3, 0.5]]).unwrap();
            let f = |t: &mut Tape, v: &[Var]| gcn_forward(t, v[0], v[1], v[2]).unwrap();
            check_tape_fn(&f, &[rt(4, &[3, 5], 2.0), adj, rt(5, &[5, 4], 2.0)], 2)
        }
        "lstm" => {
            // Three steps of [2 x 3], then (w_ih, w_hh, bias) for two layers.
            let hid = 4;
            let inputs = [
                rt(10, &[2, 3], 2.0),
                rt(11, &[2, 3], 2.0),
                rt(12, &[2, 3], 2.0),
                rt(13, &[3, 4 * hid], 2.0),
                rt(14, &[hid, 4 * hid], 2.0),
                rt(15, &[4 * hid], 2.0),
                rt(16, &[hid, 4 * hid], 2.0),
                rt(17, &[hid, 4 * hid], 2.0),
                rt(18, &[4 * hid], 2.0),
            ];
            let f = |t: &mut Tape, v: &[Var]| {
                let layer = |k: usize| LstmLayer {
                    w_ih: v[k],
                    w_hh: v[k + 1],
                    bias: v[k + 2],
                };
                // Same dropout mask on every evaluation.
                lstm_forward(t, &v[..3], &[layer(3), layer(6)], 0.3, true, &mut rng::stream(9, &[])).unwrap()
            };
            check_tape_fn(&f, &inputs, 3)
        }
        "rnn" => {
            let inputs = [
                rt(20, &[2, 4], 2.0),
                rt(21, &[2, 4], 2.0),
                rt(22, &[2, 4], 2.0),
                rt(23, &[4, 8], 2.0),
                rt(24, &[8, 8], 2.0),
                rt(25, &[8], 2.0),
            ];
            let f = |t: &mut Tape, v: &[Var]| {
                let rnn = RnnParams {
                    w_ih: v[3],
                    w_hh: v[4],
                    bias: v[5],
                };
                anomaly_forward(t, &v[..3], rnn).unwrap()
            };
            check_tape_fn(&f, &inputs, 4)
        }
        "memory" => {
            // s [2 x 5], e [2 x 3], M [4 x 6], W_q [8 x 6], b_q [6]. Kept
            // small so the softmax is not saturated: saturated scores have
            // gradients below the finite-difference noise floor.
            let inputs = [
                rt(30, &[2, 5], 0.5),
                rt(31, &[2, 3], 0.5),
                rt(32, &[4, 6], 0.5),
                rt(33, &[8, 6], 0.5),
                rt(34, &[6], 0.5),
            ];
            let f = |t: &mut Tape, v: &[Var]| {
                let mem = MemoryParams {
                    slots: v[2],
                    w_q: v[3],
                    b_q: v[4],
                };
                memory_attend(t, v[0], Some(v[1]), mem).unwrap().read
            };
            check_tape_fn(&f, &inputs, 5)
        }
        "head" => {
            let f = |t: &mut Tape, v: &[Var]| {
                let d = t.dropout(v[0], 0.25, true, &mut rng::stream(2, &[])).unwrap();
                let l = linear(t, d, v[1], v[2]).unwrap();
                t.sigmoid(l)
            };
            check_tape_fn(&f, &[rt(40, &[3, 7], 2.0), rt(41, &[7, 1], 2.0), rt(42, &[1], 2.0)], 6)
        }
        other => panic!("unknown module {other}"),
    };
    errs.into_iter().fold(0.0, f64::max)
}

/// Worst end-to-end gradient error over every variant on the two-courier
/// instance with `T = 2`.
pub fn end_to_end_error() -> (f64, String) {
    use deepsta::scenario::Split;
    let micro = micro_instance();
    let mut worst = (0.0, String::new());
    for variant in std::iter::once(Variant::Full).chain(Variant::ABLATIONS).chain([Variant::LstmBaseline]) {
        let cfg = narrow_config(variant, micro.dataset.feat_dim, 2);
        let model = DeepSta::init(cfg.clone(), 8, 0.8).unwrap();
        let inputs = ModelInputs::new(&cfg, &micro.dataset, &micro.embedding, &micro.adjacency).unwrap();
        let mut samples = micro.dataset.samples(Split::Val);
        samples.extend(micro.dataset.samples(Split::Test));
        for (name, err) in end_to_end_errors(&model, &inputs, &samples) {
            if err >= worst.0 {
                worst = (err, format!("{variant} {name}"));
            }
        }
    }
    worst
}

/// Compares the memory read with the loop oracle on random shapes and
/// scales. Returns the largest deviation of query, score and read, and the
/// largest deviation of a score row sum from 1.
pub fn memory_oracle_deviation(draws: usize, seed: u64) -> (f64, f64) {
    use deepsta::model::{memory_attend, MemoryParams};
    let mut r = rng::stream(seed, &[]);
    let (mut worst, mut worst_sum) = (0.0f64, 0.0f64);
    for _ in 0..draws {
        let (b, ds, de) = (r.random_range(1..5), r.random_range(1..9), r.random_range(0..9));
        let (lm, dm) = (r.random_range(1..13), r.random_range(1..9));
        let scale = r.random_range(0.1..3.0);
        let s = random_tensor(&mut r, &[b, ds], scale);
        let e = random_tensor(&mut r, &[b, de.max(1)], scale);
        let slots = random_tensor(&mut r, &[lm, dm], scale);
        let w_q = random_tensor(&mut r, &[ds + de, dm], scale);
        let b_q = random_tensor(&mut r, &[dm], scale);

        let mut tape = Tape::new();
        let sv = tape.param(s.clone());
        let ev = (de > 0).then(|| tape.param(e.clone()));
        let mem = MemoryParams {
            slots: tape.param(slots.clone()),
            w_q: tape.param(w_q.clone()),
            b_q: tape.param(b_q.clone()),
        };
        let att = memory_attend(&mut tape, sv, ev, mem).unwrap();
        for row in 0..b {
            let mut x = s.row(row).to_vec();
            if de > 0 {
                x.extend_from_slice(e.row(row));
            }
            let (q, score, a) = memory_oracle(&x, &w_q, b_q.data(), &slots);
            for (got, want) in [(att.query, q), (att.score, score), (att.read, a)] {
                for (g, w) in tape.value(got).row(row).iter().zip(&want) {
                    worst = worst.max((g - w).abs());
                }
            }
            let total: f64 = tape.value(att.score).row(row).iter().sum();
            worst_sum = worst_sum.max((total - 1.0).abs());
        }
    }
    (worst, worst_sum)
}

/// Worst deviation of `gcn_forward` from explicit message passing over
/// random graphs of 1 to 5 nodes.
pub fn gcn_oracle_deviation(cases: usize, seed: u64) -> f64 {
    use deepsta::graphs::{normalize_adjacency, CourierGraph};
    use deepsta::model::gcn_forward;
    let mut r = rng::stream(seed, &[]);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, fin, fout) = (r.random_range(1..=5), r.random_range(1..6), r.random_range(1..6));
        let mut w = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                // Roughly a third of pairs unconnected.
                let v = (r.random::<f64>() * 1.5 - 0.5).max(0.0);
                w[i][j] = v;
                w[j][i] = v;
            }
        }
        let x = random_tensor(&mut r, &[n, fin], 2.0);
        let weight = random_tensor(&mut r, &[fin, fout], 2.0);
        let adj = normalize_adjacency(&CourierGraph::from_weights(n, w.concat()).unwrap());
        let mut tape = Tape::new();
        let (xv, av, wv) = (tape.constant(x.clone()), tape.constant(adj.0.clone()), tape.param(weight.clone()));
        let h = gcn_forward(&mut tape, xv, av, wv).unwrap();
        let want = message_passing_oracle(&w, &x, &weight);
        for (i, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                worst = worst.max((tape.value(h).get(i, c) - v).abs());
            }
        }
    }
    worst
}
