//! The forecasting network and its ablation variants.
//!
//! Per day, every courier's input row is `[Emb || C]` (plus the raw
//! anomaly factors when the recurrent anomaly branch is removed). The input
//! layer is affine and the GCN applies `Â` before any non-linearity, so
//! `Â (F W + 1 bᵀ) = (Â F) W + (Â 1) bᵀ`: [`ModelInputs`] applies `Â` to
//! the raw rows once, and a forward pass only touches the rows of the
//! sampled couriers. [`DeepSta::forward_reference`] runs the unfused
//! per-day path for cross-checking.

pub mod layers;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use layers::{
    anomaly_forward, assemble_features, gcn_forward, linear, lstm_forward, memory_attend, mix_district_embedding,
    Attention, LstmLayer, MemoryParams, RnnParams,
};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphs::NormalizedAdjacency;
use crate::node2vec::DistrictEmbedding;
use crate::rng;
use crate::scenario::{Dataset, ANOMALY_DIM};

/// Targets are clipped into this band before the loss.
pub const TARGET_CLIP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    WoRoad,
    WoGcn,
    WoLstm,
    WoMemory,
    WoRnn,
    WoMemoryRnn,
    /// Temporal-only network: input layer, LSTM, output head; no road
    /// embedding.
    LstmBaseline,
}

impl Variant {
    pub const ABLATIONS: [Variant; 6] = [
        Variant::WoRoad,
        Variant::WoGcn,
        Variant::WoLstm,
        Variant::WoMemory,
        Variant::WoRnn,
        Variant::WoMemoryRnn,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoRoad => "wo_road",
            Variant::WoGcn => "wo_gcn",
            Variant::WoLstm => "wo_lstm",
            Variant::WoMemory => "wo_memory",
            Variant::WoRnn => "wo_rnn",
            Variant::WoMemoryRnn => "wo_memory_rnn",
            Variant::LstmBaseline => "baseline:lstm",
        }
    }

    pub fn components(self) -> Components {
        let full = Components {
            road: true,
            graph: GraphMode::Correlation,
            lstm: true,
            memory: true,
            rnn: true,
        };
        match self {
            Variant::Full => full,
            Variant::WoRoad => Components { road: false, ..full },
            Variant::WoGcn => Components {
                graph: GraphMode::Identity,
                ..full
            },
            Variant::WoLstm => Components { lstm: false, ..full },
            Variant::WoMemory => Components { memory: false, ..full },
            Variant::WoRnn => Components { rnn: false, ..full },
            Variant::WoMemoryRnn => Components {
                memory: false,
                rnn: false,
                ..full
            },
            Variant::LstmBaseline => Components {
                road: false,
                graph: GraphMode::Skip,
                memory: false,
                rnn: false,
                ..full
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Variant::Full,
            Variant::WoRoad,
            Variant::WoGcn,
            Variant::WoLstm,
            Variant::WoMemory,
            Variant::WoRnn,
            Variant::WoMemoryRnn,
            Variant::LstmBaseline,
        ]
        .into_iter()
        .find(|v| v.tag() == s)
        .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    /// GCN over the courier correlation graph.
    Correlation,
    /// GCN layer kept, adjacency replaced by the identity.
    Identity,
    /// No GCN layer at all.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Components {
    pub road: bool,
    pub graph: GraphMode,
    pub lstm: bool,
    pub memory: bool,
    pub rnn: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Encoded width of the logistics/weather/date features.
    pub feat_dim: usize,
    pub road_dim: usize,
    pub hidden_dim: usize,
    pub gcn_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub lstm_dropout: f64,
    pub rnn_hidden: usize,
    pub memory_slots: usize,
    pub memory_dim: usize,
    pub head_dropout: f64,
    /// History length `T`; inputs cover days `t - T ..= t`.
    pub window: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, feat_dim: usize) -> Self {
        ModelConfig {
            variant,
            feat_dim,
            road_dim: 128,
            hidden_dim: 128,
            gcn_dim: 128,
            lstm_hidden: 128,
            lstm_layers: 2,
            lstm_dropout: 0.1,
            rnn_hidden: 8,
            memory_slots: 12,
            memory_dim: 64,
            head_dropout: 0.1,
            window: 7,
        }
    }

    pub fn components(&self) -> Components {
        self.variant.components()
    }

    /// Width of one raw input row.
    pub fn input_dim(&self) -> usize {
        self.road_dim + self.feat_dim + if self.components().rnn { 0 } else { ANOMALY_DIM }
    }

    fn spatial_dim(&self) -> usize {
        if self.components().graph == GraphMode::Skip {
            self.hidden_dim
        } else {
            self.gcn_dim
        }
    }

    /// Width of the temporal summary `S`.
    pub fn state_dim(&self) -> usize {
        if self.components().lstm {
            self.lstm_hidden
        } else {
            self.spatial_dim()
        }
    }

    pub fn head_dim(&self) -> usize {
        let c = self.components();
        self.state_dim() + if c.rnn { self.rnn_hidden } else { 0 } + if c.memory { self.memory_dim } else { 0 }
    }

    /// Every parameter tensor the configuration defines, in store order.
    pub fn census(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.components();
        let mut out = vec![
            ("input.weight".to_string(), vec![self.input_dim(), self.hidden_dim]),
            ("input.bias".to_string(), vec![self.hidden_dim]),
        ];
        if c.graph != GraphMode::Skip {
            out.push(("gcn.weight".into(), vec![self.hidden_dim, self.gcn_dim]));
        }
        if c.lstm {
            let mut width = self.spatial_dim();
            for l in 0..self.lstm_layers {
                out.push((format!("lstm.{l}.w_ih"), vec![width, 4 * self.lstm_hidden]));
                out.push((format!("lstm.{l}.w_hh"), vec![self.lstm_hidden, 4 * self.lstm_hidden]));
                out.push((format!("lstm.{l}.bias"), vec![4 * self.lstm_hidden]));
                width = self.lstm_hidden;
            }
        }
        if c.rnn {
            out.push(("rnn.w_ih".into(), vec![ANOMALY_DIM, self.rnn_hidden]));
            out.push(("rnn.w_hh".into(), vec![self.rnn_hidden, self.rnn_hidden]));
            out.push(("rnn.bias".into(), vec![self.rnn_hidden]));
        }
        if c.memory {
            let q_in = self.state_dim() + if c.rnn { self.rnn_hidden } else { 0 };
            out.push(("memory.slots".into(), vec![self.memory_slots, self.memory_dim]));
            out.push(("memory.query.weight".into(), vec![q_in, self.memory_dim]));
            out.push(("memory.query.bias".into(), vec![self.memory_dim]));
        }
        out.push(("head.weight".into(), vec![self.head_dim(), 1]));
        out.push(("head.bias".into(), vec![1]));
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lstm_dropout", self.lstm_dropout), ("head_dropout", self.head_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1)")));
            }
        }
        if self.components().lstm && self.lstm_layers == 0 {
            return Err(Error::Config("lstm_layers must be at least 1".into()));
        }
        if self.memory_slots == 0 || self.memory_dim == 0 {
            return Err(Error::Config("memory dimensions must be positive".into()));
        }
        Ok(())
    }
}

fn uniform(r: &mut rng::Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-bound..bound)).collect()).expect("shape")
}

/// Precomputed per-day model inputs for one variant.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub n_couriers: usize,
    pub n_days: usize,
    pub input_dim: usize,
    propagate: bool,
    /// `Â F` per day (or `F` when the graph is skipped), day-major.
    propagated: Vec<f64>,
    /// Row sums of `Â`, per day and courier.
    row_sum: Vec<f64>,
    raw: Vec<f64>,
    adjacency: Option<NormalizedAdjacency>,
    anomaly: Vec<f64>,
    labels: Vec<f64>,
}

/// Sum of products in a canonical (sorted) order, so the result does not
/// depend on how couriers are numbered.
fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

impl ModelInputs {
    pub fn new(
        cfg: &ModelConfig,
        ds: &Dataset,
        emb: &DistrictEmbedding,
        adjacency: &NormalizedAdjacency,
    ) -> Result<Self> {
        let comps = cfg.components();
        let (n, days) = (ds.n_couriers, ds.n_days);
        if ds.feat_dim != cfg.feat_dim {
            return Err(Error::Config(format!(
                "dataset feature width {} does not match the model; expected {}",
                ds.feat_dim, cfg.feat_dim
            )));
        }
        if emb.dim() != cfg.road_dim || emb.district_count() != ds.n_districts {
            return Err(Error::shape("district embedding", emb.0.shape(), &[ds.n_districts, cfg.road_dim]));
        }
        let adj = match comps.graph {
            GraphMode::Correlation => {
                if adjacency.size() != n {
                    return Err(Error::shape("adjacency", adjacency.tensor().shape(), &[n, n]));
                }
                Some(adjacency.clone())
            }
            GraphMode::Identity => Some(NormalizedAdjacency::identity(n)),
            GraphMode::Skip => None,
        };
        let width = cfg.input_dim();
        let mut raw = Vec::with_capacity(days * n * width);
        for d in 0..days {
            for i in 0..n {
                if comps.road {
                    raw.extend(mix_district_embedding(ds.p(i, d), emb)?);
                } else {
                    raw.extend(std::iter::repeat_n(0.0, cfg.road_dim));
                }
                raw.extend_from_slice(ds.c(i, d));
                if !comps.rnn {
                    raw.extend_from_slice(ds.a(i, d));
                }
            }
        }

        let (propagated, row_sum) = match &adj {
            Some(a) => {
                let a = a.tensor();
                let mut prop = vec![0.0; raw.len()];
                let mut sums = vec![0.0; days * n];
                let mut terms = Vec::with_capacity(n);
                for i in 0..n {
                    let neighbours: Vec<(usize, f64)> =
                        (0..n).filter_map(|j| (a.get(i, j) != 0.0).then(|| (j, a.get(i, j)))).collect();
                    let mut ws: Vec<f64> = neighbours.iter().map(|x| x.1).collect();
                    let rs = canonical_sum(&mut ws);
                    for d in 0..days {
                        sums[d * n + i] = rs;
                        let base = d * n * width;
                        for k in 0..width {
                            terms.clear();
                            terms.extend(neighbours.iter().map(|&(j, w)| w * raw[base + j * width + k]));
                            prop[base + i * width + k] = canonical_sum(&mut terms);
                        }
                    }
                }
                (prop, sums)
            }
            None => (raw.clone(), vec![1.0; days * n]),
        };

        let mut anomaly = Vec::with_capacity(days * n * ANOMALY_DIM);
        let mut labels = Vec::with_capacity(days * n);
        for d in 0..days {
            for i in 0..n {
                anomaly.extend_from_slice(ds.a(i, d));
                labels.push(ds.y(i, d));
            }
        }
        Ok(ModelInputs {
            n_couriers: n,
            n_days: days,
            input_dim: width,
            propagate: adj.is_some(),
            propagated,
            row_sum,
            raw,
            adjacency: adj,
            anomaly,
            labels,
        })
    }

    pub fn label(&self, courier: usize, day: usize) -> f64 {
        self.labels[day * self.n_couriers + courier]
    }

    fn row<'a>(&self, data: &'a [f64], courier: usize, day: usize) -> &'a [f64] {
        let k = day * self.n_couriers + courier;
        &data[k * self.input_dim..(k + 1) * self.input_dim]
    }

    /// Raw input rows of all couriers on `day`, `N × input_dim`.
    pub fn raw_day(&self, day: usize) -> Tensor {
        let w = self.n_couriers * self.input_dim;
        Tensor::matrix(self.n_couriers, self.input_dim, self.raw[day * w..(day + 1) * w].to_vec()).expect("shape")
    }

    pub fn anomaly_row(&self, courier: usize, day: usize) -> &[f64] {
        let k = day * self.n_couriers + courier;
        &self.anomaly[k * ANOMALY_DIM..(k + 1) * ANOMALY_DIM]
    }

    fn check_samples(&self, samples: &[(usize, usize)], window: usize) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        for &(i, d) in samples {
            if i >= self.n_couriers {
                return Err(Error::Data(format!("courier {i} not in panel")));
            }
            if d < window || d >= self.n_days {
                return Err(Error::Data(format!(
                    "courier {i}, day {d}: window needs days {}..={d} inside 0..{}",
                    d as i64 - window as i64,
                    self.n_days
                )));
            }
        }
        Ok(())
    }
}

/// Recorded forward pass: predictions `[B]` plus the parameter leaves in
/// store order.
pub struct ForwardPass {
    pub tape: Tape,
    pub pred: Var,
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepSta {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

struct Handles<'a> {
    names: Vec<&'a str>,
    vars: Vec<Var>,
}

impl Handles<'_> {
    fn get(&self, name: &str) -> Var {
        let i = self.names.iter().position(|n| *n == name).unwrap_or_else(|| panic!("parameter {name}"));
        self.vars[i]
    }
}

impl DeepSta {
    /// Fresh weights. `output_prior` sets the head bias so the initial
    /// prediction equals it.
    pub fn init(cfg: ModelConfig, seed: u64, output_prior: f64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(seed, &[100]);
        let mut params = ParamStore::new();
        for (name, shape) in cfg.census() {
            let t = if name == "memory.slots" {
                let n = shape.iter().product();
                Tensor::new(shape.clone(), (0..n).map(|_| 0.1 * r.sample::<f64, _>(StandardNormal)).collect())?
            } else if name == "head.bias" {
                let p = output_prior.clamp(TARGET_CLIP, 1.0 - TARGET_CLIP);
                Tensor::vector(vec![(p / (1.0 - p)).ln()])
            } else if name.ends_with("bias") {
                let mut t = Tensor::zeros(&shape);
                if name.starts_with("lstm.") {
                    let h = cfg.lstm_hidden;
                    t.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                }
                t
            } else {
                let fan_in = if name.contains("w_hh") || name.starts_with("lstm.") {
                    cfg.lstm_hidden.max(1)
                } else {
                    shape[0]
                };
                let fan_in = if name.starts_with("rnn.") { cfg.rnn_hidden } else { fan_in };
                uniform(&mut r, &shape, 1.0 / (fan_in as f64).sqrt())
            };
            params.insert(name, t);
        }
        Ok(DeepSta { cfg, params })
    }

    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let census = cfg.census();
        if census.len() != params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, configuration expects {}",
                params.len(),
                census.len()
            )));
        }
        for ((name, shape), (pn, t)) in census.iter().zip(params.iter()) {
            if name != pn || shape.as_slice() != t.shape() {
                return Err(Error::Data(format!("checkpoint tensor {pn} {:?} does not match {name} {shape:?}", t.shape())));
            }
        }
        Ok(DeepSta { cfg, params })
    }

    fn register<'a>(&'a self, tape: &mut Tape) -> Handles<'a> {
        let mut names = Vec::with_capacity(self.params.len());
        let mut vars = Vec::with_capacity(self.params.len());
        for (n, t) in self.params.iter() {
            names.push(n);
            vars.push(tape.param(t.clone()));
        }
        Handles { names, vars }
    }

    fn lstm_layers(&self, h: &Handles) -> Vec<LstmLayer> {
        (0..self.cfg.lstm_layers)
            .map(|l| LstmLayer {
                w_ih: h.get(&format!("lstm.{l}.w_ih")),
                w_hh: h.get(&format!("lstm.{l}.w_hh")),
                bias: h.get(&format!("lstm.{l}.bias")),
            })
            .collect()
    }

    /// Temporal encoding, anomaly encoding, memory read and head, given
    /// per-step spatial outputs (each `B × spatial`).
    fn tail<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        h: &Handles,
        steps: &[Var],
        anomaly_steps: &[Var],
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let c = self.cfg.components();
        let s = if c.lstm {
            lstm_forward(tape, steps, &self.lstm_layers(h), self.cfg.lstm_dropout, training, rng)?
        } else {
            let mut acc = steps[0];
            for &st in &steps[1..] {
                acc = tape.add(acc, st)?;
            }
            tape.scale(acc, 1.0 / steps.len() as f64)
        };
        let e = if c.rnn {
            Some(anomaly_forward(
                tape,
                anomaly_steps,
                RnnParams {
                    w_ih: h.get("rnn.w_ih"),
                    w_hh: h.get("rnn.w_hh"),
                    bias: h.get("rnn.bias"),
                },
            )?)
        } else {
            None
        };
        let mut parts = vec![s];
        parts.extend(e);
        if c.memory {
            let att = memory_attend(
                tape,
                s,
                e,
                MemoryParams {
                    slots: h.get("memory.slots"),
                    w_q: h.get("memory.query.weight"),
                    b_q: h.get("memory.query.bias"),
                },
            )?;
            parts.push(att.read);
        }
        let joined = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 1)? };
        let dropped = tape.dropout(joined, self.cfg.head_dropout, training, rng)?;
        let logit = linear(tape, dropped, h.get("head.weight"), h.get("head.bias"))?;
        let out = tape.sigmoid(logit);
        let b = tape.value(out).rows();
        tape.reshape(out, &[b])
    }

    fn anomaly_steps(&self, tape: &mut Tape, inputs: &ModelInputs, samples: &[(usize, usize)]) -> Result<Vec<Var>> {
        if !self.cfg.components().rnn {
            return Ok(Vec::new());
        }
        let t = self.cfg.window;
        (0..=t)
            .map(|k| {
                let mut data = Vec::with_capacity(samples.len() * ANOMALY_DIM);
                for &(i, d) in samples {
                    data.extend_from_slice(inputs.anomaly_row(i, d - t + k));
                }
                Ok(tape.constant(Tensor::matrix(samples.len(), ANOMALY_DIM, data)?))
            })
            .collect()
    }

    /// Forward pass for `(courier, day)` samples.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        inputs: &ModelInputs,
        samples: &[(usize, usize)],
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardPass> {
        let t = self.cfg.window;
        inputs.check_samples(samples, t)?;
        if inputs.input_dim != self.cfg.input_dim() {
            return Err(Error::Config(format!(
                "inputs built for width {}, model expects {}",
                inputs.input_dim,
                self.cfg.input_dim()
            )));
        }
        let mut tape = Tape::new();
        let h = self.register(&mut tape);
        let b = samples.len();
        let steps = t + 1;

        // Step-major stack of the (propagated) input rows.
        let mut x = Vec::with_capacity(steps * b * inputs.input_dim);
        let mut r = Vec::with_capacity(steps * b);
        for k in 0..steps {
            for &(i, d) in samples {
                let day = d - t + k;
                x.extend_from_slice(inputs.row(&inputs.propagated, i, day));
                r.push(inputs.row_sum[day * inputs.n_couriers + i]);
            }
        }
        let x = tape.constant(Tensor::matrix(steps * b, inputs.input_dim, x)?);
        let xw = tape.matmul(x, h.get("input.weight"))?;
        let z = if inputs.propagate {
            let r = tape.constant(Tensor::matrix(steps * b, 1, r)?);
            let bias_row = tape.reshape(h.get("input.bias"), &[1, self.cfg.hidden_dim])?;
            let rb = tape.matmul(r, bias_row)?;
            tape.add(xw, rb)?
        } else {
            tape.add_row_bias(xw, h.get("input.bias"))?
        };
        let spatial = if self.cfg.components().graph == GraphMode::Skip {
            z
        } else {
            let zw = tape.matmul(z, h.get("gcn.weight"))?;
            tape.relu(zw)
        };
        let step_vars = (0..steps)
            .map(|k| tape.slice_rows(spatial, k * b, b))
            .collect::<Result<Vec<_>>>()?;
        let a_steps = self.anomaly_steps(&mut tape, inputs, samples)?;
        let pred = self.tail(&mut tape, &h, &step_vars, &a_steps, training, rng)?;
        Ok(ForwardPass {
            tape,
            pred,
            params: h.vars,
        })
    }

    /// Unfused forward: per day, assemble features for all couriers, apply
    /// the GCN layer with the explicit adjacency, then gather rows.
    pub fn forward_reference<R: Rng + ?Sized>(
        &self,
        inputs: &ModelInputs,
        samples: &[(usize, usize)],
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardPass> {
        let t = self.cfg.window;
        inputs.check_samples(samples, t)?;
        let mut tape = Tape::new();
        let h = self.register(&mut tape);
        let mut days: Vec<usize> = samples.iter().flat_map(|&(_, d)| d - t..=d).collect();
        days.sort_unstable();
        days.dedup();
        let adj = inputs.adjacency.as_ref().map(|a| tape.constant(a.tensor().clone()));
        let mut per_day = std::collections::HashMap::new();
        for &d in &days {
            let f = tape.constant(inputs.raw_day(d));
            let x = assemble_features(&mut tape, f, h.get("input.weight"), h.get("input.bias"))?;
            let out = match adj {
                Some(a) => gcn_forward(&mut tape, x, a, h.get("gcn.weight"))?,
                None => x,
            };
            per_day.insert(d, out);
        }
        let mut step_vars = Vec::with_capacity(t + 1);
        for k in 0..=t {
            let rows = samples
                .iter()
                .map(|&(i, d)| tape.slice_rows(per_day[&(d - t + k)], i, 1))
                .collect::<Result<Vec<_>>>()?;
            step_vars.push(tape.concat(&rows, 0)?);
        }
        let a_steps = self.anomaly_steps(&mut tape, inputs, samples)?;
        let pred = self.tail(&mut tape, &h, &step_vars, &a_steps, training, rng)?;
        Ok(ForwardPass {
            tape,
            pred,
            params: h.vars,
        })
    }

    /// Eval-mode predictions.
    pub fn predict(&self, inputs: &ModelInputs, samples: &[(usize, usize)]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        let mut unused = rng::stream(0, &[]);
        for chunk in samples.chunks(256) {
            let pass = self.forward(inputs, chunk, false, &mut unused)?;
            out.extend_from_slice(pass.tape.value(pass.pred).data());
        }
        Ok(out)
    }

    /// Clipped-target MSE and its gradient for every parameter, in store order.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        inputs: &ModelInputs,
        samples: &[(usize, usize)],
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut pass = self.forward(inputs, samples, training, rng)?;
        let targets: Vec<f64> = samples
            .iter()
            .map(|&(i, d)| inputs.label(i, d).clamp(TARGET_CLIP, 1.0 - TARGET_CLIP))
            .collect();
        let target = pass.tape.constant(Tensor::vector(targets));
        let loss = pass.tape.mse_loss(pass.pred, target)?;
        let value = pass.tape.value(loss).data()[0];
        let mut grads = pass.tape.backward(loss)?;
        let g = pass
            .params
            .iter()
            .zip(self.params.iter())
            .map(|(&v, (_, p))| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((value, g))
    }
}
