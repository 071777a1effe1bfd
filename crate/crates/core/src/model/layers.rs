//! The network's building blocks as tape functions. Each takes parameter
//! handles already registered on the tape.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::node2vec::DistrictEmbedding;

/// Order-proportion mix of district embedding rows. All-zero proportions
/// (no orders) give the zero vector.
pub fn mix_district_embedding(proportions: &[f64], emb: &DistrictEmbedding) -> Result<Vec<f64>> {
    if proportions.len() != emb.district_count() {
        return Err(Error::shape("mix_district_embedding", &[proportions.len()], emb.0.shape()));
    }
    if let Some(j) = proportions.iter().position(|p| *p < 0.0 || !p.is_finite()) {
        return Err(Error::Range(format!("order proportion for district {j} is {}", proportions[j])));
    }
    let mut out = vec![0.0; emb.dim()];
    for (j, &p) in proportions.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (o, e) in out.iter_mut().zip(emb.row(j)) {
            *o += p * e;
        }
    }
    Ok(out)
}

/// `x · w + b`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row_bias(xw, b)
}

/// Feature vectors `X = FC([Emb || C])` for a set of couriers.
pub fn assemble_features(tape: &mut Tape, emb_and_c: Var, w: Var, b: Var) -> Result<Var> {
    let expected = tape.value(w).rows();
    let got = tape.value(emb_and_c).cols();
    if expected != got {
        return Err(Error::Config(format!(
            "feature width {got} does not match the input layer; expected {expected}"
        )));
    }
    linear(tape, emb_and_c, w, b)
}

/// One GCN layer, `ReLU(Â · X · W)`.
pub fn gcn_forward(tape: &mut Tape, x: Var, adj: Var, w: Var) -> Result<Var> {
    let (n_adj, n_x) = (tape.value(adj).rows(), tape.value(x).rows());
    if n_adj != n_x || tape.value(adj).cols() != n_x {
        return Err(Error::shape("gcn_forward", tape.value(adj).shape(), tape.value(x).shape()));
    }
    let xw = tape.matmul(x, w)?;
    let h = tape.matmul(adj, xw)?;
    Ok(tape.relu(h))
}

/// Handles of one LSTM layer; gate order in the fused matrices is
/// input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// Runs `steps` (each `B × in`) through one LSTM layer; returns the hidden
/// state after every step.
pub fn lstm_layer(tape: &mut Tape, steps: &[Var], layer: LstmLayer) -> Result<Vec<Var>> {
    let hidden = tape.value(layer.w_hh).rows();
    let batch = tape.value(steps[0]).rows();
    // Input projections for all steps in one product.
    let stacked = tape.concat(steps, 0)?;
    let proj = tape.matmul(stacked, layer.w_ih)?;
    let mut h = tape.constant(Tensor::zeros(&[batch, hidden]));
    let mut c = tape.constant(Tensor::zeros(&[batch, hidden]));
    let mut outs = Vec::with_capacity(steps.len());
    for k in 0..steps.len() {
        let xk = tape.slice_rows(proj, k * batch, batch)?;
        let hk = tape.matmul(h, layer.w_hh)?;
        let pre = tape.add(xk, hk)?;
        let gates = tape.add_row_bias(pre, layer.bias)?;
        let i = tape.slice_cols(gates, 0, hidden)?;
        let f = tape.slice_cols(gates, hidden, hidden)?;
        let g = tape.slice_cols(gates, 2 * hidden, hidden)?;
        let o = tape.slice_cols(gates, 3 * hidden, hidden)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        h = tape.mul(o, tc)?;
        outs.push(h);
    }
    Ok(outs)
}

/// Stacked LSTM with dropout between layers; returns the top layer's final
/// hidden state.
pub fn lstm_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    steps: &[Var],
    layers: &[LstmLayer],
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if steps.is_empty() || layers.is_empty() {
        return Err(Error::shape("lstm_forward", &[steps.len()], &[layers.len()]));
    }
    let mut seq = steps.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        if l > 0 {
            seq = seq
                .into_iter()
                .map(|s| tape.dropout(s, dropout, training, rng))
                .collect::<Result<Vec<_>>>()?;
        }
        seq = lstm_layer(tape, &seq, *layer)?;
    }
    Ok(*seq.last().expect("non-empty"))
}

#[derive(Debug, Clone, Copy)]
pub struct RnnParams {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// Elman RNN, `h_k = tanh(a_k W_ih + h_{k-1} W_hh + b)`; returns the final
/// hidden state.
pub fn anomaly_forward(tape: &mut Tape, steps: &[Var], rnn: RnnParams) -> Result<Var> {
    let hidden = tape.value(rnn.w_hh).rows();
    let batch = tape.value(*steps.first().ok_or_else(|| Error::shape("anomaly_forward", &[0], &[1]))?).rows();
    let mut h = tape.constant(Tensor::zeros(&[batch, hidden]));
    for &a in steps {
        let xa = tape.matmul(a, rnn.w_ih)?;
        let hh = tape.matmul(h, rnn.w_hh)?;
        let pre = tape.add(xa, hh)?;
        let pre = tape.add_row_bias(pre, rnn.bias)?;
        h = tape.tanh(pre);
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy)]
pub struct MemoryParams {
    pub slots: Var,
    pub w_q: Var,
    pub b_q: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub query: Var,
    pub score: Var,
    pub read: Var,
}

/// Query the memory with `[S || E]`: `q = W_q [S||E] + b_q`,
/// `score = softmax(M q)`, `a = score M`. Rows are batch entries.
pub fn memory_attend(tape: &mut Tape, s: Var, e: Option<Var>, mem: MemoryParams) -> Result<Attention> {
    let input = match e {
        Some(e) => tape.concat(&[s, e], 1)?,
        None => s,
    };
    let query = linear(tape, input, mem.w_q, mem.b_q)?;
    let slots_t = tape.transpose(mem.slots)?;
    let logits = tape.matmul(query, slots_t)?;
    let score = tape.softmax(logits)?;
    let read = tape.matmul(score, mem.slots)?;
    Ok(Attention { query, score, read })
}
