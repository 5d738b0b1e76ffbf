//! Individual network stages on a [`Tape`]. Rows are nodes; weight matrices
//! are stored `out × in` and applied to every row as `X · Wᵀ`.

use super::params::{
    BlockIds, EmbedIds, GsatIds, LossIds, NgatHeadIds, PcatIds, PredictIds, ReadoutIds,
    ResidualIds,
};
use super::GraphInput;
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Negative slope of the neighbor attention non-linearity.
pub const LEAKY_SLOPE: f64 = 0.2;

fn constant<T: Real>(tape: &mut Tape<'_, T>, rows: usize, cols: usize, data: &[f64]) -> Var {
    let t = Tensor::new(rows, cols, data.iter().map(|&x| T::of(x)).collect())
        .expect("constant shape");
    tape.constant(t)
}

/// `x · Wᵀ + b`
fn affine<T: Real>(tape: &mut Tape<'_, T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul_bt(x, w)?;
    tape.add(y, b)
}

/// Initial node features: `ReLU(W([t || v] + p) + b)` where every
/// coordinate of `p` is the node's distance to the right-most element.
pub fn embed_nodes<T: Real>(
    tape: &mut Tape<'_, T>,
    ids: &EmbedIds,
    input: &GraphInput,
    use_positions: bool,
) -> Result<Var> {
    let type_rows = tape.params().get(ids.type_).tensor.rows();
    let value_rows = tape.params().get(ids.value).tensor.rows();
    if let Some(&id) = input.type_ids.iter().find(|&&t| t >= type_rows) {
        return Err(Error::IdOutOfRange { what: "type", id, size: type_rows });
    }
    if let Some(&id) = input.value_ids.iter().find(|&&v| v >= value_rows) {
        return Err(Error::IdOutOfRange { what: "value", id, size: value_rows });
    }
    let type_table = tape.param(ids.type_);
    let value_table = tape.param(ids.value);
    let t = tape.gather_rows(type_table, &input.type_ids)?;
    let v = tape.gather_rows(value_table, &input.value_ids)?;
    let mut x = tape.concat_cols(t, v)?;
    if use_positions {
        let p = constant(tape, input.n, 1, &input.positions);
        x = tape.add(x, p)?;
    }
    let w = tape.param(ids.w);
    let b = tape.param(ids.b);
    let h = affine(tape, x, w, b)?;
    Ok(tape.relu(h))
}

/// Multi-head attention over node-node neighbors (self included). Returns
/// the layer output and each head's `N × N` attention matrix, whose row `i`
/// holds the weights node `i` assigns to its neighbors.
pub fn ngat_layer<T: Real>(
    tape: &mut Tape<'_, T>,
    heads: &[NgatHeadIds],
    input: &GraphInput,
    h: Var,
) -> Result<(Var, Vec<Var>)> {
    let (n, d) = tape.shape(h);
    let weights = constant(tape, n, n, &input.weights);
    let mut sum: Option<Var> = None;
    let mut alphas = Vec::with_capacity(heads.len());
    for head in heads {
        let a = tape.param(head.a);
        let w_n = tape.param(head.w_n);
        let w_a = tape.param(head.w_a);
        let z = tape.matmul_bt(h, w_n)?;
        let a_self = tape.slice_cols(a, 0, d)?;
        let a_nbr = tape.slice_cols(a, d, 2 * d)?;
        let a_edge = tape.slice_cols(a, 2 * d, 2 * d + 1)?;
        // a · [z_i || z_j || w_ij] = a_self·z_i + a_nbr·z_j + a_edge·w_ij
        let s_self = tape.matmul_bt(z, a_self)?;
        let s_nbr = tape.matmul_bt(z, a_nbr)?;
        let s_nbr = tape.transpose(s_nbr);
        let logits = tape.add(s_self, s_nbr)?;
        let edge = tape.mul(weights, a_edge)?;
        let logits = tape.add(logits, edge)?;
        let logits = tape.leaky_relu(logits, LEAKY_SLOPE);
        let alpha = tape.softmax_rows(logits, Some(&input.neighbors))?;
        let projected = tape.matmul_bt(h, w_a)?;
        let out = tape.matmul(alpha, projected)?;
        alphas.push(alpha);
        sum = Some(match sum {
            None => out,
            Some(acc) => tape.add(acc, out)?,
        });
    }
    let sum = sum.ok_or_else(|| Error::Config("NGAT needs at least one head".into()))?;
    let mean = tape.scale(sum, 1.0 / heads.len() as f64);
    Ok((tape.relu(mean), alphas))
}

/// Scaled dot-product self-attention over all nodes. Returns the output and
/// the attention matrix (row `i` = weights over source nodes for node `i`).
pub fn gsat_layer<T: Real>(tape: &mut Tape<'_, T>, ids: &GsatIds, h: Var) -> Result<(Var, Var)> {
    let d = tape.shape(h).1;
    let w_k = tape.param(ids.w_k);
    let w_q = tape.param(ids.w_q);
    let w_v = tape.param(ids.w_v);
    let k = tape.matmul_bt(h, w_k)?;
    let q = tape.matmul_bt(h, w_q)?;
    let v = tape.matmul_bt(h, w_v)?;
    let scores = tape.matmul_bt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let attention = tape.softmax_rows(scores, None)?;
    Ok((tape.matmul(attention, v)?, attention))
}

/// Two-layer parent-child refinement; a node without parents gets a zero
/// parent term.
pub fn pcat_layer<T: Real>(
    tape: &mut Tape<'_, T>,
    ids: &PcatIds,
    input: &GraphInput,
    h: Var,
) -> Result<Var> {
    let n = tape.shape(h).0;
    let avg = constant(tape, n, n, &input.parent_avg);
    let parent_mean = tape.matmul(avg, h)?;
    let w_self = tape.param(ids.w1_self);
    let w_parent = tape.param(ids.w1_parent);
    let b1 = tape.param(ids.b1);
    let own = affine(tape, h, w_self, b1)?;
    let inherited = tape.matmul_bt(parent_mean, w_parent)?;
    let p = tape.add(own, inherited)?;
    let p = tape.relu(p);
    let w2 = tape.param(ids.w2);
    let b2 = tape.param(ids.b2);
    let out = affine(tape, p, w2, b2)?;
    Ok(tape.relu(out))
}

/// `W2 ReLU(W1 h_p + b1) + b2`, plus the block input when `skip` is set.
pub fn residual<T: Real>(
    tape: &mut Tape<'_, T>,
    ids: &ResidualIds,
    h_p: Var,
    h_in: Var,
    skip: bool,
) -> Result<Var> {
    let w1 = tape.param(ids.w1);
    let b1 = tape.param(ids.b1);
    let r = affine(tape, h_p, w1, b1)?;
    let r = tape.relu(r);
    let w2 = tape.param(ids.w2);
    let b2 = tape.param(ids.b2);
    let out = affine(tape, r, w2, b2)?;
    if skip {
        tape.add(out, h_in)
    } else {
        Ok(out)
    }
}

/// Attention matrices recorded by one block.
#[derive(Debug, Clone, Default)]
pub struct BlockTrace {
    pub ngat_alpha: Vec<Var>,
    pub gsat_attention: Option<Var>,
    pub output: Option<Var>,
}

/// NGAT, GSAT, PCAT and the residual MLP in sequence. Disabled sub-layers
/// pass their input through.
pub fn astgab_forward<T: Real>(
    tape: &mut Tape<'_, T>,
    block: &BlockIds,
    input: &GraphInput,
    h_in: Var,
    use_residual: bool,
) -> Result<(Var, BlockTrace)> {
    let mut trace = BlockTrace::default();
    let mut h = h_in;
    if !block.ngat.is_empty() {
        let (out, alphas) = ngat_layer(tape, &block.ngat, input, h)?;
        h = out;
        trace.ngat_alpha = alphas;
    }
    if let Some(g) = &block.gsat {
        let (out, attention) = gsat_layer(tape, g, h)?;
        h = out;
        trace.gsat_attention = Some(attention);
    }
    if let Some(p) = &block.pcat {
        h = pcat_layer(tape, p, input, h)?;
    }
    let out = residual(tape, &block.residual, h, h_in, use_residual)?;
    trace.output = Some(out);
    Ok((out, trace))
}

/// Graph representation `s = Σ_i β_i h_i` with the unnormalized relevance
/// `β_i = z · σ(W_node h_i + W_rightmost h_R + b)`. Returns `(s, β)`.
pub fn readout<T: Real>(
    tape: &mut Tape<'_, T>,
    ids: &ReadoutIds,
    h: Var,
    rightmost: usize,
) -> Result<(Var, Var)> {
    let w_node = tape.param(ids.w_node);
    let w_right = tape.param(ids.w_rightmost);
    let b = tape.param(ids.b);
    let z = tape.param(ids.z);
    let h_r = tape.gather_rows(h, &[rightmost])?;
    let node_term = affine(tape, h, w_node, b)?;
    let right_term = tape.matmul_bt(h_r, w_right)?;
    let gate = tape.add(node_term, right_term)?;
    let gate = tape.sigmoid(gate);
    let beta = tape.matmul_bt(gate, z)?;
    let beta_t = tape.transpose(beta);
    Ok((tape.matmul(beta_t, h)?, beta))
}

/// Value and type logits (`1 × V` and `1 × T`).
pub fn predict<T: Real>(tape: &mut Tape<'_, T>, ids: &PredictIds, s: Var) -> Result<(Var, Var)> {
    let vw = tape.param(ids.value_w);
    let vb = tape.param(ids.value_b);
    let tw = tape.param(ids.type_w);
    let tb = tape.param(ids.type_b);
    let value = affine(tape, s, vw, vb)?;
    let type_ = affine(tape, s, tw, tb)?;
    Ok((value, type_))
}

/// `-log softmax(logits)[target]` for a `1 × C` logit row.
pub fn cross_entropy<T: Real>(tape: &mut Tape<'_, T>, logits: Var, target: usize) -> Result<Var> {
    let log_probs = tape.log_softmax_rows(logits);
    let picked = tape.pick(log_probs, target)?;
    Ok(tape.scale(picked, -1.0))
}

/// `exp(-2θ')·L_v + exp(-2τ')·L_t + reg·(θ' + τ')` when task weights are
/// learned, else `L_v + L_t`. `reg` lets a batch split the regularizer
/// across per-graph tapes so their sum equals the batch loss.
pub fn joint_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    loss_v: Var,
    loss_t: Var,
    weights: Option<&LossIds>,
    reg: f64,
) -> Result<Var> {
    let Some(w) = weights else {
        return tape.add(loss_v, loss_t);
    };
    let theta = tape.param(w.theta);
    let tau = tape.param(w.tau);
    let wv = tape.scale(theta, -2.0);
    let wv = tape.exp(wv);
    let wt = tape.scale(tau, -2.0);
    let wt = tape.exp(wt);
    let lv = tape.mul(wv, loss_v)?;
    let lt = tape.mul(wt, loss_t)?;
    let tasks = tape.add(lv, lt)?;
    let sum = tape.add(theta, tau)?;
    let sum = tape.scale(sum, reg);
    tape.add(tasks, sum)
}
