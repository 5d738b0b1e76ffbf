//! The completion network.
//!
//! Node features come from type and value embeddings plus a fixed distance
//! encoding, pass through stacked attention blocks (neighbor attention,
//! global self-attention, parent-child attention and a residual MLP), are
//! pooled by attention to the right-most node and projected onto the value
//! and type vocabularies.

mod config;
pub mod layers;
mod params;

pub use config::{ModelConfig, Variant};
pub use layers::BlockTrace;
pub use params::{init_params, ParamIds, EMBEDDING_INIT_STD};

use serde::Serialize;

use crate::autodiff::{Gradients, ParamStore, Real, Tape, Var};
use crate::graph::{AstGraph, Target};
use crate::{Error, Result};

/// Dense per-graph inputs, computed once per graph and reused across epochs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphInput {
    pub n: usize,
    pub type_ids: Vec<usize>,
    pub value_ids: Vec<usize>,
    pub positions: Vec<f64>,
    /// `n × n` neighbor-attention edge weights, self-loops included.
    pub weights: Vec<f64>,
    pub neighbors: Vec<bool>,
    /// `n × n`; row `i` averages over the parents of node `i`.
    pub parent_avg: Vec<f64>,
    pub rightmost: usize,
}

impl GraphInput {
    pub fn from_graph(graph: &AstGraph) -> Self {
        let n = graph.len();
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = graph.attention_weight(i, i) as f64;
        }
        for (&(a, b), &w) in &graph.nn_edges {
            if a != b {
                weights[a * n + b] = w as f64;
                weights[b * n + a] = w as f64;
            }
        }
        let neighbors = weights.iter().map(|&w| w > 0.0).collect();
        let mut parent_avg = vec![0.0; n * n];
        let mut parent_count = vec![0usize; n];
        for &(_, c) in &graph.pc_edges {
            parent_count[c] += 1;
        }
        for &(p, c) in &graph.pc_edges {
            parent_avg[c * n + p] = 1.0 / parent_count[c] as f64;
        }
        Self {
            n,
            type_ids: graph.nodes.iter().map(|g| g.type_id).collect(),
            value_ids: graph.nodes.iter().map(|g| g.value_id).collect(),
            positions: graph.nodes.iter().map(|g| g.position as f64).collect(),
            weights,
            neighbors,
            parent_avg,
            rightmost: graph.rightmost,
        }
    }
}

/// Handles into a tape after one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub h0: Var,
    pub blocks: Vec<BlockTrace>,
    pub h: Var,
    pub s: Var,
    pub beta: Var,
    pub value_logits: Var,
    pub type_logits: Var,
}

/// Loss handles for one graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphLoss {
    pub value: Var,
    pub type_: Var,
    pub joint: Var,
}

/// Per-graph loss values in `f64`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValues {
    pub value: f64,
    pub type_: f64,
    pub joint: f64,
}

/// Next-node distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub value_probs: Vec<f64>,
    pub type_probs: Vec<f64>,
}

impl Prediction {
    pub fn top_values(&self, k: usize) -> Vec<(usize, f64)> {
        top_k(&self.value_probs, k)
    }

    pub fn top_types(&self, k: usize) -> Vec<(usize, f64)> {
        top_k(&self.type_probs, k)
    }
}

/// The `k` largest entries, descending; ties go to the lower id.
pub fn top_k(probs: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.into_iter().take(k).map(|i| (i, probs[i])).collect()
}

/// Index of the largest entry, lowest id on ties.
pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    ids: ParamIds,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let ids = ParamIds::resolve(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn ids(&self) -> &ParamIds {
        &self.ids
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Current `(θ', τ')`, if task weights are learned.
    pub fn task_weights(&self) -> Option<(f64, f64)> {
        self.ids.loss.map(|l| {
            (
                self.params.get(l.theta).tensor.data()[0].as_f64(),
                self.params.get(l.tau).tensor.data()[0].as_f64(),
            )
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_, T>, input: &GraphInput) -> Result<Forward> {
        if input.n == 0 {
            return Err(Error::InvalidPrefix("graph has no nodes".into()));
        }
        let h0 = layers::embed_nodes(tape, &self.ids.embed, input, self.config.use_positions)?;
        let mut h = h0;
        let mut blocks = Vec::with_capacity(self.ids.blocks.len());
        for block in &self.ids.blocks {
            let (out, trace) =
                layers::astgab_forward(tape, block, input, h, self.config.use_residual)?;
            h = out;
            blocks.push(trace);
        }
        let (s, beta) = layers::readout(tape, &self.ids.readout, h, input.rightmost)?;
        let (value_logits, type_logits) = layers::predict(tape, &self.ids.predict, s)?;
        Ok(Forward {
            h0,
            blocks,
            h,
            s,
            beta,
            value_logits,
            type_logits,
        })
    }

    /// Losses for one graph. `reg` scales the task-weight regularizer; with
    /// `reg = 1` the mean of per-graph objectives is the batch objective.
    pub fn graph_loss(
        &self,
        tape: &mut Tape<'_, T>,
        forward: &Forward,
        target: Target,
        reg: f64,
    ) -> Result<GraphLoss> {
        let value_size = self.config.value_vocab;
        let type_size = self.config.type_vocab;
        if target.value_id >= value_size {
            return Err(Error::IdOutOfRange { what: "value", id: target.value_id, size: value_size });
        }
        if target.type_id >= type_size {
            return Err(Error::IdOutOfRange { what: "type", id: target.type_id, size: type_size });
        }
        let value = layers::cross_entropy(tape, forward.value_logits, target.value_id)?;
        let type_ = layers::cross_entropy(tape, forward.type_logits, target.type_id)?;
        let joint = layers::joint_loss(tape, value, type_, self.ids.loss.as_ref(), reg)?;
        Ok(GraphLoss { value, type_, joint })
    }

    /// Forward and backward for one graph.
    pub fn loss_and_gradients(
        &self,
        input: &GraphInput,
        target: Target,
        reg: f64,
    ) -> Result<(LossValues, Gradients<T>)> {
        let mut tape = Tape::new(&self.params);
        let fwd = self.forward(&mut tape, input)?;
        let loss = self.graph_loss(&mut tape, &fwd, target, reg)?;
        let values = LossValues {
            value: tape.scalar(loss.value).as_f64(),
            type_: tape.scalar(loss.type_).as_f64(),
            joint: tape.scalar(loss.joint).as_f64(),
        };
        if !values.joint.is_finite() {
            return Err(Error::NonFinite(format!("loss ({values:?})")));
        }
        Ok((values, tape.backward(loss.joint)?))
    }

    /// Argmax ids `(value, type)` without computing probabilities.
    pub fn predict_ids(&self, input: &GraphInput) -> Result<(usize, usize)> {
        let mut tape = Tape::new(&self.params);
        let fwd = self.forward(&mut tape, input)?;
        Ok((argmax(tape.value(fwd.value_logits)), argmax(tape.value(fwd.type_logits))))
    }

    pub fn predict(&self, input: &GraphInput) -> Result<Prediction> {
        let mut tape = Tape::new(&self.params);
        let fwd = self.forward(&mut tape, input)?;
        let v = tape.softmax_rows(fwd.value_logits, None)?;
        let t = tape.softmax_rows(fwd.type_logits, None)?;
        Ok(Prediction {
            value_probs: tape.value(v).iter().map(|x| x.as_f64()).collect(),
            type_probs: tape.value(t).iter().map(|x| x.as_f64()).collect(),
        })
    }
}
