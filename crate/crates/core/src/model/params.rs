use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::ModelConfig;
use crate::autodiff::{ParamId, ParamStore, Real, Tensor};
use crate::{Error, Result};

/// Standard deviation of the initial embedding tables.
pub const EMBEDDING_INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Normal(f64),
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

fn layout(c: &ModelConfig) -> Vec<Spec> {
    let d = c.d;
    let mut out = Vec::new();
    let mut push = |name: String, rows: usize, cols: usize, init: Init| {
        out.push(Spec { name, rows, cols, init })
    };
    push("embed.value".into(), c.value_vocab, d, Init::Normal(EMBEDDING_INIT_STD));
    push("embed.type".into(), c.type_vocab, d, Init::Normal(EMBEDDING_INIT_STD));
    push("embed.w".into(), d, 2 * d, Init::FanIn(2 * d));
    push("embed.b".into(), 1, d, Init::Zero);
    for b in 0..c.num_blocks {
        if c.use_ngat {
            for m in 0..c.num_heads {
                let p = format!("block{b}.ngat.head{m}");
                push(format!("{p}.a"), 1, 2 * d + 1, Init::FanIn(2 * d + 1));
                push(format!("{p}.w_n"), d, d, Init::FanIn(d));
                push(format!("{p}.w_a"), d, d, Init::FanIn(d));
            }
        }
        if c.use_gsat {
            for w in ["w_k", "w_q", "w_v"] {
                push(format!("block{b}.gsat.{w}"), d, d, Init::FanIn(d));
            }
        }
        if c.use_pcat {
            for w in ["w1_self", "w1_parent", "w2"] {
                push(format!("block{b}.pcat.{w}"), d, d, Init::FanIn(d));
            }
            push(format!("block{b}.pcat.b1"), 1, d, Init::Zero);
            push(format!("block{b}.pcat.b2"), 1, d, Init::Zero);
        }
        push(format!("block{b}.residual.w1"), d, d, Init::FanIn(d));
        push(format!("block{b}.residual.w2"), d, d, Init::FanIn(d));
        push(format!("block{b}.residual.b1"), 1, d, Init::Zero);
        push(format!("block{b}.residual.b2"), 1, d, Init::Zero);
    }
    push("readout.w_node".into(), d, d, Init::FanIn(d));
    push("readout.w_rightmost".into(), d, d, Init::FanIn(d));
    push("readout.b".into(), 1, d, Init::Zero);
    push("readout.z".into(), 1, d, Init::FanIn(d));
    push("predict.value.w".into(), c.value_vocab, d, Init::FanIn(d));
    push("predict.value.b".into(), 1, c.value_vocab, Init::Zero);
    push("predict.type.w".into(), c.type_vocab, d, Init::FanIn(d));
    push("predict.type.b".into(), 1, c.type_vocab, Init::Zero);
    if c.use_uncertainty_loss {
        push("loss.theta".into(), 1, 1, Init::Zero);
        push("loss.tau".into(), 1, 1, Init::Zero);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedIds {
    pub value: ParamId,
    pub type_: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NgatHeadIds {
    /// `1 × (2d + 1)` attention vector.
    pub a: ParamId,
    pub w_n: ParamId,
    pub w_a: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GsatIds {
    pub w_k: ParamId,
    pub w_q: ParamId,
    pub w_v: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcatIds {
    pub w1_self: ParamId,
    pub w1_parent: ParamId,
    pub w2: ParamId,
    pub b1: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualIds {
    pub w1: ParamId,
    pub w2: ParamId,
    pub b1: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockIds {
    /// Empty when NGAT is disabled.
    pub ngat: Vec<NgatHeadIds>,
    pub gsat: Option<GsatIds>,
    pub pcat: Option<PcatIds>,
    pub residual: ResidualIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadoutIds {
    pub w_node: ParamId,
    pub w_rightmost: ParamId,
    pub b: ParamId,
    pub z: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictIds {
    pub value_w: ParamId,
    pub value_b: ParamId,
    pub type_w: ParamId,
    pub type_b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossIds {
    pub theta: ParamId,
    pub tau: ParamId,
}

/// Handles of every named parameter of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamIds {
    pub embed: EmbedIds,
    pub blocks: Vec<BlockIds>,
    pub readout: ReadoutIds,
    pub predict: PredictIds,
    pub loss: Option<LossIds>,
}

impl ParamIds {
    /// Looks up every parameter the configuration calls for and checks
    /// that the store holds nothing else and that all shapes agree.
    pub fn resolve<T: Real>(config: &ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        let specs = layout(config);
        if specs.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "configuration expects {} parameters, found {}",
                specs.len(),
                store.len()
            )));
        }
        for s in &specs {
            let id = store
                .id(&s.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", s.name)))?;
            let shape = store.get(id).tensor.shape();
            if shape != (s.rows, s.cols) {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    s.name,
                    shape,
                    (s.rows, s.cols)
                )));
            }
        }
        let id = |name: &str| store.id(name).expect("checked above");
        let blocks = (0..config.num_blocks)
            .map(|b| BlockIds {
                ngat: if config.use_ngat {
                    (0..config.num_heads)
                        .map(|m| NgatHeadIds {
                            a: id(&format!("block{b}.ngat.head{m}.a")),
                            w_n: id(&format!("block{b}.ngat.head{m}.w_n")),
                            w_a: id(&format!("block{b}.ngat.head{m}.w_a")),
                        })
                        .collect()
                } else {
                    Vec::new()
                },
                gsat: config.use_gsat.then(|| GsatIds {
                    w_k: id(&format!("block{b}.gsat.w_k")),
                    w_q: id(&format!("block{b}.gsat.w_q")),
                    w_v: id(&format!("block{b}.gsat.w_v")),
                }),
                pcat: config.use_pcat.then(|| PcatIds {
                    w1_self: id(&format!("block{b}.pcat.w1_self")),
                    w1_parent: id(&format!("block{b}.pcat.w1_parent")),
                    w2: id(&format!("block{b}.pcat.w2")),
                    b1: id(&format!("block{b}.pcat.b1")),
                    b2: id(&format!("block{b}.pcat.b2")),
                }),
                residual: ResidualIds {
                    w1: id(&format!("block{b}.residual.w1")),
                    w2: id(&format!("block{b}.residual.w2")),
                    b1: id(&format!("block{b}.residual.b1")),
                    b2: id(&format!("block{b}.residual.b2")),
                },
            })
            .collect();
        Ok(Self {
            embed: EmbedIds {
                value: id("embed.value"),
                type_: id("embed.type"),
                w: id("embed.w"),
                b: id("embed.b"),
            },
            blocks,
            readout: ReadoutIds {
                w_node: id("readout.w_node"),
                w_rightmost: id("readout.w_rightmost"),
                b: id("readout.b"),
                z: id("readout.z"),
            },
            predict: PredictIds {
                value_w: id("predict.value.w"),
                value_b: id("predict.value.b"),
                type_w: id("predict.type.w"),
                type_b: id("predict.type.b"),
            },
            loss: config.use_uncertainty_loss.then(|| LossIds {
                theta: id("loss.theta"),
                tau: id("loss.tau"),
            }),
        })
    }
}

/// Fresh parameters for `config`, drawn from a ChaCha stream seeded with
/// `seed` in a fixed order.
pub fn init_params<T: Real>(config: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for s in layout(config) {
        let n = s.rows * s.cols;
        let data: Vec<f64> = match s.init {
            Init::Zero => vec![0.0; n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        let data = data.into_iter().map(T::of).collect();
        store.add(s.name, Tensor::new(s.rows, s.cols, data)?);
    }
    Ok(store)
}
