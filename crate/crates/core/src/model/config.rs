use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::GraphMode;
use crate::{Error, Result};

/// Network shape and sub-layer toggles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub use_ngat: bool,
    pub use_gsat: bool,
    pub use_pcat: bool,
    pub use_residual: bool,
    pub use_positions: bool,
    pub use_uncertainty_loss: bool,
    pub graph_mode: GraphMode,
    pub value_vocab: usize,
    pub type_vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 128,
            num_blocks: 2,
            num_heads: 4,
            use_ngat: true,
            use_gsat: true,
            use_pcat: true,
            use_residual: true,
            use_positions: true,
            use_uncertainty_loss: true,
            graph_mode: GraphMode::Flattened,
            value_vocab: 2,
            type_vocab: 1,
        }
    }
}

impl ModelConfig {
    pub fn with_vocab(mut self, value_vocab: usize, type_vocab: usize) -> Self {
        self.value_vocab = value_vocab;
        self.type_vocab = type_vocab;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.d == 0 || self.d % 2 != 0 {
            return fail("hidden size d must be even and positive");
        }
        if self.num_heads == 0 {
            return fail("num_heads must be at least 1");
        }
        if self.num_blocks == 0 {
            return fail("num_blocks must be at least 1");
        }
        if !self.use_ngat && !self.use_gsat {
            return fail("at least one of NGAT and GSAT must be enabled");
        }
        if self.value_vocab < 2 {
            return fail("value vocabulary must hold at least EMPTY and UNK");
        }
        if self.type_vocab == 0 {
            return fail("type vocabulary is empty");
        }
        Ok(())
    }

    /// sha256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// The ablation variants of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Ccag,
    /// Graph built from the unflattened partial AST.
    G,
    /// Fixed equal task weights.
    N,
    /// Original-AST graph, fixed weights, no PCAT, no residual.
    B,
    P,
    R,
    Ng,
    Gs,
    Pe,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Ccag,
        Variant::G,
        Variant::N,
        Variant::B,
        Variant::P,
        Variant::R,
        Variant::Ng,
        Variant::Gs,
        Variant::Pe,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ccag => "CCAG",
            Variant::G => "CCAG-G",
            Variant::N => "CCAG-N",
            Variant::B => "CCAG-B",
            Variant::P => "CCAG-P",
            Variant::R => "CCAG-R",
            Variant::Ng => "CCAG-NG",
            Variant::Gs => "CCAG-GS",
            Variant::Pe => "CCAG-PE",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Ccag => "ccag",
            Variant::G => "g",
            Variant::N => "n",
            Variant::B => "b",
            Variant::P => "p",
            Variant::R => "r",
            Variant::Ng => "ng",
            Variant::Gs => "gs",
            Variant::Pe => "pe",
        }
    }

    /// `base` with this variant's toggles switched off.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Variant::Ccag => {}
            Variant::G => c.graph_mode = GraphMode::OriginalAst,
            Variant::N => c.use_uncertainty_loss = false,
            Variant::B => {
                c.graph_mode = GraphMode::OriginalAst;
                c.use_uncertainty_loss = false;
                c.use_pcat = false;
                c.use_residual = false;
            }
            Variant::P => c.use_pcat = false,
            Variant::R => c.use_residual = false,
            Variant::Ng => c.use_ngat = false,
            Variant::Gs => c.use_gsat = false,
            Variant::Pe => c.use_positions = false,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.strip_prefix("ccag-").unwrap_or(&key);
        Variant::ALL
            .into_iter()
            .find(|v| v.short_name() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}
