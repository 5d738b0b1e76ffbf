//! Next-node completion for a typed prefix, shared by the one-shot command
//! and the HTTP service.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Storable;
use crate::checkpoint::{Checkpoint, Sidecar};
use crate::graph::{build_graph_with_mode, GraphJson};
use crate::model::GraphInput;
use crate::segment::FlatNode;
use crate::vocab::EMPTY_ID;
use crate::{Error, Result, MAX_PREFIX};

pub const DEFAULT_TOP_K: usize = 3;

/// One element of a flattened prefix. A missing value means EMPTY.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixNode {
    #[serde(rename = "type")]
    pub type_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionRequest {
    pub nodes: Vec<PrefixNode>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub include_graph: bool,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

impl CompletionRequest {
    pub fn new(nodes: Vec<PrefixNode>) -> Self {
        Self { nodes, top_k: DEFAULT_TOP_K, include_graph: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCandidate {
    pub value: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeCandidate {
    #[serde(rename = "type")]
    pub type_name: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub checkpoint: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub values: Vec<ValueCandidate>,
    pub types: Vec<TypeCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphJson>,
    pub model_info: ModelInfo,
}

/// Reads a prefix file: either a bare node list or a full request object.
pub fn parse_prefix(text: &str) -> Result<Vec<PrefixNode>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum PrefixFile {
        Nodes(Vec<PrefixNode>),
        Request(CompletionRequest),
    }
    Ok(match serde_json::from_str(text)? {
        PrefixFile::Nodes(nodes) => nodes,
        PrefixFile::Request(r) => r.nodes,
    })
}

/// A loaded checkpoint ready to answer requests. Immutable once built.
#[derive(Debug)]
pub struct Completer<T: Storable> {
    checkpoint: Checkpoint<T>,
    info: ModelInfo,
    weights_sha256: String,
}

impl<T: Storable> Completer<T> {
    pub fn new(checkpoint: Checkpoint<T>, sidecar: &Sidecar) -> Self {
        let info = ModelInfo { checkpoint: sidecar.checkpoint_id(), config_hash: sidecar.config_hash.clone() };
        Self { checkpoint, info, weights_sha256: sidecar.weights_sha256.clone() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (checkpoint, sidecar) = Checkpoint::load(path)?;
        Ok(Self::new(checkpoint, &sidecar))
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    pub fn weights_sha256(&self) -> &str {
        &self.weights_sha256
    }

    pub fn checkpoint(&self) -> &Checkpoint<T> {
        &self.checkpoint
    }

    /// Validates and vocabulary-encodes a prefix.
    pub fn encode(&self, nodes: &[PrefixNode]) -> Result<Vec<FlatNode>> {
        if nodes.is_empty() || nodes.len() > MAX_PREFIX {
            return Err(Error::InvalidPrefix(format!(
                "prefix has {} nodes, expected 1..={MAX_PREFIX}",
                nodes.len()
            )));
        }
        let vocab = &self.checkpoint.vocab;
        nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if let Some(p) = n.parent {
                    if p >= i {
                        return Err(Error::InvalidPrefix(format!(
                            "node {i} has parent {p}, parents must precede their children"
                        )));
                    }
                }
                Ok(FlatNode {
                    type_id: vocab.encode_type(&n.type_name)?,
                    value_id: n.value.as_deref().map_or(EMPTY_ID, |v| vocab.encode_value(v)),
                    parent_pos: n.parent,
                })
            })
            .collect()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        if request.top_k == 0 {
            return Err(Error::InvalidPrefix("top_k must be at least 1".into()));
        }
        let prefix = self.encode(&request.nodes)?;
        let model = &self.checkpoint.model;
        let graph = build_graph_with_mode(&prefix, model.config().graph_mode)?;
        let prediction = model.predict(&GraphInput::from_graph(&graph))?;
        let vocab = &self.checkpoint.vocab;
        let values = prediction
            .top_values(request.top_k)
            .into_iter()
            .map(|(id, probability)| ValueCandidate {
                value: vocab.decode_value(id).unwrap_or_default().to_string(),
                probability,
            })
            .collect();
        let types = prediction
            .top_types(request.top_k)
            .into_iter()
            .map(|(id, probability)| TypeCandidate {
                type_name: vocab.decode_type(id).unwrap_or_default().to_string(),
                probability,
            })
            .collect();
        Ok(CompletionResponse {
            values,
            types,
            graph: request.include_graph.then(|| graph.to_json()),
            model_info: self.info.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use crate::vocab::Vocabulary;

    fn completer() -> Completer<f64> {
        let vocab = Vocabulary::from_parts(
            3,
            vec!["EMPTY".into(), "UNK".into(), "a".into(), "b".into(), "c".into()],
            vec!["Module".into(), "Expr".into(), "Name".into()],
        )
        .unwrap();
        let config = ModelConfig { d: 8, num_heads: 2, ..ModelConfig::default() }.with_vocab(5, 3);
        let checkpoint =
            Checkpoint { model: Model::new(config, 3).unwrap(), vocab, seed: 3, epoch: 0, step: 0 };
        let sidecar = checkpoint.sidecar(&checkpoint.encode_weights());
        Completer::new(checkpoint, &sidecar)
    }

    fn node(t: &str, v: Option<&str>, parent: Option<usize>) -> PrefixNode {
        PrefixNode { type_name: t.into(), value: v.map(Into::into), parent }
    }

    fn prefix() -> Vec<PrefixNode> {
        vec![node("Module", None, None), node("Expr", None, Some(0)), node("Name", Some("a"), Some(1))]
    }

    #[test]
    fn lists_are_sorted_and_truncated() {
        let c = completer();
        for k in [1, 3, 10] {
            let r = c.complete(&CompletionRequest { top_k: k, ..CompletionRequest::new(prefix()) }).unwrap();
            assert_eq!(r.values.len(), k.min(5));
            assert_eq!(r.types.len(), k.min(3));
            assert!(r.values.windows(2).all(|w| w[0].probability >= w[1].probability));
            assert!(r.types.windows(2).all(|w| w[0].probability >= w[1].probability));
            assert!(r.values.iter().map(|v| v.probability).sum::<f64>() <= 1.0 + 1e-12);
            assert!(r.graph.is_none());
        }
    }

    #[test]
    fn unknown_values_map_to_unk_and_unknown_types_fail() {
        let c = completer();
        let mut nodes = prefix();
        nodes[2].value = Some("never-seen".into());
        assert_eq!(c.encode(&nodes).unwrap()[2].value_id, crate::vocab::UNK_ID);
        nodes[2].type_name = "Lambda".into();
        assert!(matches!(c.encode(&nodes), Err(Error::UnknownType(_))));
    }

    #[test]
    fn malformed_prefixes_are_rejected() {
        let c = completer();
        assert!(matches!(c.complete(&CompletionRequest::new(vec![])), Err(Error::InvalidPrefix(_))));
        let long = vec![node("Module", None, None); MAX_PREFIX + 1];
        assert!(matches!(c.encode(&long), Err(Error::InvalidPrefix(_))));
        let forward = vec![node("Module", None, Some(0))];
        assert!(matches!(c.encode(&forward), Err(Error::InvalidPrefix(_))));
        let zero = CompletionRequest { top_k: 0, ..CompletionRequest::new(prefix()) };
        assert!(matches!(c.complete(&zero), Err(Error::InvalidPrefix(_))));
    }

    #[test]
    fn graph_is_attached_on_request() {
        let c = completer();
        let r = c.complete(&CompletionRequest { include_graph: true, ..CompletionRequest::new(prefix()) }).unwrap();
        let g = r.graph.unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.rightmost, 2);
        assert_eq!(r.model_info, *c.info());
    }

    #[test]
    fn completion_is_deterministic() {
        let c = completer();
        let req = CompletionRequest::new(prefix());
        assert_eq!(c.complete(&req).unwrap(), c.complete(&req).unwrap());
    }

    #[test]
    fn prefix_files_accept_both_shapes() {
        let bare = r#"[{"type":"Module"},{"type":"Name","value":"a","parent":0}]"#;
        let wrapped = r#"{"nodes":[{"type":"Module"},{"type":"Name","value":"a","parent":0}],"top_k":2}"#;
        assert_eq!(parse_prefix(bare).unwrap(), parse_prefix(wrapped).unwrap());
        assert!(parse_prefix(r#"[{"kind":"Module"}]"#).is_err());
    }
}
