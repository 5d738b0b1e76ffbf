//! Merged AST graphs built from flattened prefixes.
//!
//! Every distinct `(type, value)` key in the prefix becomes one node. Each
//! adjacent pair in the sequence adds 1 to the weight of the undirected
//! node-node edge between their keys (a key adjacent to itself counts on its
//! own self-loop). Recorded parents become directed, unweighted parent-child
//! edges between keys, and every node remembers how far its last occurrence
//! is from the right-most element.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::segment::{FlatNode, Segment};
use crate::{Error, Result, MAX_PREFIX};

pub type NodeKey = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphNode {
    pub type_id: usize,
    pub value_id: usize,
    /// Steps from this key's last occurrence to the right-most element.
    pub position: usize,
}

impl GraphNode {
    pub fn key(&self) -> NodeKey {
        (self.type_id, self.value_id)
    }
}

/// Ground truth for the node following a prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Target {
    pub value_id: usize,
    pub type_id: usize,
}

/// How a prefix is turned into a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphMode {
    /// Merged nodes over the flattened sequence.
    #[default]
    Flattened,
    /// One node per prefix element, edges along the tree only.
    OriginalAst,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstGraph {
    pub nodes: Vec<GraphNode>,
    /// Adjacency counts keyed by `(min, max)` node index. Attention
    /// self-loops are not stored here; see [`AstGraph::attention_weight`].
    pub nn_edges: BTreeMap<(usize, usize), u32>,
    /// Directed `(parent, child)` pairs.
    pub pc_edges: BTreeSet<(usize, usize)>,
    pub rightmost: usize,
    pub target: Option<Target>,
}

impl AstGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Edge weight seen by neighbor attention, or 0 for non-neighbors. Every
    /// node is its own neighbor with one extra unit of weight.
    pub fn attention_weight(&self, i: usize, j: usize) -> u32 {
        let stored = self.nn_edges.get(&(i.min(j), i.max(j))).copied().unwrap_or(0);
        if i == j {
            stored + 1
        } else {
            stored
        }
    }

    pub fn parents_of(&self, child: usize) -> impl Iterator<Item = usize> + '_ {
        self.pc_edges
            .iter()
            .filter(move |&&(_, c)| c == child)
            .map(|&(p, _)| p)
    }

    /// Sum of stored adjacency weights (self-loops injected for attention
    /// are excluded).
    pub fn total_edge_weight(&self) -> u64 {
        self.nn_edges.values().map(|&w| w as u64).sum()
    }

    /// Applies a node relabeling: node `i` moves to index `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> AstGraph {
        assert_eq!(perm.len(), self.len());
        let mut nodes = self.nodes.clone();
        for (i, node) in self.nodes.iter().enumerate() {
            nodes[perm[i]] = *node;
        }
        AstGraph {
            nodes,
            nn_edges: self
                .nn_edges
                .iter()
                .map(|(&(a, b), &w)| {
                    let (a, b) = (perm[a], perm[b]);
                    ((a.min(b), a.max(b)), w)
                })
                .collect(),
            pc_edges: self.pc_edges.iter().map(|&(p, c)| (perm[p], perm[c])).collect(),
            rightmost: perm[self.rightmost],
            target: self.target,
        }
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            nodes: self.nodes.clone(),
            nn_edges: self
                .nn_edges
                .iter()
                .map(|(&(a, b), &weight)| WeightedEdge { a, b, weight })
                .collect(),
            pc_edges: self.pc_edges.iter().map(|&(p, c)| [p, c]).collect(),
            rightmost: self.rightmost,
            target: self.target,
        }
    }
}

/// Debug serialization used by golden tests and the completion service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphJson {
    pub nodes: Vec<GraphNode>,
    pub nn_edges: Vec<WeightedEdge>,
    pub pc_edges: Vec<[usize; 2]>,
    pub rightmost: usize,
    pub target: Option<Target>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub a: usize,
    pub b: usize,
    pub weight: u32,
}

/// Grows a merged graph one flattened element at a time, so the graphs of
/// all prefixes of a segment cost one pass.
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    key_index: HashMap<NodeKey, usize>,
    keys: Vec<NodeKey>,
    last_occurrence: Vec<usize>,
    /// Graph node of every sequence position.
    sequence: Vec<usize>,
    nn_edges: BTreeMap<(usize, usize), u32>,
    pc_edges: BTreeSet<(usize, usize)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn push(&mut self, element: FlatNode) -> Result<()> {
        let pos = self.sequence.len();
        if let Some(p) = element.parent_pos {
            if p >= pos {
                return Err(Error::InvalidPrefix(format!(
                    "element {pos} names parent {p}, which does not precede it"
                )));
            }
        }
        let key = (element.type_id, element.value_id);
        let node = match self.key_index.get(&key) {
            Some(&n) => n,
            None => {
                let n = self.keys.len();
                self.key_index.insert(key, n);
                self.keys.push(key);
                self.last_occurrence.push(pos);
                n
            }
        };
        self.last_occurrence[node] = pos;
        if let Some(&prev) = self.sequence.last() {
            *self.nn_edges.entry((prev.min(node), prev.max(node))).or_insert(0) += 1;
        }
        if let Some(p) = element.parent_pos {
            self.pc_edges.insert((self.sequence[p], node));
        }
        self.sequence.push(node);
        Ok(())
    }

    pub fn snapshot(&self, target: Option<Target>) -> Result<AstGraph> {
        let Some(&rightmost) = self.sequence.last() else {
            return Err(Error::InvalidPrefix("prefix is empty".into()));
        };
        let last = self.sequence.len() - 1;
        let nodes = self
            .keys
            .iter()
            .zip(&self.last_occurrence)
            .map(|(&(type_id, value_id), &occ)| GraphNode {
                type_id,
                value_id,
                position: last - occ,
            })
            .collect();
        Ok(AstGraph {
            nodes,
            nn_edges: self.nn_edges.clone(),
            pc_edges: self.pc_edges.clone(),
            rightmost,
            target,
        })
    }
}

fn check_prefix(prefix: &[FlatNode]) -> Result<()> {
    if prefix.is_empty() {
        return Err(Error::InvalidPrefix("prefix is empty".into()));
    }
    if prefix.len() > MAX_PREFIX {
        return Err(Error::InvalidPrefix(format!(
            "prefix has {} elements; at most {MAX_PREFIX} are allowed",
            prefix.len()
        )));
    }
    Ok(())
}

/// Builds the merged graph of a flattened prefix.
pub fn build_graph(prefix: &[FlatNode]) -> Result<AstGraph> {
    check_prefix(prefix)?;
    let mut builder = GraphBuilder::new();
    for &element in prefix {
        builder.push(element)?;
    }
    builder.snapshot(None)
}

/// Builds a graph over the unflattened partial tree: one node per element,
/// an undirected weight-1 edge and a directed parent-child edge for every
/// tree edge, no merging.
pub fn build_original_graph(prefix: &[FlatNode]) -> Result<AstGraph> {
    check_prefix(prefix)?;
    let last = prefix.len() - 1;
    let mut nodes = Vec::with_capacity(prefix.len());
    let mut nn_edges = BTreeMap::new();
    let mut pc_edges = BTreeSet::new();
    for (pos, element) in prefix.iter().enumerate() {
        nodes.push(GraphNode {
            type_id: element.type_id,
            value_id: element.value_id,
            position: last - pos,
        });
        if let Some(p) = element.parent_pos {
            if p >= pos {
                return Err(Error::InvalidPrefix(format!(
                    "element {pos} names parent {p}, which does not precede it"
                )));
            }
            nn_edges.insert((p, pos), 1);
            pc_edges.insert((p, pos));
        }
    }
    Ok(AstGraph {
        nodes,
        nn_edges,
        pc_edges,
        rightmost: last,
        target: None,
    })
}

pub fn build_graph_with_mode(prefix: &[FlatNode], mode: GraphMode) -> Result<AstGraph> {
    match mode {
        GraphMode::Flattened => build_graph(prefix),
        GraphMode::OriginalAst => build_original_graph(prefix),
    }
}

/// Distance from each graph node's last occurrence to the right-most
/// element, recomputed from the prefix.
pub fn compute_positions(prefix: &[FlatNode], graph: &AstGraph) -> Vec<usize> {
    let last = prefix.len().saturating_sub(1);
    graph
        .nodes
        .iter()
        .map(|node| {
            let occ = prefix
                .iter()
                .rposition(|e| (e.type_id, e.value_id) == node.key())
                .expect("graph node must come from this prefix");
            last - occ
        })
        .collect()
}

/// Graphs for every prediction position `r` in `2..=l`: the graph of the
/// first `r - 1` elements, labelled with element `r`.
pub fn segment_graphs(segment: &Segment, mode: GraphMode) -> Result<Vec<AstGraph>> {
    let nodes = &segment.nodes;
    let mut graphs = Vec::with_capacity(segment.target_count());
    match mode {
        GraphMode::Flattened => {
            let mut builder = GraphBuilder::new();
            for r in 1..nodes.len() {
                builder.push(nodes[r - 1])?;
                let next = nodes[r];
                graphs.push(builder.snapshot(Some(Target {
                    value_id: next.value_id,
                    type_id: next.type_id,
                }))?);
            }
        }
        GraphMode::OriginalAst => {
            for r in 1..nodes.len() {
                let mut g = build_original_graph(&nodes[..r])?;
                g.target = Some(Target {
                    value_id: nodes[r].value_id,
                    type_id: nodes[r].type_id,
                });
                graphs.push(g);
            }
        }
    }
    Ok(graphs)
}
