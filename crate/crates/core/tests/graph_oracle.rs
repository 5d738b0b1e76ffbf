//! The incremental graph builder against a brute-force recount.

use std::collections::{BTreeMap, BTreeSet};

use ccag::graph::{build_graph, AstGraph, GraphBuilder, NodeKey};
use ccag::segment::FlatNode;
use proptest::prelude::*;

type Key = NodeKey;

/// Everything the oracle recounts, expressed over keys so node numbering
/// does not matter.
#[derive(Debug, PartialEq, Eq)]
struct KeyedGraph {
    edges: BTreeMap<(Key, Key), u32>,
    pc: BTreeSet<(Key, Key)>,
    positions: BTreeMap<Key, usize>,
    rightmost: Key,
}

fn keyed(g: &AstGraph) -> KeyedGraph {
    let k = |i: usize| g.nodes[i].key();
    KeyedGraph {
        edges: g
            .nn_edges
            .iter()
            .map(|(&(a, b), &w)| ((k(a).min(k(b)), k(a).max(k(b))), w))
            .collect(),
        pc: g.pc_edges.iter().map(|&(p, c)| (k(p), k(c))).collect(),
        positions: g.nodes.iter().map(|n| (n.key(), n.position)).collect(),
        rightmost: k(g.rightmost),
    }
}

fn brute_force(seq: &[FlatNode]) -> KeyedGraph {
    let key = |e: &FlatNode| (e.type_id, e.value_id);
    let mut edges = BTreeMap::new();
    for i in 1..seq.len() {
        let (a, b) = (key(&seq[i - 1]), key(&seq[i]));
        let pair = (a.min(b), a.max(b));
        let count = (1..seq.len())
            .filter(|&j| {
                let (x, y) = (key(&seq[j - 1]), key(&seq[j]));
                (x.min(y), x.max(y)) == pair
            })
            .count();
        edges.insert(pair, count as u32);
    }
    let pc = seq.iter().filter_map(|e| e.parent_pos.map(|p| (key(&seq[p]), key(e)))).collect();
    let last = seq.len() - 1;
    let positions = seq
        .iter()
        .map(|e| {
            let occ = (0..seq.len()).rev().find(|&j| key(&seq[j]) == key(e)).unwrap();
            (key(e), last - occ)
        })
        .collect();
    KeyedGraph { edges, pc, positions, rightmost: key(&seq[last]) }
}

fn sequence() -> impl Strategy<Value = Vec<FlatNode>> {
    (1usize..=50, 1usize..=12).prop_flat_map(|(len, alphabet)| {
        let keys = prop::collection::vec(0..alphabet, len);
        let parents = prop::collection::vec(any::<prop::sample::Index>(), len);
        (keys, parents).prop_map(|(keys, parents)| {
            keys.iter()
                .zip(parents)
                .enumerate()
                .map(|(i, (&k, p))| FlatNode {
                    type_id: k % 4,
                    value_id: k / 4,
                    parent_pos: (i > 0).then(|| p.index(i)),
                })
                .collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn builder_matches_recount(seq in sequence()) {
        let mut builder = GraphBuilder::new();
        for &e in &seq {
            builder.push(e).unwrap();
        }
        let g = builder.snapshot(None).unwrap();
        prop_assert_eq!(keyed(&g), brute_force(&seq));
        let distinct: BTreeSet<Key> = seq.iter().map(|e| (e.type_id, e.value_id)).collect();
        prop_assert_eq!(g.len(), distinct.len());
        prop_assert_eq!(g.total_edge_weight(), seq.len() as u64 - 1);
        if seq.len() < 50 {
            prop_assert_eq!(build_graph(&seq).unwrap(), g);
        }
    }
}

#[test]
fn worked_example_positions() {
    let n = |k: usize| FlatNode { type_id: k, value_id: 0, parent_pos: None };
    let g = build_graph(&[n(1), n(2), n(3), n(2)]).unwrap();
    let positions: Vec<usize> = g.nodes.iter().map(|x| x.position).collect();
    assert_eq!(positions, vec![3, 0, 1]);
}
