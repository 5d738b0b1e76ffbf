//! A synthetic corpus in the benchmark's AST format.
//!
//! Every program is a single function whose body repeats one statement
//! shape: a lookup key, the value bound to that key in this program, then
//! the full candidate list in canonical order, each element followed by a
//! valueless marker:
//!
//! ```text
//! Module
//!   FunctionDef
//!     identifier: <name>
//!     arguments
//!     body
//!       Expr: key, <answer>, Pass, x, Break, y, Continue, z, Ellipsis
//!       Expr: key, <answer>, Pass, x, Break, y, Continue, z, Ellipsis
//!       ...
//! ```
//!
//! The binding is random per program and only recoverable from which
//! value follows the key in the sequence. All candidates share a parent and
//! the canonical list resets their last-occurrence distances, so neither
//! tree structure nor distances reveal it. Everything else is determined by
//! the root kind and the statement layout. Program length is tuned to fill
//! exactly one segment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::{Error, Result, SEGMENT_LEN};

/// Surface variants; the root type selects one.
struct Style {
    root: &'static str,
    statement: &'static str,
    key_type: &'static str,
    value_type: &'static str,
}

const STYLES: [Style; 4] = [
    Style { root: "Module", statement: "Expr", key_type: "Str", value_type: "NameLoad" },
    Style { root: "Interactive", statement: "Assign", key_type: "Str", value_type: "NameStore" },
    Style { root: "Expression", statement: "Return", key_type: "Num", value_type: "NameLoad" },
    Style { root: "Suite", statement: "Print", key_type: "Num", value_type: "NameStore" },
];

const MARKERS: [&str; 4] = ["Pass", "Break", "Continue", "Ellipsis"];
pub const KEY: &str = "key";
pub const CANDIDATES: [&str; 3] = ["x", "y", "z"];
const HEADER_LEN: usize = 5;
const STATEMENT_LEN: usize = 2 + 2 * CANDIDATES.len() + 2;

/// Values every program uses besides its function name.
pub const FIXED_VALUES: usize = 1 + CANDIDATES.len();

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyConfig {
    pub programs: usize,
    /// Target value-vocabulary size including EMPTY and UNK.
    pub value_vocab: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { programs: 200, value_vocab: 200, seed: 0 }
    }
}

impl ToyConfig {
    /// Distinct function names needed to fill the value vocabulary.
    pub fn name_pool(&self) -> usize {
        self.value_vocab.saturating_sub(2 + FIXED_VALUES)
    }
}

/// One program as a line of the benchmark format, truncated to
/// `SEGMENT_LEN` nodes.
pub fn toy_program(name: &str, style: usize, answer: usize) -> String {
    let s = &STYLES[style % STYLES.len()];
    let answer = CANDIDATES[answer % CANDIDATES.len()];
    let mut nodes: Vec<Value> = vec![
        json!({"type": s.root, "children": [1]}),
        json!({"type": "FunctionDef", "children": [2, 3, 4]}),
        json!({"type": "identifier", "value": name}),
        json!({"type": "arguments"}),
        Value::Null,
    ];
    debug_assert_eq!(nodes.len(), HEADER_LEN);
    let mut statements = Vec::new();
    while nodes.len() < SEGMENT_LEN {
        let at = nodes.len();
        statements.push(at);
        let mut leaves = Vec::with_capacity(STATEMENT_LEN - 1);
        leaves.extend([(s.key_type, Some(KEY)), (s.value_type, Some(answer)), (MARKERS[0], None)]);
        for (i, c) in CANDIDATES.iter().enumerate() {
            leaves.push((s.value_type, Some(*c)));
            leaves.push((MARKERS[i + 1], None));
        }
        let keep = leaves.len().min(SEGMENT_LEN - at - 1);
        let children: Vec<usize> = (at + 1..=at + keep).collect();
        nodes.push(json!({"type": s.statement, "children": children}));
        for (t, v) in leaves.into_iter().take(keep) {
            nodes.push(match v {
                Some(v) => json!({"type": t, "value": v}),
                None => json!({"type": t}),
            });
        }
    }
    nodes[4] = json!({"type": "body", "children": statements});
    Value::Array(nodes).to_string()
}

/// Training programs. Names cycle through a shuffled pool so every name
/// occurs; bindings are drawn independently of names.
pub fn toy_corpus(config: &ToyConfig) -> Result<Vec<String>> {
    let pool = config.name_pool();
    if pool == 0 {
        return Err(Error::Config(format!(
            "value vocabulary {} leaves no room for function names",
            config.value_vocab
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut names: Vec<usize> = (0..pool).collect();
    let mut out = Vec::with_capacity(config.programs);
    while out.len() < config.programs {
        names.shuffle(&mut rng);
        for &n in names.iter().take(config.programs - out.len()) {
            let style = rng.random_range(0..STYLES.len());
            let answer = rng.random_range(0..CANDIDATES.len());
            out.push(toy_program(&format!("f{n}"), style, answer));
        }
    }
    Ok(out)
}

/// Programs with unseen names and random bindings.
pub fn toy_held_out(config: &ToyConfig, programs: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..programs)
        .map(|i| {
            let style = rng.random_range(0..STYLES.len());
            let answer = rng.random_range(0..CANDIDATES.len());
            toy_program(&format!("g{i}"), style, answer)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{flatten, load_ast};
    use crate::exec::Execution;
    use crate::segment::preprocess;

    #[test]
    fn programs_fill_one_segment() {
        for style in 0..4 {
            let ast = load_ast(&toy_program("f1", style, 2)).unwrap();
            let flat = flatten(&ast);
            assert_eq!(flat.len(), SEGMENT_LEN);
            assert_eq!(flat[2].value, "f1");
            assert_eq!(flat[HEADER_LEN + 1].value, KEY);
            assert_eq!(flat[HEADER_LEN + 2].value, "z");
            assert_eq!(flat[HEADER_LEN + 3].value, "EMPTY");
            assert_eq!(flat[HEADER_LEN + STATEMENT_LEN + 2].value, "z");
        }
    }

    #[test]
    fn default_corpus_has_the_requested_vocabularies() {
        let config = ToyConfig::default();
        let lines = toy_corpus(&config).unwrap();
        assert_eq!(lines.len(), 200);
        let text = lines.join("\n");
        let (data, stats) =
            preprocess(text.as_bytes(), "toy", 198, None, Execution::Sequential).unwrap();
        assert_eq!(data.segments.len(), 200);
        assert_eq!(stats.value_vocab_size, 200);
        assert_eq!(stats.type_vocab_size, 20);
        assert_eq!(stats.unk_rate, 0.0);
    }

    #[test]
    fn corpus_is_reproducible() {
        let c = ToyConfig { programs: 30, ..ToyConfig::default() };
        assert_eq!(toy_corpus(&c).unwrap(), toy_corpus(&c).unwrap());
        assert_eq!(toy_held_out(&c, 5), toy_held_out(&c, 5));
        let other = ToyConfig { seed: 1, ..c.clone() };
        assert_ne!(toy_corpus(&c).unwrap(), toy_corpus(&other).unwrap());
    }
}
