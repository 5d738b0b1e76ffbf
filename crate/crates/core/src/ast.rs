//! Pre-parsed AST ingestion and pre-order flattening.
//!
//! Input is the benchmark format: one JSON array of node records per line,
//! where each record carries a `type`, an optional `value` and an optional
//! list of `children` indices into the same array.

use std::io::BufRead;

use serde_json::Value;

use crate::{Error, Result};

/// Value emitted for non-leaf nodes and for leaves without a value.
pub const EMPTY: &str = "EMPTY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub type_name: String,
    pub value: Option<String>,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
    pub index: usize,
}

impl AstNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A parsed program tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ast {
    nodes: Vec<AstNode>,
}

/// One element of a flattened AST.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatEntry {
    pub type_name: String,
    pub value: String,
    /// Position of the parent in the flattened sequence.
    pub parent: Option<usize>,
}

impl Ast {
    pub fn nodes(&self) -> &[AstNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Builds an AST from already-validated records, checking the same
    /// structural rules as [`load_ast`].
    pub fn from_records(records: Vec<(String, Option<String>, Vec<usize>)>) -> Result<Self> {
        build(records, 1)
    }
}

/// Parses one line of the benchmark format.
pub fn load_ast(json_line: &str) -> Result<Ast> {
    load_ast_at(json_line, 1)
}

fn load_ast_at(json_line: &str, line: usize) -> Result<Ast> {
    let parsed: Value = serde_json::from_str(json_line).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let Value::Array(items) = parsed else {
        return Err(Error::Parse {
            line,
            message: "expected a JSON array of node records".into(),
        });
    };

    let mut records = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        let obj = match item {
            Value::Object(obj) => obj,
            // py150 terminates every array with a bare `0`.
            Value::Number(n) if n.as_u64() == Some(0) => continue,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("record {i} is not an object: {other}"),
                })
            }
        };
        let type_name = match obj.get("type") {
            Some(Value::String(s)) => s.clone(),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("record {i} has no string `type`"),
                })
            }
        };
        let value = match obj.get("value") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => Some(other.to_string()),
        };
        let children = match obj.get("children") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(cs)) => cs
                .iter()
                .map(|c| {
                    c.as_u64().map(|c| c as usize).ok_or_else(|| Error::Parse {
                        line,
                        message: format!("record {i} has a non-integer child index {c}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            Some(other) => {
                return Err(Error::Parse {
                    line,
                    message: format!("record {i} has malformed children {other}"),
                })
            }
        };
        records.push((type_name, value, children));
    }
    build(records, line)
}

fn build(records: Vec<(String, Option<String>, Vec<usize>)>, line: usize) -> Result<Ast> {
    if records.is_empty() {
        return Err(Error::EmptyAst);
    }
    let n = records.len();
    let structure = |message: String| Error::Structure { line, message };

    let mut parent = vec![None; n];
    for (i, (_, _, children)) in records.iter().enumerate() {
        for &c in children {
            if c >= n {
                return Err(structure(format!(
                    "node {i} references child {c} but the program has {n} nodes"
                )));
            }
            if c <= i {
                return Err(structure(format!(
                    "node {i} references child {c}; children must follow their parent (cycle)"
                )));
            }
            if let Some(p) = parent[c] {
                return Err(structure(format!("node {c} has two parents ({p} and {i})")));
            }
            parent[c] = Some(i);
        }
    }
    if let Some(orphan) = (1..n).find(|&i| parent[i].is_none()) {
        return Err(structure(format!("node {orphan} is not reachable from the root")));
    }

    let nodes = records
        .into_iter()
        .enumerate()
        .map(|(index, (type_name, value, children))| AstNode {
            type_name,
            value,
            children,
            parent: parent[index],
            index,
        })
        .collect();
    Ok(Ast { nodes })
}

/// Flattens the tree in pre-order depth-first order, visiting children in
/// stored order. Non-leaf nodes carry [`EMPTY`] as their value, as do leaves
/// without one.
pub fn flatten(ast: &Ast) -> Vec<FlatEntry> {
    let mut out = Vec::with_capacity(ast.len());
    // (node index, parent position in the output)
    let mut stack = vec![(0usize, None::<usize>)];
    while let Some((idx, parent)) = stack.pop() {
        let node = &ast.nodes[idx];
        let pos = out.len();
        let value = if node.is_leaf() {
            node.value.clone().unwrap_or_else(|| EMPTY.to_string())
        } else {
            EMPTY.to_string()
        };
        out.push(FlatEntry {
            type_name: node.type_name.clone(),
            value,
            parent,
        });
        for &c in node.children.iter().rev() {
            stack.push((c, Some(pos)));
        }
    }
    out
}

/// Reads a corpus with one program per line, skipping blank lines. Errors
/// carry the 1-based line number.
pub fn read_corpus<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, Ast)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line_no = i + 1;
            match line {
                Err(e) => Some(Err(Error::Io(e))),
                Ok(text) if text.trim().is_empty() => None,
                Ok(text) => Some(load_ast_at(&text, line_no).map(|ast| (line_no, ast))),
            }
        })
}
