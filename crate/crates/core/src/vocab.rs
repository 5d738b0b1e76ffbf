//! Value and type vocabularies.
//!
//! Values keep the `K` most frequent training values plus two reserved ids:
//! [`EMPTY_ID`] for non-leaf nodes and [`UNK_ID`] for everything outside the
//! budget. Types are closed-world: every training type gets an id and an
//! unseen type is an error.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ast::{FlatEntry, EMPTY};
use crate::{Error, Result};

pub const UNK: &str = "UNK";
pub const EMPTY_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    k: usize,
    values: Vec<String>,
    value_ids: HashMap<String, usize>,
    types: Vec<String>,
    type_ids: HashMap<String, usize>,
}

/// On-disk form: arrays of strings in id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabFile {
    pub k: usize,
    pub values: Vec<String>,
    pub types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabHashes {
    pub values: String,
    pub types: String,
}

impl Vocabulary {
    pub fn from_parts(k: usize, values: Vec<String>, types: Vec<String>) -> Result<Self> {
        if values.first().map(String::as_str) != Some(EMPTY)
            || values.get(1).map(String::as_str) != Some(UNK)
        {
            return Err(Error::Dataset(format!(
                "value vocabulary must start with {EMPTY} and {UNK}"
            )));
        }
        let value_ids = index_of(&values, "value")?;
        let type_ids = index_of(&types, "type")?;
        Ok(Self {
            k,
            values,
            value_ids,
            types,
            type_ids,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn value_count(&self) -> usize {
        self.values.len()
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    /// Out-of-vocabulary values map to [`UNK_ID`].
    pub fn encode_value(&self, value: &str) -> usize {
        self.value_ids.get(value).copied().unwrap_or(UNK_ID)
    }

    pub fn contains_value(&self, value: &str) -> bool {
        self.value_ids.contains_key(value)
    }

    pub fn encode_type(&self, type_name: &str) -> Result<usize> {
        self.type_ids
            .get(type_name)
            .copied()
            .ok_or_else(|| Error::UnknownType(type_name.to_string()))
    }

    pub fn decode_value(&self, id: usize) -> Option<&str> {
        self.values.get(id).map(String::as_str)
    }

    pub fn decode_type(&self, id: usize) -> Option<&str> {
        self.types.get(id).map(String::as_str)
    }

    pub fn hashes(&self) -> VocabHashes {
        VocabHashes {
            values: hash_strings(&self.values),
            types: hash_strings(&self.types),
        }
    }

    pub fn to_file(&self) -> VocabFile {
        VocabFile {
            k: self.k,
            values: self.values.clone(),
            types: self.types.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_file())?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: VocabFile = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_parts(file.k, file.values, file.types)
    }
}

fn index_of(items: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(items.len());
    for (i, s) in items.iter().enumerate() {
        if map.insert(s.clone(), i).is_some() {
            return Err(Error::Dataset(format!("duplicate {what} `{s}` in vocabulary")));
        }
    }
    Ok(map)
}

fn hash_strings(items: &[String]) -> String {
    let mut hasher = Sha256::new();
    for s in items {
        hasher.update((s.len() as u64).to_le_bytes());
        hasher.update(s.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Counts values and types over the training split and freezes the top `k`
/// values. Frequency ties go to the value seen first.
pub fn build_vocab<'a, I>(training_corpus: I, k: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [FlatEntry]>,
{
    // value -> (count, first appearance)
    let mut counts: HashMap<&'a str, (u64, usize)> = HashMap::new();
    let mut types: Vec<String> = Vec::new();
    let mut seen_types: HashMap<&'a str, ()> = HashMap::new();
    let mut seen = 0usize;

    for file in training_corpus {
        for entry in file {
            if seen_types.insert(&entry.type_name, ()).is_none() {
                types.push(entry.type_name.clone());
            }
            seen += 1;
            if entry.value == EMPTY || entry.value == UNK {
                continue;
            }
            let next = counts.len();
            counts.entry(&entry.value).or_insert((0, next)).0 += 1;
        }
    }
    if seen == 0 {
        return Err(Error::EmptyCorpus);
    }

    let mut ranked: Vec<(&str, u64, usize)> =
        counts.into_iter().map(|(v, (c, first))| (v, c, first)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

    let mut values = vec![EMPTY.to_string(), UNK.to_string()];
    values.extend(ranked.into_iter().take(k).map(|(v, _, _)| v.to_string()));
    Vocabulary::from_parts(k, values, types)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(values: &[&str]) -> Vec<FlatEntry> {
        values
            .iter()
            .map(|v| FlatEntry {
                type_name: "T".into(),
                value: v.to_string(),
                parent: None,
            })
            .collect()
    }

    #[test]
    fn top_k_with_reserved_ids() {
        let mut corpus = Vec::new();
        corpus.extend(std::iter::repeat_n("a", 5));
        corpus.extend(std::iter::repeat_n("b", 3));
        corpus.push("c");
        let file = entries(&corpus);
        let vocab = build_vocab([file.as_slice()], 2).unwrap();
        assert_eq!(vocab.values(), ["EMPTY", "UNK", "a", "b"]);
        assert_eq!(vocab.encode_value("c"), UNK_ID);
        assert_eq!(vocab.encode_value("a"), 2);
    }

    #[test]
    fn zero_budget_keeps_only_reserved() {
        let file = entries(&["a", "b"]);
        let vocab = build_vocab([file.as_slice()], 0).unwrap();
        assert_eq!(vocab.values(), ["EMPTY", "UNK"]);
    }

    #[test]
    fn ties_break_by_first_appearance() {
        let file = entries(&["z", "y", "y", "z", "x"]);
        let vocab = build_vocab([file.as_slice()], 3).unwrap();
        assert_eq!(vocab.values(), ["EMPTY", "UNK", "z", "y", "x"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let none: Vec<&[FlatEntry]> = Vec::new();
        assert!(matches!(build_vocab(none, 3), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn unknown_type_is_an_error() {
        let file = entries(&["a"]);
        let vocab = build_vocab([file.as_slice()], 3).unwrap();
        assert_eq!(vocab.encode_type("T").unwrap(), 0);
        assert!(matches!(vocab.encode_type("Nope"), Err(Error::UnknownType(_))));
    }

    #[test]
    fn file_round_trip_preserves_hashes() {
        let file = entries(&["a", "b", "a"]);
        let vocab = build_vocab([file.as_slice()], 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        vocab.save(&path).unwrap();
        let back = Vocabulary::load(&path).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.hashes(), vocab.hashes());
    }
}
