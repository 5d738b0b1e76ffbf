//! Vocabulary encoding, 50-node segmentation and the on-disk dataset.
//!
//! A preprocessed dataset directory holds `vocab.json` and
//! `segments.jsonl`. The segment file starts with one header line:
//!
//! ```json
//! {"format":"ccag-segments","version":1,"k":1000,"segment_len":50,
//!  "segments":1234,"value_vocab_hash":"…","type_vocab_hash":"…"}
//! ```
//!
//! followed by one JSON object per segment with parallel `types`, `values`
//! and `parents` arrays (`parents[i]` is a segment-local position or `null`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ast::{self, FlatEntry};
use crate::exec::{self, Execution};
use crate::vocab::{build_vocab, Vocabulary, UNK_ID};
use crate::{Error, Result, SEGMENT_LEN};

pub const FORMAT_NAME: &str = "ccag-segments";
pub const FORMAT_VERSION: u32 = 1;
pub const VOCAB_FILE: &str = "vocab.json";
pub const SEGMENTS_FILE: &str = "segments.jsonl";

/// One vocabulary-encoded element of a flattened AST.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlatNode {
    pub type_id: usize,
    pub value_id: usize,
    /// Earlier position of the parent in the same sequence.
    pub parent_pos: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub nodes: Vec<FlatNode>,
    pub source_file: String,
    pub segment_index: usize,
}

impl Segment {
    /// Number of prediction targets: positions 2..=l.
    pub fn target_count(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }
}

/// Encodes a flattened file; parent positions stay file-global.
pub fn encode(flat: &[FlatEntry], vocab: &Vocabulary) -> Result<Vec<FlatNode>> {
    flat.iter()
        .map(|e| {
            Ok(FlatNode {
                type_id: vocab.encode_type(&e.type_name)?,
                value_id: vocab.encode_value(&e.value),
                parent_pos: e.parent,
            })
        })
        .collect()
}

/// Cuts a file into consecutive windows of [`SEGMENT_LEN`] nodes (the last
/// may be shorter) and rewrites parent positions to be segment-local. A
/// parent outside the window is replaced by the immediate predecessor; the
/// first node of every window has no parent.
pub fn segment_and_resolve(encoded: &[FlatNode], source_file: &str) -> Vec<Segment> {
    encoded
        .chunks(SEGMENT_LEN)
        .enumerate()
        .map(|(segment_index, window)| {
            let start = segment_index * SEGMENT_LEN;
            let nodes = window
                .iter()
                .enumerate()
                .map(|(local, node)| {
                    let parent_pos = if local == 0 {
                        None
                    } else {
                        match node.parent_pos {
                            Some(p) if p >= start => Some(p - start),
                            _ => Some(local - 1),
                        }
                    };
                    FlatNode { parent_pos, ..*node }
                })
                .collect();
            Segment {
                nodes,
                source_file: source_file.to_string(),
                segment_index,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentFileHeader {
    pub format: String,
    pub version: u32,
    pub k: usize,
    pub segment_len: usize,
    pub segments: usize,
    pub value_vocab_hash: String,
    pub type_vocab_hash: String,
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    file: String,
    index: usize,
    types: Vec<usize>,
    values: Vec<usize>,
    parents: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusStats {
    pub files: usize,
    pub nodes: usize,
    pub segments: usize,
    pub value_vocab_size: usize,
    pub type_vocab_size: usize,
    /// Fraction of nodes whose value encodes to UNK.
    pub unk_rate: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub segments: Vec<Segment>,
}

impl Dataset {
    pub fn header(&self) -> SegmentFileHeader {
        let hashes = self.vocab.hashes();
        SegmentFileHeader {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            k: self.vocab.k(),
            segment_len: SEGMENT_LEN,
            segments: self.segments.len(),
            value_vocab_hash: hashes.values,
            type_vocab_hash: hashes.types,
        }
    }

    pub fn target_count(&self) -> usize {
        self.segments.iter().map(Segment::target_count).sum()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        let mut out = BufWriter::new(File::create(dir.join(SEGMENTS_FILE))?);
        serde_json::to_writer(&mut out, &self.header())?;
        out.write_all(b"\n")?;
        for seg in &self.segments {
            let record = SegmentRecord {
                file: seg.source_file.clone(),
                index: seg.segment_index,
                types: seg.nodes.iter().map(|n| n.type_id).collect(),
                values: seg.nodes.iter().map(|n| n.value_id).collect(),
                parents: seg.nodes.iter().map(|n| n.parent_pos).collect(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let reader = BufReader::new(File::open(dir.join(SEGMENTS_FILE))?);
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Dataset("segment file is empty".into()))??;
        let header: SegmentFileHeader = serde_json::from_str(&header_line)?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported segment file {} v{}",
                header.format, header.version
            )));
        }
        let hashes = vocab.hashes();
        if header.value_vocab_hash != hashes.values || header.type_vocab_hash != hashes.types {
            return Err(Error::VocabMismatch(
                "segment file was encoded with a different vocabulary".into(),
            ));
        }

        let mut segments = Vec::with_capacity(header.segments);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SegmentRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Dataset(format!("line {}: {e}", i + 2)))?;
            let n = rec.types.len();
            if n == 0 || n > SEGMENT_LEN || rec.values.len() != n || rec.parents.len() != n {
                return Err(Error::Dataset(format!("line {}: malformed segment", i + 2)));
            }
            let mut nodes = Vec::with_capacity(n);
            for pos in 0..n {
                let (t, v, p) = (rec.types[pos], rec.values[pos], rec.parents[pos]);
                if t >= vocab.type_count() || v >= vocab.value_count() {
                    return Err(Error::Dataset(format!("line {}: id out of range", i + 2)));
                }
                if p.is_some_and(|p| p >= pos) {
                    return Err(Error::Dataset(format!(
                        "line {}: parent must precede its child",
                        i + 2
                    )));
                }
                nodes.push(FlatNode {
                    type_id: t,
                    value_id: v,
                    parent_pos: p,
                });
            }
            segments.push(Segment {
                nodes,
                source_file: rec.file,
                segment_index: rec.index,
            });
        }
        if segments.len() != header.segments {
            return Err(Error::Dataset(format!(
                "header announces {} segments, found {}",
                header.segments,
                segments.len()
            )));
        }
        Ok(Self { vocab, segments })
    }
}

/// Runs the whole pipeline over a corpus: parse, flatten, build (or reuse)
/// the vocabulary, encode and segment. Files are processed independently.
pub fn preprocess<R: BufRead>(
    reader: R,
    source_name: &str,
    k: usize,
    existing_vocab: Option<Vocabulary>,
    exec: Execution,
) -> Result<(Dataset, CorpusStats)> {
    let lines: Vec<(usize, String)> = reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .collect::<std::io::Result<_>>()?;
    let lines: Vec<(usize, String)> =
        lines.into_iter().filter(|(_, l)| !l.trim().is_empty()).collect();

    let flattened: Vec<(usize, Vec<FlatEntry>)> = exec::try_map(exec, &lines, |(no, text)| {
        let ast = ast::load_ast(text).map_err(|e| relabel(e, *no))?;
        Ok::<_, Error>((*no, ast::flatten(&ast)))
    })?;
    if flattened.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let vocab = match existing_vocab {
        Some(v) => v,
        None => build_vocab(flattened.iter().map(|(_, f)| f.as_slice()), k)?,
    };

    let per_file: Vec<(Vec<Segment>, usize, usize)> =
        exec::try_map(exec, &flattened, |(no, flat)| {
            let encoded = encode(flat, &vocab)?;
            let unk = encoded.iter().filter(|n| n.value_id == UNK_ID).count();
            let name = format!("{source_name}:{no}");
            Ok::<_, Error>((segment_and_resolve(&encoded, &name), encoded.len(), unk))
        })?;

    let mut stats = CorpusStats {
        files: flattened.len(),
        value_vocab_size: vocab.value_count(),
        type_vocab_size: vocab.type_count(),
        ..CorpusStats::default()
    };
    let mut unk = 0usize;
    let mut segments = Vec::new();
    for (segs, nodes, file_unk) in per_file {
        stats.nodes += nodes;
        unk += file_unk;
        segments.extend(segs);
    }
    stats.segments = segments.len();
    stats.unk_rate = unk as f64 / stats.nodes.max(1) as f64;
    Ok((Dataset { vocab, segments }, stats))
}

fn relabel(err: Error, line: usize) -> Error {
    match err {
        Error::Parse { message, .. } => Error::Parse { line, message },
        Error::Structure { message, .. } => Error::Structure { line, message },
        Error::EmptyAst => Error::Structure {
            line,
            message: "program has no nodes".into(),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(len: usize, parent: impl Fn(usize) -> Option<usize>) -> Vec<FlatNode> {
        (0..len)
            .map(|i| FlatNode {
                type_id: i % 7,
                value_id: i % 5,
                parent_pos: parent(i),
            })
            .collect()
    }

    #[test]
    fn lengths_of_a_120_node_file() {
        let file = chain(120, |i| i.checked_sub(1));
        let lens: Vec<usize> = segment_and_resolve(&file, "f")
            .iter()
            .map(|s| s.nodes.len())
            .collect();
        assert_eq!(lens, vec![50, 50, 20]);
    }

    #[test]
    fn out_of_window_parent_becomes_predecessor() {
        let file = chain(120, |i| match i {
            0 => None,
            73 => Some(10),
            55 => Some(52),
            _ => Some(i - 1),
        });
        let segs = segment_and_resolve(&file, "f");
        assert_eq!(segs[1].nodes[23].parent_pos, Some(22));
        assert_eq!(segs[1].nodes[5].parent_pos, Some(2));
        for seg in &segs {
            assert_eq!(seg.nodes[0].parent_pos, None);
        }
    }

    #[test]
    fn preprocess_reports_line_of_corrupt_record() {
        let mut corpus = String::new();
        for _ in 0..16 {
            corpus.push_str(r#"[{"type":"Module","children":[1]},{"type":"Name","value":"x"}]"#);
            corpus.push('\n');
        }
        corpus.push_str("[{\"type\": oops}]\n");
        let err = preprocess(corpus.as_bytes(), "c", 10, None, Execution::Sequential)
            .unwrap_err();
        assert!(err.to_string().starts_with("line 17:"), "{err}");
    }

    #[test]
    fn dataset_round_trip() {
        let corpus = concat!(
            r#"[{"type":"Module","children":[1,2]},{"type":"Name","value":"x"},{"type":"Name","value":"y"}]"#,
            "\n",
            r#"[{"type":"Module","children":[1]},{"type":"Name","value":"x"}]"#,
            "\n"
        );
        let (data, stats) =
            preprocess(corpus.as_bytes(), "c", 1, None, Execution::Sequential).unwrap();
        assert_eq!(stats.files, 2);
        assert_eq!(stats.nodes, 5);
        assert_eq!(stats.value_vocab_size, 3);
        assert!((stats.unk_rate - 0.2).abs() < 1e-12);

        let dir = tempfile::tempdir().unwrap();
        data.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.segments, data.segments);
        assert_eq!(back.vocab, data.vocab);
    }

    #[test]
    fn mismatched_vocab_is_refused() {
        let corpus = r#"[{"type":"Module","children":[1]},{"type":"Name","value":"x"}]"#;
        let (data, _) = preprocess(corpus.as_bytes(), "c", 5, None, Execution::Sequential).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.save(dir.path()).unwrap();
        let other = Vocabulary::from_parts(
            5,
            vec!["EMPTY".into(), "UNK".into(), "zzz".into()],
            vec!["Module".into(), "Name".into()],
        )
        .unwrap();
        other.save(&dir.path().join(VOCAB_FILE)).unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(Error::VocabMismatch(_))));
    }
}
