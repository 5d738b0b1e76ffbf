//! Model checkpoints.
//!
//! A checkpoint is a binary weights file plus a JSON sidecar next to it
//! (`<path>.json`). The binary holds every parameter with its Adam state:
//!
//! ```text
//! "CCAGCKPT" | u32 version | u8 dtype | u64 seed | u64 epoch | u64 step | u32 count
//! count × ( u32 name_len | name | u32 rows | u32 cols | u64 step_count
//!           | values | adam_m | adam_v )
//! ```
//!
//! All integers and floats are little-endian. The sidecar records the model
//! config, the full vocabulary with its hashes and the SHA-256 of the binary;
//! loading refuses a binary whose digest does not match.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{DType, ParamStore, Parameter, Real, Storable, Tensor};
use crate::model::{Model, ModelConfig};
use crate::vocab::{VocabFile, VocabHashes, Vocabulary};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CCAGCKPT";
pub const VERSION: u32 = 1;
pub const SIDECAR_FORMAT: &str = "ccag-checkpoint";

/// Contents of the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub dtype: DType,
    pub seed: u64,
    pub epoch: u64,
    pub step: u64,
    pub config: ModelConfig,
    pub config_hash: String,
    pub weights_sha256: String,
    pub vocab_hashes: VocabHashes,
    pub vocab: VocabFile,
}

impl Sidecar {
    /// Short identifier derived from the weights digest.
    pub fn checkpoint_id(&self) -> String {
        self.weights_sha256.chars().take(16).collect()
    }
}

/// A trained model together with the vocabulary it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub model: Model<T>,
    pub vocab: Vocabulary,
    pub seed: u64,
    pub epoch: u64,
    pub step: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl<T: Storable> Checkpoint<T> {
    pub fn encode_weights(&self) -> Vec<u8> {
        let params = self.model.params();
        let mut out = Vec::with_capacity(64 + params.element_count() * 3 * T::DTYPE.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(dtype_tag(T::DTYPE));
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.tensor.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(p.tensor.cols() as u32).to_le_bytes());
            out.extend_from_slice(&p.step_count.to_le_bytes());
            for buf in [p.tensor.data(), &p.adam_m, &p.adam_v] {
                for &x in buf {
                    x.write_le(&mut out);
                }
            }
        }
        out
    }

    pub fn sidecar(&self, weights: &[u8]) -> Sidecar {
        let config = self.model.config().clone();
        Sidecar {
            format: SIDECAR_FORMAT.into(),
            version: VERSION,
            dtype: T::DTYPE,
            seed: self.seed,
            epoch: self.epoch,
            step: self.step,
            config_hash: config.config_hash(),
            config,
            weights_sha256: sha256_hex(weights),
            vocab_hashes: self.vocab.hashes(),
            vocab: self.vocab.to_file(),
        }
    }

    /// Writes the binary and its sidecar; returns the sidecar.
    pub fn save(&self, path: &Path) -> Result<Sidecar> {
        let weights = self.encode_weights();
        let sidecar = self.sidecar(&weights);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, &weights)?;
        let mut text = serde_json::to_string_pretty(&sidecar)?;
        text.push('\n');
        std::fs::write(sidecar_path(path), text)?;
        Ok(sidecar)
    }

    /// Loads a checkpoint stored in any dtype, converting to `T`.
    pub fn load(path: &Path) -> Result<(Self, Sidecar)> {
        let sidecar: Sidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)
            .map_err(|e| Error::Checkpoint(format!("sidecar: {e}")))?;
        let weights = std::fs::read(path)?;
        let checkpoint = Self::from_parts(&sidecar, &weights)?;
        Ok((checkpoint, sidecar))
    }

    pub fn from_parts(sidecar: &Sidecar, weights: &[u8]) -> Result<Self> {
        if sidecar.format != SIDECAR_FORMAT || sidecar.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported sidecar {} v{}",
                sidecar.format, sidecar.version
            )));
        }
        let digest = sha256_hex(weights);
        if digest != sidecar.weights_sha256 {
            return Err(Error::Checkpoint(format!(
                "weights digest {digest} does not match sidecar {}",
                sidecar.weights_sha256
            )));
        }
        if sidecar.config.config_hash() != sidecar.config_hash {
            return Err(Error::Checkpoint("config hash does not match sidecar config".into()));
        }
        let v = &sidecar.vocab;
        let vocab = Vocabulary::from_parts(v.k, v.values.clone(), v.types.clone())?;
        if vocab.hashes() != sidecar.vocab_hashes {
            return Err(Error::Checkpoint("vocabulary hashes do not match sidecar".into()));
        }
        let decoded = decode_weights(weights)?;
        if decoded.dtype != sidecar.dtype
            || decoded.seed != sidecar.seed
            || decoded.epoch != sidecar.epoch
            || decoded.step != sidecar.step
        {
            return Err(Error::Checkpoint("binary header disagrees with sidecar".into()));
        }
        let params = match decoded.dtype {
            DType::F32 => decoded.params::<f32>()?.cast::<T>(),
            DType::F64 => decoded.params::<f64>()?.cast::<T>(),
        };
        let model = Model::from_params(sidecar.config.clone(), params)?;
        Ok(Self {
            model,
            vocab,
            seed: decoded.seed,
            epoch: decoded.epoch,
            step: decoded.step,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn dtype_tag(d: DType) -> u8 {
    match d {
        DType::F32 => 4,
        DType::F64 => 8,
    }
}

struct RawParam<'a> {
    name: String,
    rows: usize,
    cols: usize,
    step_count: u64,
    body: &'a [u8],
}

struct Decoded<'a> {
    dtype: DType,
    seed: u64,
    epoch: u64,
    step: u64,
    params: Vec<RawParam<'a>>,
}

impl Decoded<'_> {
    fn params<U: Storable>(&self) -> Result<ParamStore<U>> {
        let size = U::DTYPE.size();
        let mut store = ParamStore::new();
        for raw in &self.params {
            let n = raw.rows * raw.cols;
            let read = |k: usize| -> Vec<U> {
                raw.body[k * n * size..(k + 1) * n * size]
                    .chunks_exact(size)
                    .map(U::read_le)
                    .collect()
            };
            store.insert(Parameter {
                name: raw.name.clone(),
                tensor: Tensor::new(raw.rows, raw.cols, read(0))?,
                adam_m: read(1),
                adam_v: read(2),
                step_count: raw.step_count,
            })?;
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated weights file at byte {}", self.at))
        })?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_weights(bytes: &[u8]) -> Result<Decoded<'_>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported weights version {version}")));
    }
    let dtype = match r.take(1)?[0] {
        4 => DType::F32,
        8 => DType::F64,
        t => return Err(Error::Checkpoint(format!("unknown dtype tag {t}"))),
    };
    let seed = r.u64()?;
    let epoch = r.u64()?;
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let step_count = r.u64()?;
        let body = r.take(3 * rows * cols * dtype.size())?;
        params.push(RawParam { name, rows, cols, step_count, body });
    }
    if r.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(Decoded { dtype, seed, epoch, step, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_parts(
            3,
            ["EMPTY", "UNK", "a", "b", "c"].map(String::from).to_vec(),
            ["Module", "Name", "Assign", "Num", "If"].map(String::from).to_vec(),
        )
        .unwrap()
    }

    fn checkpoint<T: Storable>() -> Checkpoint<T> {
        let config = ModelConfig { d: 8, num_heads: 2, ..ModelConfig::default() }.with_vocab(5, 5);
        let mut model = Model::<T>::new(config, 3).unwrap();
        let p = model.params_mut().get_mut(crate::autodiff::ParamId(0));
        p.adam_m[0] = T::of(0.25);
        p.adam_v[1] = T::of(0.5);
        p.step_count = 7;
        Checkpoint { model, vocab: vocab(), seed: 3, epoch: 2, step: 9 }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = checkpoint::<f64>();
        let saved = ckpt.save(&path).unwrap();
        let (loaded, sidecar) = Checkpoint::<f64>::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        assert_eq!(sidecar, saved);
        assert_eq!(loaded.encode_weights(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn loads_across_dtypes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = checkpoint::<f32>();
        ckpt.save(&path).unwrap();
        let (wide, sidecar) = Checkpoint::<f64>::load(&path).unwrap();
        assert_eq!(sidecar.dtype, DType::F32);
        assert_eq!(wide.model.params().cast::<f32>(), *ckpt.model.params());
    }

    #[test]
    fn tampered_weights_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        checkpoint::<f64>().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        let err = Checkpoint::<f64>::load(&path).unwrap_err();
        assert!(err.to_string().contains("digest"), "{err}");
    }

    #[test]
    fn truncated_weights_are_refused() {
        let ckpt = checkpoint::<f64>();
        let bytes = ckpt.encode_weights();
        let mut sidecar = ckpt.sidecar(&bytes);
        let cut = &bytes[..bytes.len() / 2];
        sidecar.weights_sha256 = sha256_hex(cut);
        let err = Checkpoint::<f64>::from_parts(&sidecar, cut).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn vocabulary_tampering_is_refused() {
        let ckpt = checkpoint::<f64>();
        let bytes = ckpt.encode_weights();
        let mut sidecar = ckpt.sidecar(&bytes);
        sidecar.vocab.values[2] = "z".into();
        assert!(Checkpoint::<f64>::from_parts(&sidecar, &bytes).is_err());
    }

    #[test]
    fn sidecar_sits_next_to_weights() {
        assert_eq!(sidecar_path(Path::new("out/m.ckpt")), PathBuf::from("out/m.ckpt.json"));
    }
}
