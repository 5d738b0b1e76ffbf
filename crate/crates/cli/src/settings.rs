//! Training settings: defaults, then the config file, then flags.

use std::path::Path;

use anyhow::{bail, Context};
use ccag::autodiff::DType;
use ccag::exec::Execution;
use ccag::model::ModelConfig;
use ccag::train::TrainRunConfig;
use serde::Deserialize;

use crate::RunArgs;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    pub dtype: String,
    pub model: ModelConfig,
    pub train: TrainRunConfig,
}

impl Default for ExperimentFile {
    fn default() -> Self {
        Self { dtype: "f32".into(), model: ModelConfig::default(), train: TrainRunConfig::default() }
    }
}

impl ExperimentFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub dtype: DType,
    pub model: ModelConfig,
    pub train: TrainRunConfig,
}

pub fn parse_dtype(s: &str) -> anyhow::Result<DType> {
    match s.to_ascii_lowercase().as_str() {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => bail!("unknown dtype `{other}` (expected f32 or f64)"),
    }
}

pub fn resolve(args: &RunArgs) -> anyhow::Result<Settings> {
    let file = match &args.config {
        Some(p) => ExperimentFile::load(p)?,
        None => ExperimentFile::default(),
    };
    let mut model = file.model;
    let mut train = file.train;
    let dtype = parse_dtype(args.dtype.as_deref().unwrap_or(&file.dtype))?;
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(args.epochs => train.epochs);
    set!(args.batch_size => train.batch_size);
    set!(args.lr => train.lr);
    set!(args.seed => train.seed);
    set!(args.eval_every => train.eval_every);
    set!(args.checkpoint_every => train.checkpoint_every);
    set!(args.d => model.d);
    set!(args.blocks => model.num_blocks);
    set!(args.heads => model.num_heads);
    if args.target_accuracy.is_some() {
        train.target_accuracy = args.target_accuracy;
    }
    if args.checkpoint_dir.is_some() {
        train.checkpoint_dir = args.checkpoint_dir.clone();
    }
    if args.dump_dir.is_some() {
        train.dump_dir = args.dump_dir.clone();
    }
    if args.clip_norm.is_some() {
        train.clip_norm = args.clip_norm;
    }
    if args.no_clip {
        train.clip_norm = None;
    }
    if args.unk_correct {
        train.unk_correct = true;
    }
    if args.sequential {
        train.execution = Execution::Sequential;
    }
    train.validate()?;
    Ok(Settings { dtype, model, train })
}
