//! Training, evaluation and the ablation driver.
//!
//! Every prediction position of every segment becomes one example: the graph
//! of the prefix plus the next node as target. A step draws a shuffled batch
//! of examples, runs forward and backward on an independent tape per example
//! (in parallel when enabled), sums the gradients in batch order, averages,
//! clips and applies Adam. The reduction order is fixed, so a seed fixes the
//! whole run regardless of thread count.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, Adam, Gradients, Storable};
use crate::checkpoint::Checkpoint;
use crate::exec::{self, Execution};
use crate::graph::{segment_graphs, GraphMode, Target};
use crate::model::{GraphInput, Model, ModelConfig, Variant};
use crate::segment::Dataset;
use crate::vocab::UNK_ID;
use crate::{Error, Result};

/// One prediction position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Example {
    pub input: GraphInput,
    pub target: Target,
    pub segment: usize,
    /// 1-based position of the target within its segment.
    pub position: usize,
}

/// Graphs for every target position of every segment, in corpus order.
pub fn prepare_examples(dataset: &Dataset, mode: GraphMode, exec: Execution) -> Result<Vec<Example>> {
    let indexed: Vec<usize> = (0..dataset.segments.len()).collect();
    let per_segment = exec::try_map(exec, &indexed, |&s| {
        let graphs = segment_graphs(&dataset.segments[s], mode)?;
        Ok::<_, Error>(
            graphs
                .iter()
                .enumerate()
                .map(|(i, g)| Example {
                    input: GraphInput::from_graph(g),
                    target: g.target.expect("segment graphs carry targets"),
                    segment: s,
                    position: i + 2,
                })
                .collect::<Vec<_>>(),
        )
    })?;
    Ok(per_segment.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Evaluate every this many epochs (0: only after training).
    pub eval_every: usize,
    /// Stop once training value and type accuracy both reach this.
    pub target_accuracy: Option<f64>,
    /// Count a correct UNK value prediction as correct.
    pub unk_correct: bool,
    pub execution: Execution,
    /// Save `epoch-<n>.ckpt` every this many epochs (0: never).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Where a batch that produced a non-finite value is written.
    pub dump_dir: Option<PathBuf>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            clip_norm: Some(5.0),
            eval_every: 0,
            target_accuracy: None,
            unk_correct: false,
            execution: Execution::default(),
            checkpoint_every: 0,
            checkpoint_dir: None,
            dump_dir: None,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss_value: f64,
    pub loss_type: f64,
    pub loss: f64,
    pub theta: Option<f64>,
    pub tau: Option<f64>,
    pub value_accuracy: Option<f64>,
    pub type_accuracy: Option<f64>,
}

/// Line-delimited metrics emitted during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Metric {
    Step {
        epoch: usize,
        step: u64,
        loss_value: f64,
        loss_type: f64,
        loss: f64,
        grad_norm: f64,
        theta: Option<f64>,
        tau: Option<f64>,
    },
    Epoch(EpochRecord),
}

/// Writes each metric as one JSON line.
pub fn jsonl_sink<W: Write>(mut out: W) -> impl FnMut(&Metric) -> Result<()> {
    move |m| {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

/// Discards metrics.
pub fn null_sink(_: &Metric) -> Result<()> {
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub positions: usize,
    pub value_correct: usize,
    pub type_correct: usize,
    pub value_accuracy: f64,
    pub type_accuracy: f64,
    /// Training trajectory; empty for a standalone evaluation.
    pub history: Vec<EpochRecord>,
}

/// Argmax `(value, type)` for every example.
pub fn predict_all<T: Storable>(
    model: &Model<T>,
    examples: &[Example],
    exec: Execution,
) -> Result<Vec<(usize, usize)>> {
    exec::try_map(exec, examples, |ex| model.predict_ids(&ex.input))
}

/// Scores predictions. A value prediction of UNK is wrong unless
/// `unk_correct` is set.
pub fn score(predictions: &[(usize, usize)], examples: &[Example], unk_correct: bool) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Dataset("nothing to evaluate: no prediction positions".into()));
    }
    let mut value_correct = 0;
    let mut type_correct = 0;
    for (&(v, t), ex) in predictions.iter().zip(examples) {
        if v == ex.target.value_id && (v != UNK_ID || unk_correct) {
            value_correct += 1;
        }
        if t == ex.target.type_id {
            type_correct += 1;
        }
    }
    let n = examples.len();
    Ok(EvalReport {
        positions: n,
        value_correct,
        type_correct,
        value_accuracy: value_correct as f64 / n as f64,
        type_accuracy: type_correct as f64 / n as f64,
        history: Vec::new(),
    })
}

pub fn evaluate_examples<T: Storable>(
    model: &Model<T>,
    examples: &[Example],
    unk_correct: bool,
    exec: Execution,
) -> Result<EvalReport> {
    let predictions = predict_all(model, examples, exec)?;
    score(&predictions, examples, unk_correct)
}

/// Evaluates a checkpoint on a dataset encoded with the same vocabulary.
pub fn evaluate<T: Storable>(
    checkpoint: &Checkpoint<T>,
    dataset: &Dataset,
    unk_correct: bool,
    exec: Execution,
) -> Result<EvalReport> {
    check_vocab(checkpoint, dataset)?;
    let examples = prepare_examples(dataset, checkpoint.model.config().graph_mode, exec)?;
    evaluate_examples(&checkpoint.model, &examples, unk_correct, exec)
}

fn check_vocab<T: Storable>(checkpoint: &Checkpoint<T>, dataset: &Dataset) -> Result<()> {
    let ours = checkpoint.vocab.hashes();
    let theirs = dataset.vocab.hashes();
    if ours.values != theirs.values {
        return Err(Error::VocabMismatch(format!(
            "checkpoint value vocabulary {} differs from dataset {}",
            &ours.values[..12],
            &theirs.values[..12]
        )));
    }
    if ours.types != theirs.types {
        return Err(Error::VocabMismatch(format!(
            "checkpoint type vocabulary {} differs from dataset {}",
            &ours.types[..12],
            &theirs.types[..12]
        )));
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome<T: Storable> {
    pub checkpoint: Checkpoint<T>,
    /// Final evaluation (held-out data if given, else training data) with
    /// the epoch history attached.
    pub report: EvalReport,
    /// Epoch after which the accuracy target was met, if it was.
    pub stopped_early: Option<usize>,
}

#[derive(Serialize)]
struct BatchDump<'a> {
    epoch: usize,
    step: u64,
    error: String,
    examples: Vec<&'a Example>,
}

fn dump_batch(
    run: &TrainRunConfig,
    epoch: usize,
    step: u64,
    batch: &[&Example],
    err: Error,
) -> Error {
    let origin: Vec<String> =
        batch.iter().map(|e| format!("{}:{}", e.segment, e.position)).collect();
    let mut message = format!(
        "epoch {epoch} step {step}: {err}; batch (segment:position) [{}]",
        origin.join(", ")
    );
    if let Some(dir) = &run.dump_dir {
        let path = dir.join(format!("nonfinite-epoch{epoch}-step{step}.json"));
        let dump = BatchDump { epoch, step, error: err.to_string(), examples: batch.to_vec() };
        let written = std::fs::create_dir_all(dir)
            .map_err(Error::from)
            .and_then(|_| Ok(serde_json::to_vec(&dump)?))
            .and_then(|bytes| Ok(std::fs::write(&path, bytes)?));
        match written {
            Ok(()) => message.push_str(&format!("; dumped to {}", path.display())),
            Err(e) => message.push_str(&format!("; dump failed: {e}")),
        }
    }
    Error::NonFinite(message)
}

/// Trains a fresh model on `data`. With `epochs == 0` the returned checkpoint
/// is the initialization and evaluation still runs.
pub fn train<T: Storable>(
    run: &TrainRunConfig,
    model_config: &ModelConfig,
    data: &Dataset,
    eval_data: Option<&Dataset>,
    sink: &mut dyn FnMut(&Metric) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    run.validate()?;
    let exec = run.execution;
    let config = model_config
        .clone()
        .with_vocab(data.vocab.value_count(), data.vocab.type_count());
    let examples = prepare_examples(data, config.graph_mode, exec)?;
    if examples.is_empty() {
        return Err(Error::Dataset("training data has no prediction positions".into()));
    }
    let eval_examples = match eval_data {
        Some(e) => {
            if e.vocab.hashes() != data.vocab.hashes() {
                return Err(Error::VocabMismatch(
                    "evaluation data uses a different vocabulary".into(),
                ));
            }
            Some(prepare_examples(e, config.graph_mode, exec)?)
        }
        None => None,
    };
    let mut model = Model::<T>::new(config, run.seed)?;
    let adam = Adam::with_lr(run.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::new();
    let mut step = 0u64;
    let mut stopped_early = None;
    let mut best: Option<f64> = None;
    let started = Instant::now();

    for epoch in 1..=run.epochs {
        order.shuffle(&mut rng);
        let (mut sum_v, mut sum_t, mut sum_j) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(run.batch_size) {
            step += 1;
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let results = exec::map(exec, &batch, |ex| {
                model.loss_and_gradients(&ex.input, ex.target, 1.0)
            });
            let mut grads = Gradients::new(model.params().len());
            let (mut bv, mut bt, mut bj) = (0.0, 0.0, 0.0);
            for r in results {
                let (loss, g) = r.map_err(|e| dump_batch(run, epoch, step, &batch, e))?;
                bv += loss.value;
                bt += loss.type_;
                bj += loss.joint;
                grads.add(&g);
            }
            let b = batch.len() as f64;
            grads.scale(1.0 / b);
            let grad_norm = match run.clip_norm {
                Some(max) => clip_global_norm(&mut grads, max),
                None => grads.global_norm(),
            };
            adam.step(model.params_mut(), &mut grads)
                .map_err(|e| dump_batch(run, epoch, step, &batch, e))?;
            sum_v += bv;
            sum_t += bt;
            sum_j += bj;
            let (theta, tau) = split(model.task_weights());
            sink(&Metric::Step {
                epoch,
                step,
                loss_value: bv / b,
                loss_type: bt / b,
                loss: bj / b,
                grad_norm,
                theta,
                tau,
            })?;
        }

        let n = examples.len() as f64;
        let due = run.eval_every > 0 && epoch % run.eval_every == 0;
        let train_eval = if due || run.target_accuracy.is_some() {
            Some(evaluate_examples(&model, &examples, run.unk_correct, exec)?)
        } else {
            None
        };
        let held_out = match (&eval_examples, due) {
            (Some(ev), true) => Some(evaluate_examples(&model, ev, run.unk_correct, exec)?),
            _ => None,
        };
        let shown = held_out.as_ref().or(train_eval.as_ref());
        let (theta, tau) = split(model.task_weights());
        let record = EpochRecord {
            epoch,
            step,
            loss_value: sum_v / n,
            loss_type: sum_t / n,
            loss: sum_j / n,
            theta,
            tau,
            value_accuracy: shown.map(|r| r.value_accuracy),
            type_accuracy: shown.map(|r| r.type_accuracy),
        };
        tracing::info!(
            epoch,
            loss = record.loss,
            value_accuracy = ?record.value_accuracy,
            elapsed = ?started.elapsed(),
            "epoch done"
        );
        sink(&Metric::Epoch(record.clone()))?;
        history.push(record);

        if let Some(dir) = &run.checkpoint_dir {
            let snapshot = || Checkpoint {
                model: model.clone(),
                vocab: data.vocab.clone(),
                seed: run.seed,
                epoch: epoch as u64,
                step,
            };
            if run.checkpoint_every > 0 && epoch % run.checkpoint_every == 0 {
                snapshot().save(&dir.join(format!("epoch-{epoch}.ckpt")))?;
            }
            if let Some(r) = shown {
                if best.is_none_or(|b| r.value_accuracy > b) {
                    best = Some(r.value_accuracy);
                    snapshot().save(&dir.join("best.ckpt"))?;
                }
            }
        }

        if let (Some(goal), Some(r)) = (run.target_accuracy, &train_eval) {
            if r.value_accuracy >= goal && r.type_accuracy >= goal {
                stopped_early = Some(epoch);
                break;
            }
        }
    }

    let final_examples = eval_examples.as_deref().unwrap_or(&examples);
    let mut report = evaluate_examples(&model, final_examples, run.unk_correct, exec)?;
    report.history = history;
    let epoch = report.history.last().map_or(0, |r| r.epoch as u64);
    Ok(TrainOutcome {
        checkpoint: Checkpoint { model, vocab: data.vocab.clone(), seed: run.seed, epoch, step },
        report,
        stopped_early,
    })
}

fn split(w: Option<(f64, f64)>) -> (Option<f64>, Option<f64>) {
    match w {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub value_accuracy: f64,
    pub type_accuracy: f64,
    pub positions: usize,
    pub final_loss: f64,
    pub seconds: f64,
}

/// Trains every variant with the same data, seed and epoch budget. Early
/// stopping is disabled so every variant gets the full budget.
pub fn run_ablation_suite<T: Storable>(
    base: &ModelConfig,
    variants: &[Variant],
    run: &TrainRunConfig,
    data: &Dataset,
    eval_data: Option<&Dataset>,
    on_row: &mut dyn FnMut(&AblationRow) -> Result<()>,
) -> Result<Vec<AblationRow>> {
    let run = TrainRunConfig { target_accuracy: None, ..run.clone() };
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let started = Instant::now();
        let outcome = train::<T>(&run, &variant.apply(base), data, eval_data, &mut null_sink)?;
        let row = AblationRow {
            variant,
            value_accuracy: outcome.report.value_accuracy,
            type_accuracy: outcome.report.type_accuracy,
            positions: outcome.report.positions,
            final_loss: outcome.report.history.last().map_or(f64::NAN, |r| r.loss),
            seconds: started.elapsed().as_secs_f64(),
        };
        on_row(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,value_accuracy,type_accuracy,positions,final_loss,seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{:.6},{:.1}\n",
            r.variant.label(),
            r.value_accuracy,
            r.type_accuracy,
            r.positions,
            r.final_loss,
            r.seconds
        ));
    }
    out
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut out = String::from("| Variant | Value acc. (%) | Type acc. (%) |\n|---|---:|---:|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {:.2} | {:.2} |\n",
            r.variant.label(),
            100.0 * r.value_accuracy,
            100.0 * r.type_accuracy
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{FlatNode, Segment};
    use crate::vocab::Vocabulary;

    fn vocab() -> Vocabulary {
        Vocabulary::from_parts(
            4,
            ["EMPTY", "UNK", "x", "y"].map(String::from).to_vec(),
            ["Module", "Name", "Call"].map(String::from).to_vec(),
        )
        .unwrap()
    }

    fn node(type_id: usize, value_id: usize, parent_pos: Option<usize>) -> FlatNode {
        FlatNode { type_id, value_id, parent_pos }
    }

    fn dataset() -> Dataset {
        let segments = (0..4)
            .map(|i| Segment {
                nodes: vec![
                    node(0, 0, None),
                    node(2, 0, Some(0)),
                    node(1, 2 + i % 2, Some(1)),
                    node(1, 3 - i % 2, Some(1)),
                ],
                source_file: format!("f{i}"),
                segment_index: 0,
            })
            .collect();
        Dataset { vocab: vocab(), segments }
    }

    fn tiny() -> ModelConfig {
        ModelConfig { d: 8, num_heads: 2, ..ModelConfig::default() }
    }

    fn example(value_id: usize, type_id: usize) -> Example {
        Example {
            input: GraphInput::from_graph(&crate::graph::build_graph(&[node(0, 0, None)]).unwrap()),
            target: Target { value_id, type_id },
            segment: 0,
            position: 2,
        }
    }

    #[test]
    fn examples_cover_every_position() {
        let ex = prepare_examples(&dataset(), GraphMode::Flattened, Execution::Sequential).unwrap();
        assert_eq!(ex.len(), 12);
        assert_eq!(ex[0].position, 2);
        assert_eq!(ex[2].target, Target { value_id: 3, type_id: 1 });
        assert_eq!(ex[2].input.n, 3);
    }

    #[test]
    fn unk_predictions_are_wrong_by_default() {
        let examples = vec![example(UNK_ID, 1), example(2, 1), example(0, 0)];
        let preds = vec![(UNK_ID, 1), (2, 0), (3, 0)];
        let strict = score(&preds, &examples, false).unwrap();
        assert_eq!((strict.value_correct, strict.type_correct), (1, 2));
        let lenient = score(&preds, &examples, true).unwrap();
        assert_eq!(lenient.value_correct, 2);
        assert_eq!(lenient.positions, 3);
    }

    #[test]
    fn always_empty_model_scores_the_empty_fraction() {
        let examples: Vec<Example> =
            (0..10).map(|i| example(if i < 4 { 0 } else { 2 }, 1)).collect();
        let preds = vec![(0, 1); 10];
        let r = score(&preds, &examples, false).unwrap();
        assert_eq!(r.value_accuracy, 0.4);
        assert_eq!(r.type_accuracy, 1.0);
    }

    #[test]
    fn empty_evaluation_is_an_error() {
        assert!(score(&[], &[], false).is_err());
    }

    #[test]
    fn zero_epochs_returns_the_initialization() {
        let run = TrainRunConfig { epochs: 0, seed: 4, ..TrainRunConfig::default() };
        let out = train::<f64>(&run, &tiny(), &dataset(), None, &mut null_sink).unwrap();
        let init = Model::<f64>::new(tiny().with_vocab(4, 3), 4).unwrap();
        assert_eq!(out.checkpoint.model, init);
        assert_eq!(out.report.positions, 12);
        assert!(out.report.history.is_empty());
    }

    #[test]
    fn parallel_and_sequential_runs_agree_bitwise() {
        let mut runs = Vec::new();
        for execution in [Execution::Parallel, Execution::Sequential] {
            let run = TrainRunConfig { epochs: 2, batch_size: 5, execution, ..Default::default() };
            let mut steps = Vec::new();
            let out = train::<f64>(&run, &tiny(), &dataset(), None, &mut |m| {
                steps.push(m.clone());
                Ok(())
            })
            .unwrap();
            runs.push((steps, out.checkpoint.encode_weights()));
        }
        assert_eq!(runs[0], runs[1]);
        assert_eq!(runs[0].0.len(), 2 * 3 + 2);
    }

    #[test]
    fn metrics_are_json_lines() {
        let mut buf = Vec::new();
        let run = TrainRunConfig { epochs: 1, eval_every: 1, ..Default::default() };
        train::<f32>(&run, &tiny(), &dataset(), None, &mut jsonl_sink(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<Metric> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert!(matches!(lines[0], Metric::Step { step: 1, .. }));
        let Metric::Epoch(last) = lines.last().unwrap() else { panic!("{text}") };
        assert!(last.value_accuracy.is_some());
        assert!(last.theta.is_some());
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let run = TrainRunConfig { epochs: 0, ..Default::default() };
        let out = train::<f64>(&run, &tiny(), &dataset(), None, &mut null_sink).unwrap();
        let mut other = dataset();
        other.vocab = Vocabulary::from_parts(
            4,
            ["EMPTY", "UNK", "x", "z"].map(String::from).to_vec(),
            ["Module", "Name", "Call"].map(String::from).to_vec(),
        )
        .unwrap();
        let err = evaluate(&out.checkpoint, &other, false, Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::VocabMismatch(_)), "{err}");
    }

    #[test]
    fn non_finite_loss_aborts_with_dump() {
        let dir = tempfile::tempdir().unwrap();
        let run = TrainRunConfig {
            epochs: 1,
            lr: 1e300,
            clip_norm: None,
            dump_dir: Some(dir.path().to_path_buf()),
            batch_size: 3,
            ..Default::default()
        };
        let err = train::<f64>(&run, &tiny(), &dataset(), None, &mut null_sink).unwrap_err();
        let Error::NonFinite(message) = err else { panic!("{err}") };
        assert!(message.contains("dumped to"), "{message}");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn ablation_table_shapes() {
        let run = TrainRunConfig { epochs: 1, ..Default::default() };
        let rows = run_ablation_suite::<f32>(
            &tiny(),
            &[Variant::Ng, Variant::Gs],
            &run,
            &dataset(),
            None,
            &mut |_| Ok(()),
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        let csv = ablation_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("CCAG-NG,"));
        assert!(ablation_markdown(&rows).contains("| CCAG-GS |"));
    }
}
