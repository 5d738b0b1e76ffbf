use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use ccag::autodiff::{DType, Storable};
use ccag::checkpoint::{sidecar_path, Checkpoint, Sidecar};
use ccag::complete::{parse_prefix, Completer, CompletionRequest, CompletionResponse};
use ccag::exec::Execution;
use ccag::model::Variant;
use ccag::segment::{preprocess, Dataset};
use ccag::synth::{toy_corpus, toy_held_out, ToyConfig};
use ccag::train::{
    ablation_csv, ablation_markdown, evaluate, jsonl_sink, run_ablation_suite, train, Metric,
};
use ccag::vocab::Vocabulary;
use ccag_service::{router, LoadOutcome, ModelSlot, ServiceConfig};

use crate::settings::{resolve, Settings};
use crate::{Command, RunArgs};

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Preprocess { input, out, k, vocab, sequential } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let vocab = vocab.map(|p| Vocabulary::load(&p)).transpose()?;
            let source = input.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            let (data, stats) = preprocess(BufReader::new(file), &source, k, vocab, execution(sequential))?;
            data.save(&out)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Train { run, out, variant, metrics } => {
            let settings = resolve(&run)?;
            let variant: Variant = variant.parse()?;
            match settings.dtype {
                DType::F32 => cmd_train::<f32>(&run, &settings, variant, &out, metrics.as_deref())?,
                DType::F64 => cmd_train::<f64>(&run, &settings, variant, &out, metrics.as_deref())?,
            }
        }
        Command::Eval { checkpoint, data, unk_correct, sequential } => {
            let data = Dataset::load(&data)?;
            let report = match read_sidecar(&checkpoint)?.dtype {
                DType::F32 => evaluate(&Checkpoint::<f32>::load(&checkpoint)?.0, &data, unk_correct, execution(sequential))?,
                DType::F64 => evaluate(&Checkpoint::<f64>::load(&checkpoint)?.0, &data, unk_correct, execution(sequential))?,
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate { run, variants, csv, markdown } => {
            let settings = resolve(&run)?;
            let variants = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<ccag::Result<Vec<Variant>>>()?
            };
            let rows = match settings.dtype {
                DType::F32 => cmd_ablate::<f32>(&run, &settings, &variants)?,
                DType::F64 => cmd_ablate::<f64>(&run, &settings, &variants)?,
            };
            let table = ablation_markdown(&rows);
            print!("{table}");
            if let Some(p) = csv {
                std::fs::write(&p, ablation_csv(&rows)).with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(p) = markdown {
                std::fs::write(&p, table).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Complete { checkpoint, ast_prefix, top_k, json } => {
            let completer = Completer::<f64>::load(&checkpoint)?;
            let text = std::fs::read_to_string(&ast_prefix)
                .with_context(|| format!("reading {}", ast_prefix.display()))?;
            let request = CompletionRequest { top_k, ..CompletionRequest::new(parse_prefix(&text)?) };
            let response = completer.complete(&request)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&response)?);
            } else {
                print!("{}", render(&response));
            }
        }
        Command::Serve { checkpoint, port, host, cors_origin } => {
            let slot = Arc::new(ModelSlot::new());
            slot.load(&checkpoint)?;
            tracing::info!("loaded {}", slot.get().map(|m| m.info().checkpoint.clone()).unwrap_or_default());
            let app = router(slot.clone(), &ServiceConfig { cors_origins: cors_origin }).map_err(anyhow::Error::msg)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                spawn_reloader(slot, checkpoint);
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                ccag_service::serve(SocketAddr::new(host, port), app, shutdown).await
            })?;
        }
        Command::Synth { out, programs, value_vocab, seed, held_out, held_out_programs } => {
            let config = ToyConfig { programs, value_vocab, seed };
            write_lines(&out, &toy_corpus(&config)?)?;
            if let Some(p) = held_out {
                write_lines(&p, &toy_held_out(&config, held_out_programs))?;
            }
        }
    }
    Ok(())
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn read_sidecar(checkpoint: &Path) -> anyhow::Result<Sidecar> {
    let path = sidecar_path(checkpoint);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn load_data(run: &RunArgs) -> anyhow::Result<(Dataset, Option<Dataset>)> {
    let data = Dataset::load(&run.data).with_context(|| format!("loading {}", run.data.display()))?;
    let eval = run
        .eval_data
        .as_ref()
        .map(|p| Dataset::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    Ok((data, eval))
}

fn cmd_train<T: Storable>(
    run: &RunArgs,
    settings: &Settings,
    variant: Variant,
    out: &Path,
    metrics: Option<&Path>,
) -> anyhow::Result<()> {
    let (data, eval) = load_data(run)?;
    let mut file_sink = metrics
        .map(|p| File::create(p).with_context(|| format!("creating {}", p.display())))
        .transpose()?
        .map(|f| jsonl_sink(BufWriter::new(f)));
    let mut sink = |m: &Metric| match file_sink.as_mut() {
        Some(s) => s(m),
        None => Ok(()),
    };
    let outcome = train::<T>(&settings.train, &variant.apply(&settings.model), &data, eval.as_ref(), &mut sink)?;
    let sidecar = outcome.checkpoint.save(out)?;
    println!("checkpoint {} ({})", out.display(), sidecar.checkpoint_id());
    if let Some(epoch) = outcome.stopped_early {
        println!("reached target accuracy after epoch {epoch}");
    }
    println!(
        "value accuracy {:.4}, type accuracy {:.4} over {} positions",
        outcome.report.value_accuracy, outcome.report.type_accuracy, outcome.report.positions
    );
    Ok(())
}

fn cmd_ablate<T: Storable>(
    run: &RunArgs,
    settings: &Settings,
    variants: &[Variant],
) -> anyhow::Result<Vec<ccag::train::AblationRow>> {
    let (data, eval) = load_data(run)?;
    Ok(run_ablation_suite::<T>(&settings.model, variants, &settings.train, &data, eval.as_ref(), &mut |row| {
        tracing::info!(
            variant = row.variant.label(),
            value_accuracy = row.value_accuracy,
            type_accuracy = row.type_accuracy,
            seconds = row.seconds,
            "variant done"
        );
        Ok(())
    })?)
}

fn render(r: &CompletionResponse) -> String {
    let mut out = String::from("values:\n");
    for (i, v) in r.values.iter().enumerate() {
        out.push_str(&format!("  {}. {:<24} {:.4}\n", i + 1, v.value, v.probability));
    }
    out.push_str("types:\n");
    for (i, t) in r.types.iter().enumerate() {
        out.push_str(&format!("  {}. {:<24} {:.4}\n", i + 1, t.type_name, t.probability));
    }
    out
}

fn write_lines(path: &Path, lines: &[String]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(unix)]
fn spawn_reloader(slot: Arc<ModelSlot>, path: std::path::PathBuf) {
    use tokio::signal::unix::{signal, SignalKind};
    tokio::spawn(async move {
        let Ok(mut hup) = signal(SignalKind::hangup()) else {
            return;
        };
        while hup.recv().await.is_some() {
            let (slot, p) = (slot.clone(), path.clone());
            match tokio::task::spawn_blocking(move || slot.load(&p)).await {
                Ok(Ok(LoadOutcome::Loaded)) => tracing::info!("reloaded {}", path.display()),
                Ok(Ok(LoadOutcome::Unchanged)) => tracing::info!("{} unchanged", path.display()),
                Ok(Err(e)) => tracing::error!("reload failed, keeping the current model: {e}"),
                Err(e) => tracing::error!("reload task failed: {e}"),
            }
        }
    });
}

#[cfg(not(unix))]
fn spawn_reloader(_: Arc<ModelSlot>, _: std::path::PathBuf) {}
