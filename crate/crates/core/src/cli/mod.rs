//! The `tcnn` command line.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O or
//! data-format error.

mod pgm;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use pgm::{encode_pgm, filter_images};

use crate::arch::{build, propagate_shapes, ArchId, ArchSpec};
use crate::audio::{featurize, fit_norm_stats, Profile};
use crate::data::{
    cache_read, cache_write, load_manifest, load_vocab_file, parse_manifest, random_split, ExampleRef,
    LabelVocab, SlicePolicy, Split, Task, DEFAULT_FRACTIONS,
};
use crate::error::{Error, Result};
use crate::nn::{gradcheck_arch, GradcheckOptions, OutputKind};
use crate::train::{evaluate_dataset, load_examples, train, Checkpoint, EvalMetric, TrainConfig, TrainData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "tcnn", version, about = "Timbre-oriented spectrogram CNN toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute log-mel features for every manifest entry into the cache.
    Featurize(FeaturizeArgs),
    /// Print an architecture card: layer shapes and parameter counts.
    Describe(DescribeArgs),
    /// Train a model and write a checkpoint; the log goes to stdout as NDJSON.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest.
    Evaluate(EvaluateArgs),
    /// Finite-difference gradient check of the reduced-size architectures.
    Gradcheck(GradcheckArgs),
    /// Write each conv filter of a layer as a grayscale PGM.
    ExportFilters(ExportArgs),
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub profile: Profile,
    #[arg(long)]
    pub cache_dir: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Exit nonzero when any file fails.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct DescribeArgs {
    #[arg(long)]
    pub arch: ArchId,
    #[arg(long, default_value_t = 1)]
    pub widen: usize,
    /// Print the plain-text table instead of the JSON card.
    #[arg(long)]
    pub table: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub cache_dir: PathBuf,
    #[arg(long, required_unless_present = "arch_spec")]
    pub arch: Option<ArchId>,
    /// Architecture document (as printed in a describe card's `spec`) instead of a builder id.
    #[arg(long, conflicts_with = "arch")]
    pub arch_spec: Option<PathBuf>,
    #[arg(long)]
    pub widen: Option<usize>,
    /// JSON file with flat keys mirroring the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub eval_metric: Option<EvalMetric>,
    /// Label list, one per line, fixing the output order.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub cache_dir: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Defaults to the metric the checkpoint was selected with.
    #[arg(long)]
    pub metric: Option<EvalMetric>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Checks every architecture when omitted.
    #[arg(long)]
    pub arch: Option<ArchId>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Layer prefix such as `branch0`, `branch3.conv` or `trunk0.conv`.
    /// Every first-layer branch when omitted.
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Flat training configuration file. Flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub patience: Option<usize>,
    pub eval_metric: Option<EvalMetric>,
    pub widen: Option<usize>,
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Diverged { .. } | Error::ShapeUnderflow { .. } => EXIT_VERIFY,
        _ => EXIT_IO,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Output goes to the given writers.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Featurize(a) => cmd_featurize(&a, out),
        Command::Describe(a) => cmd_describe(&a, out),
        Command::Train(a) => cmd_train(&a, out, err),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::ExportFilters(a) => cmd_export_filters(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

pub fn cmd_featurize(a: &FeaturizeArgs, out: &mut dyn Write) -> Result<i32> {
    let (examples, _) = load_manifest(&a.manifest, None)?;
    let base = manifest_dir(&a.manifest);
    // Records sharing an audio file are featurized once.
    let mut by_path: Vec<(PathBuf, Vec<&ExampleRef>)> = Vec::new();
    let mut index: BTreeMap<PathBuf, usize> = BTreeMap::new();
    for e in &examples {
        let p = e.resolve_audio(&base);
        let i = *index.entry(p.clone()).or_insert_with(|| {
            by_path.push((p, Vec::new()));
            by_path.len() - 1
        });
        by_path[i].1.push(e);
    }
    let results: Vec<Mutex<Option<Result<usize>>>> = by_path.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = (a.jobs as usize).min(by_path.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((path, group)) = by_path.get(i) else {
                    break;
                };
                let r = featurize(path, a.profile).and_then(|spec| {
                    for e in group {
                        cache_write(&a.cache_dir, &e.id, &spec)?;
                    }
                    Ok(group.len())
                });
                *results[i].lock().expect("no poisoned slot") = Some(r);
            });
        }
    });
    let mut written = 0;
    let mut failed = Vec::new();
    for ((path, group), r) in by_path.iter().zip(results) {
        match r.into_inner().expect("no poisoned slot").expect("every job ran") {
            Ok(n) => written += n,
            Err(e) => failed.extend(group.iter().map(|ex| {
                json!({"id": ex.id, "path": path.display().to_string(), "error": e.to_string()})
            })),
        }
    }
    let summary = json!({
        "profile": a.profile.name(),
        "examples": examples.len(),
        "audio_files": by_path.len(),
        "written": written,
        "failed": failed,
    });
    emit(out, &summary.to_string())?;
    Ok(if a.strict && !failed.is_empty() { EXIT_IO } else { EXIT_OK })
}

/// JSON card for a full-size architecture.
pub fn describe_card(arch: ArchId, widen: usize) -> Result<serde_json::Value> {
    let spec = build(arch, widen)?;
    let table = propagate_shapes(&spec)?;
    let reference = arch.reference_params(widen).map(|r| {
        json!({
            "params": r.params,
            "deviation": r.deviation(table.total_params),
            "tolerance": r.tolerance,
            "within_tolerance": r.within(table.total_params),
            "note": r.note,
        })
    });
    Ok(json!({
        "arch": arch.name(),
        "widen": widen,
        "input_shape": spec.input_shape,
        "layers": table.rows,
        "total_params": table.total_params,
        "reference": reference,
        "table": table.render(),
        "spec": spec,
    }))
}

pub fn cmd_describe(a: &DescribeArgs, out: &mut dyn Write) -> Result<i32> {
    let card = describe_card(a.arch, a.widen)?;
    if a.table {
        emit(out, card["table"].as_str().unwrap_or_default().trim_end())?;
    } else {
        emit(out, &serde_json::to_string_pretty(&card)?)?;
    }
    Ok(EXIT_OK)
}

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var("TCNN_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::invalid(format!("TCNN_SEED `{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Examples for `split`; a manifest without any train record is split by
/// song with `seed` first.
fn assign_splits(examples: &mut [ExampleRef], seed: u64) -> Result<()> {
    if examples.iter().all(|e| e.split == Split::Unassigned) {
        random_split(examples, DEFAULT_FRACTIONS, seed)?;
    }
    Ok(())
}

fn select(examples: &[ExampleRef], split: Split) -> Vec<&ExampleRef> {
    examples.iter().filter(|e| e.split == split).collect()
}

fn resolve_train_config(a: &TrainArgs, file: &ConfigFile, arch: &ArchSpec) -> Result<TrainConfig> {
    let metric = a
        .eval_metric
        .or(file.eval_metric)
        .unwrap_or_else(|| EvalMetric::default_for(arch.arch_id));
    let mut cfg = TrainConfig::new(metric);
    if let Some(e) = a.epochs.map(|e| e as usize).or(file.epochs) {
        cfg.epochs = e;
    }
    if let Some(v) = a.learning_rate.or(file.learning_rate) {
        cfg.sgd.learning_rate = v;
    }
    if let Some(v) = a.weight_decay.or(file.weight_decay) {
        cfg.sgd.weight_decay = v;
    }
    if let Some(v) = a.batch_size.or(file.batch_size) {
        cfg.sgd.batch_size = v;
    }
    if let Some(v) = a.patience.or(file.patience) {
        cfg.early_stop_patience = v;
    }
    cfg.sgd.seed = match a.seed.or(file.seed) {
        Some(s) => s,
        None => seed_from_env()?.unwrap_or(0),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn task_for_metric(metric: EvalMetric) -> Task {
    match metric {
        EvalMetric::Accuracy => Task::SingleLabel,
        _ => Task::MultiLabel,
    }
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let file: ConfigFile = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("config {}: {e}", p.display())))?
        }
        None => ConfigFile::default(),
    };
    let spec = match (&a.arch_spec, a.arch) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            ArchSpec::from_json(&text)?
        }
        (None, Some(id)) => build(id, a.widen.or(file.widen).unwrap_or(1))?,
        (None, None) => return Err(Error::invalid("one of --arch or --arch-spec is required")),
    };
    let cfg = resolve_train_config(a, &file, &spec)?;
    let explicit = a.vocab.as_deref().map(load_vocab_file).transpose()?;
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
    let (mut examples, vocab) = parse_manifest(&text, explicit)?;
    if vocab.len() != spec.output.n_outputs {
        return Err(Error::invalid(format!(
            "manifest has {} labels, architecture outputs {}",
            vocab.len(),
            spec.output.n_outputs
        )));
    }
    assign_splits(&mut examples, cfg.sgd.seed)?;
    let train_refs = select(&examples, Split::Train);
    let val_refs = select(&examples, Split::Val);
    if train_refs.is_empty() || val_refs.is_empty() {
        return Err(Error::Empty("train and val splits must both be non-empty".into()));
    }
    let full: Vec<_> = train_refs
        .iter()
        .map(|e| cache_read(&a.cache_dir, &e.id))
        .collect::<Result<_>>()?;
    let norm_stats = fit_norm_stats(full.iter())?;
    drop(full);
    let train_task = match spec.output.kind {
        OutputKind::Softmax => Task::SingleLabel,
        OutputKind::Sigmoid => Task::MultiLabel,
    };
    let load = |refs: &[&ExampleRef], task| {
        load_examples(refs, &a.cache_dir, spec.input_shape, &norm_stats, &vocab, task, SlicePolicy::Tile)
    };
    let data = TrainData {
        train: load(&train_refs, train_task)?,
        val: load(&val_refs, task_for_metric(cfg.eval_metric))?,
        norm_stats: norm_stats.clone(),
        labels: vocab.labels.clone(),
    };
    let _ = writeln!(
        err,
        "training {} on {} train / {} val excerpts",
        spec.arch_id,
        data.train.len(),
        data.val.len()
    );
    let mut log_err = None;
    let outcome = train(&spec, &data, &cfg, |log| {
        let mut line = serde_json::to_value(log).expect("log serializes");
        line["event"] = "epoch".into();
        if let Err(e) = emit(out, &line.to_string()) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    outcome.checkpoint.save(&a.out)?;
    let done = json!({
        "event": "done",
        "checkpoint": a.out.display().to_string(),
        "best_epoch": outcome.checkpoint.meta.epoch,
        "epochs_run": outcome.checkpoint.meta.epochs_run,
        "metric": cfg.eval_metric,
        "val_score": outcome.checkpoint.meta.val_score,
    });
    emit(out, &done.to_string())?;
    Ok(EXIT_OK)
}

pub fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
    let (mut examples, _) = parse_manifest(&text, Some(ckpt.labels.clone()))?;
    assign_splits(&mut examples, ckpt.meta.seed)?;
    let refs = select(&examples, a.split);
    if refs.is_empty() {
        return Err(Error::Empty(format!("no examples in split `{}`", a.split)));
    }
    let metric = a.metric.unwrap_or(ckpt.meta.eval_metric);
    let vocab = LabelVocab::new(ckpt.labels.clone(), task_for_metric(metric))?;
    let data = load_examples(
        &refs,
        &a.cache_dir,
        ckpt.arch.input_shape,
        &ckpt.norm_stats,
        &vocab,
        vocab.task,
        SlicePolicy::Tile,
    )?;
    let mut net = ckpt.to_network()?;
    let result = evaluate_dataset(&mut net, &data, metric, &ckpt.labels)?;
    emit(out, &result.to_json())?;
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    if !(a.tolerance > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let opts = GradcheckOptions {
        tolerance: a.tolerance,
        ..GradcheckOptions::default()
    };
    let archs: Vec<ArchId> = a.arch.map_or_else(|| ArchId::ALL.to_vec(), |x| vec![x]);
    let mut all_passed = true;
    let mut reports = Vec::new();
    for arch in archs {
        let r = gradcheck_arch(arch, &opts, a.seed)?;
        all_passed &= r.passed();
        reports.push(json!({
            "arch": arch.name(),
            "passed": r.passed(),
            "max_rel_error": r.max_rel_error(),
            "layers": r.layers,
        }));
    }
    let report = json!({"tolerance": a.tolerance, "passed": all_passed, "reports": reports});
    emit(out, &serde_json::to_string_pretty(&report)?)?;
    Ok(if all_passed { EXIT_OK } else { EXIT_VERIFY })
}

pub fn cmd_export_filters(a: &ExportArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let convs: Vec<_> = ckpt
        .tensors
        .iter()
        .filter(|t| t.name.ends_with(".conv.weight"))
        .filter(|t| match &a.layer {
            Some(l) => t.name == format!("{l}.weight") || t.name == format!("{l}.conv.weight"),
            None => t.name.starts_with("branch"),
        })
        .collect();
    if convs.is_empty() {
        return Err(Error::invalid(match &a.layer {
            Some(l) => format!("checkpoint has no conv layer `{l}`"),
            None => "checkpoint has no first-layer branches".into(),
        }));
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let mut files = Vec::new();
    for t in convs {
        let layer = t.name.trim_end_matches(".conv.weight");
        for (i, img) in filter_images(&t.value).into_iter().enumerate() {
            let path = a.out_dir.join(format!("{layer}_f{i:03}.pgm"));
            std::fs::write(&path, img).map_err(|e| Error::io(&path, e))?;
            files.push(path.display().to_string());
        }
    }
    emit(out, &json!({"written": files.len(), "files": files}).to_string())?;
    Ok(EXIT_OK)
}

/// Entry point used by the binary.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}
