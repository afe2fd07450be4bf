//! Operator surface: one binary whose subcommands cover corpus synthesis,
//! both training stages, metric evaluation, sentence decoding, artifact
//! inspection, and report rendering.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or artifact error, 3
//! training or numeric failure. Diagnostics go to stderr and are controlled
//! by `EEG2TEXT_LOG={error|info|debug}`; everything else a command produces
//! lands on stdout or under its `--out` path. Every command is a pure
//! function of its flags, config files, and `--seed`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Once;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::data::{load_corpus, save_corpus, synth_corpus, DataError, SynthConfig};
use crate::evaluation::{case_report, evaluate, EvalError, MetricsReport};
use crate::masking::MaskStrategy;
use crate::model::{GenMode, InputMode, ModelConfig, ModelError};
use crate::regions::{validate_partition, ChannelPartition, RegionError};
use crate::training::{
    finetune, load_checkpoint, pretrain, save_checkpoint, Precision, TrainConfig, TrainError,
    ViewStrategy, DEFAULT_BATCH, MULTIVIEW_LR, PRETRAIN_LR, SINGLE_STAGE_LR,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Train(TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("invariant violations in {path}:\n{list}")]
    Violations { path: String, list: String },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_)
            | CliError::Region(_)
            | CliError::Io { .. }
            | CliError::Format { .. }
            | CliError::Violations { .. } => 2,
            CliError::Model(_) => 3,
            CliError::Eval(e) => match e {
                EvalError::Model(_) => 3,
                _ => 2,
            },
            CliError::Train(e) => match e {
                // bad flag/config values surface here after parsing
                TrainError::InvalidConfig(_) | TrainError::EmptyCorpora => 1,
                TrainError::Io { .. }
                | TrainError::Corrupt(_)
                | TrainError::VersionMismatch { .. }
                | TrainError::VocabMismatch { .. }
                | TrainError::SampleRateMismatch { .. }
                | TrainError::CheckpointMismatch(_)
                | TrainError::Data(_) => 2,
                _ => 3,
            },
        }
    }
}

#[derive(Parser)]
#[command(
    name = "eeg2text",
    version,
    about = "Desk-scale EEG-to-text decoding pipeline",
    disable_help_subcommand = true
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus directory from a JSON settings file
    Synth(SynthCmd),
    /// Masked-reconstruction self-supervised pre-training
    Pretrain(PretrainCmd),
    /// Supervised fine-tuning, optionally from a pre-trained or partial
    /// checkpoint
    Train(TrainCmd),
    /// Score a checkpoint on a corpus: BLEU-1..4 and ROUGE-1 F/P/R
    Eval(EvalCmd),
    /// Decode sentences and print ground truth next to model output
    Decode(DecodeCmd),
    /// Validate an artifact: corpus directory, checkpoint, or partition JSON
    Inspect(InspectCmd),
    /// Render metric JSON files as one aligned text table
    Report(ReportCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Greedy,
    Beam,
}

/// Tuning presets binding the documented (batch, learning-rate) pairs.
#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Single,
    Pretrain,
    Multiview,
}

fn stage_lr(stage: StageArg) -> f64 {
    match stage {
        StageArg::Single => SINGLE_STAGE_LR,
        StageArg::Pretrain => PRETRAIN_LR,
        StageArg::Multiview => MULTIVIEW_LR,
    }
}

#[derive(Args)]
struct SynthCmd {
    /// Generator settings (JSON object; missing fields take defaults)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output corpus directory
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed from the settings file
    #[arg(long)]
    seed: Option<u64>,
}

/// Flags shared by both training stages. Precedence, strongest first:
/// explicit flag, `--stage` preset, config file, stage default.
#[derive(Args)]
struct TuningArgs {
    /// JSON file with optional "model" and "train" sections
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    stage: Option<StageArg>,
    #[arg(long, value_parser = Precision::from_str)]
    precision: Option<Precision>,
    #[arg(long, value_parser = InputMode::from_str)]
    input_mode: Option<InputMode>,
}

#[derive(Args)]
struct PretrainCmd {
    /// Corpus directory; repeat the flag for multi-corpus pre-training
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    /// Output checkpoint file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = MaskStrategy::from_str)]
    mask_strategy: Option<MaskStrategy>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    corpus: PathBuf,
    /// Output checkpoint file
    #[arg(long)]
    out: PathBuf,
    /// Starting point: pre-trained weights or a partial run to resume
    #[arg(long)]
    init_ckpt: Option<PathBuf>,
    #[arg(long, value_parser = ViewStrategy::from_str)]
    view_strategy: Option<ViewStrategy>,
    /// Region partition JSON overriding the built-in ten-group layout
    #[arg(long)]
    partition: Option<PathBuf>,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
    mode: ModeArg,
    #[arg(long, default_value_t = 4)]
    beam_width: usize,
    /// Metrics JSON destination; the text table always prints to stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeCmd {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated pair indices (default: every pair)
    #[arg(long)]
    indices: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
    mode: ModeArg,
    #[arg(long, default_value_t = 4)]
    beam_width: usize,
    /// Write the blocks here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectCmd {
    /// Corpus directory, checkpoint file, or partition JSON
    path: PathBuf,
}

#[derive(Args)]
struct ReportCmd {
    /// Metric JSON files produced by `eval`
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write the table here as well as stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

static LOG_INIT: Once = Once::new();

/// Parses and runs one command line (`argv[0]` is the program name) and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    LOG_INIT.call_once(|| {
        env_logger::Builder::from_env(env_logger::Env::new().filter_or("EEG2TEXT_LOG", "error"))
            .format_timestamp(None)
            .init();
    });
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        // fails when a pool already exists (e.g. a second in-process call);
        // the existing pool then stays in effect
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        log::info!("worker threads: {n}");
    }
    let result = match cli.cmd {
        Cmd::Synth(c) => cmd_synth(c),
        Cmd::Pretrain(c) => cmd_pretrain(c),
        Cmd::Train(c) => cmd_train(c),
        Cmd::Eval(c) => cmd_eval(c),
        Cmd::Decode(c) => cmd_decode(c),
        Cmd::Inspect(c) => cmd_inspect(c),
        Cmd::Report(c) => cmd_report(c),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ----- shared plumbing -----

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io { path: path.display().to_string(), source: e })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io { path: path.display().to_string(), source: e })
}

fn parse_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| CliError::Format { path: path.display().to_string(), msg: e.to_string() })
}

/// Optional config file sections; flags override either one.
#[derive(Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        Some(p) => parse_json_file(p),
        None => Ok(FileConfig::default()),
    }
}

/// Model section with flag overrides; without a config file the vocabulary
/// size is taken from the corpus so the two always agree.
fn assemble_model(
    tuning: &TuningArgs,
    file: &FileConfig,
    vocab_size: usize,
    partition: Option<&Path>,
) -> Result<ModelConfig, CliError> {
    let mut model = file
        .model
        .clone()
        .unwrap_or_else(|| ModelConfig { vocab_size, ..ModelConfig::default() });
    if let Some(mode) = tuning.input_mode {
        model.input_mode = mode;
    }
    if let Some(p) = partition {
        let text = String::from_utf8(read_bytes(p)?).map_err(|e| CliError::Format {
            path: p.display().to_string(),
            msg: e.to_string(),
        })?;
        model.partition = ChannelPartition::from_json(&p.display().to_string(), &text)?;
    }
    Ok(model)
}

/// Train section with flag overrides; `fallback_lr` applies when neither a
/// flag, a preset, nor a config file names a learning rate.
fn assemble_train(
    tuning: &TuningArgs,
    file: &FileConfig,
    fallback_lr: f64,
    corpora: &[PathBuf],
) -> TrainConfig {
    let (mut tc, from_file) = match &file.train {
        Some(t) => (t.clone(), true),
        None => (TrainConfig::default(), false),
    };
    if !from_file {
        tc.learning_rate = fallback_lr;
        tc.batch_size = DEFAULT_BATCH;
    }
    if let Some(stage) = tuning.stage {
        tc.learning_rate = stage_lr(stage);
        tc.batch_size = DEFAULT_BATCH;
    }
    if let Some(lr) = tuning.lr {
        tc.learning_rate = lr;
    }
    if let Some(b) = tuning.batch {
        tc.batch_size = b;
    }
    if let Some(e) = tuning.epochs {
        tc.n_epochs = e;
    }
    if let Some(s) = tuning.seed {
        tc.seed = s;
    }
    if let Some(p) = tuning.precision {
        tc.precision = p;
    }
    tc.corpora = corpora.iter().map(|p| p.display().to_string()).collect();
    tc
}

fn gen_mode(mode: ModeArg, beam_width: usize) -> Result<GenMode, CliError> {
    match mode {
        ModeArg::Greedy => Ok(GenMode::Greedy),
        ModeArg::Beam => {
            if beam_width == 0 {
                Err(CliError::Usage("--beam-width must be at least 1".into()))
            } else {
                Ok(GenMode::Beam(beam_width))
            }
        }
    }
}

fn parse_indices(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| CliError::Usage(format!("--indices: {s:?} is not an index")))
        })
        .collect()
}

// ----- subcommands -----

fn cmd_synth(cmd: SynthCmd) -> Result<(), CliError> {
    let mut cfg = match &cmd.config {
        Some(p) => parse_json_file::<SynthConfig>(p)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = cmd.seed {
        cfg.seed = seed;
    }
    let corpus = synth_corpus(&cfg)?;
    save_corpus(&corpus, &cmd.out)?;
    println!(
        "wrote corpus {:?}: {} pairs, {} channels, vocabulary {} -> {}",
        corpus.name,
        corpus.pairs.len(),
        corpus.n_channels(),
        corpus.vocabulary.len(),
        cmd.out.display()
    );
    Ok(())
}

fn cmd_pretrain(cmd: PretrainCmd) -> Result<(), CliError> {
    if let Some(r) = cmd.mask_ratio {
        if !(r > 0.0 && r <= 1.0) {
            return Err(CliError::Usage(format!("--mask-ratio must be in (0, 1], got {r}")));
        }
    }
    let file = load_file_config(cmd.tuning.config.as_deref())?;
    let mut corpora = Vec::with_capacity(cmd.corpus.len());
    for p in &cmd.corpus {
        corpora.push(load_corpus(p)?);
    }
    let model = assemble_model(&cmd.tuning, &file, corpora[0].vocabulary.len(), None)?;
    let mut tc = assemble_train(&cmd.tuning, &file, PRETRAIN_LR, &cmd.corpus);
    if let Some(ms) = cmd.mask_strategy {
        tc.mask_strategy = ms;
    }
    if let Some(mr) = cmd.mask_ratio {
        tc.mask_ratio = mr;
    }
    let ckpt = pretrain(&corpora, &model, &tc).map_err(CliError::Train)?;
    save_checkpoint(&ckpt, &cmd.out).map_err(CliError::Train)?;
    println!(
        "saved pre-trained checkpoint -> {} (epoch {}, masked mse {:.6})",
        cmd.out.display(),
        ckpt.epoch,
        ckpt.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_train(cmd: TrainCmd) -> Result<(), CliError> {
    let file = load_file_config(cmd.tuning.config.as_deref())?;
    let corpus = load_corpus(&cmd.corpus)?;
    let strategy = cmd
        .view_strategy
        .or_else(|| file.train.as_ref().map(|t| t.view_strategy))
        .unwrap_or(ViewStrategy::Single);
    let fallback_lr =
        if strategy == ViewStrategy::Single { SINGLE_STAGE_LR } else { MULTIVIEW_LR };
    let model = assemble_model(
        &cmd.tuning,
        &file,
        corpus.vocabulary.len(),
        cmd.partition.as_deref(),
    )?;
    let mut tc = assemble_train(&cmd.tuning, &file, fallback_lr, &[cmd.corpus.clone()]);
    tc.view_strategy = strategy;
    let init = match &cmd.init_ckpt {
        Some(p) => Some(load_checkpoint(p).map_err(CliError::Train)?),
        None => None,
    };
    let ckpt = finetune(&corpus, init.as_ref(), &model, &tc).map_err(CliError::Train)?;
    save_checkpoint(&ckpt, &cmd.out).map_err(CliError::Train)?;
    println!(
        "saved checkpoint -> {} (epoch {}, cross-entropy {:.6})",
        cmd.out.display(),
        ckpt.epoch,
        ckpt.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_eval(cmd: EvalCmd) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&cmd.ckpt).map_err(CliError::Train)?;
    let corpus = load_corpus(&cmd.corpus)?;
    let mode = gen_mode(cmd.mode, cmd.beam_width)?;
    let report = evaluate(&ckpt, &corpus, mode)?;
    print!("{}", report.to_text());
    if let Some(out) = &cmd.out {
        write_bytes(out, report.to_json().as_bytes())?;
    }
    Ok(())
}

fn cmd_decode(cmd: DecodeCmd) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&cmd.ckpt).map_err(CliError::Train)?;
    let corpus = load_corpus(&cmd.corpus)?;
    let mode = gen_mode(cmd.mode, cmd.beam_width)?;
    let indices: Vec<usize> = match &cmd.indices {
        Some(s) => parse_indices(s)?,
        None => (0..corpus.pairs.len()).collect(),
    };
    let text = case_report(&ckpt, &corpus, &indices, mode)?;
    match &cmd.out {
        Some(p) => write_bytes(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_inspect(cmd: InspectCmd) -> Result<(), CliError> {
    let path = &cmd.path;
    if path.is_dir() {
        // load_corpus checks the manifest, every CRC32, and type invariants
        let corpus = load_corpus(path)?;
        println!(
            "corpus {:?}: {} pairs, {} channels @ {} Hz, vocabulary {}, seed {}",
            corpus.name,
            corpus.pairs.len(),
            corpus.n_channels(),
            corpus.sample_rate,
            corpus.vocabulary.len(),
            corpus.seed
        );
        return Ok(());
    }
    let bytes = read_bytes(path)?;
    if bytes.starts_with(b"EEG2T") {
        let ckpt = load_checkpoint(path).map_err(CliError::Train)?;
        let mut violations = Vec::new();
        if let Err(e) = ckpt.model.validate() {
            violations.push(e.to_string());
        }
        violations.extend(validate_partition(&ckpt.model.partition, None));
        for (name, t) in ckpt.params.iter() {
            if t.data().iter().any(|v| !v.is_finite()) {
                violations.push(format!("parameter {name} has non-finite entries"));
            }
        }
        if !violations.is_empty() {
            return Err(CliError::Violations {
                path: path.display().to_string(),
                list: violations.join("\n"),
            });
        }
        let stage = if ckpt.is_pretrain() { "pre-training" } else { "fine-tuning" };
        println!(
            "checkpoint: {stage} stage, epoch {}, {} tensors / {} parameters, view {}, last loss {}",
            ckpt.epoch,
            ckpt.params.len(),
            ckpt.params.numel(),
            ckpt.train.view_strategy,
            ckpt.loss_history
                .last()
                .map(|l| format!("{l:.6}"))
                .unwrap_or_else(|| "n/a".into())
        );
        return Ok(());
    }
    let text = String::from_utf8(bytes).map_err(|_| CliError::Format {
        path: path.display().to_string(),
        msg: "not a corpus directory, checkpoint, or partition JSON".into(),
    })?;
    let part = ChannelPartition::from_json(&path.display().to_string(), &text)?;
    let violations = validate_partition(&part, None);
    if !violations.is_empty() {
        return Err(CliError::Violations {
            path: path.display().to_string(),
            list: violations.join("\n"),
        });
    }
    println!("partition: {} groups, {} channels", part.n_groups(), part.n_channels());
    Ok(())
}

fn metric_row(report: &MetricsReport, path: &Path) -> Result<[f64; 7], CliError> {
    let mut row = [0.0; 7];
    for n in 1..=4 {
        row[n - 1] = *report.bleu.get(&n).ok_or_else(|| CliError::Format {
            path: path.display().to_string(),
            msg: format!("missing BLEU-{n}"),
        })?;
    }
    row[4] = report.rouge1.f;
    row[5] = report.rouge1.p;
    row[6] = report.rouge1.r;
    Ok(row)
}

fn cmd_report(cmd: ReportCmd) -> Result<(), CliError> {
    let mut rows = Vec::with_capacity(cmd.inputs.len());
    for p in &cmd.inputs {
        let report: MetricsReport = parse_json_file(p)?;
        let values = metric_row(&report, p)?;
        let label = p.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
        rows.push((label, values));
    }
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("run".len()) + 2;
    let mut text = format!("{:<label_w$}", "run");
    for h in ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-1-F", "ROUGE-1-P", "ROUGE-1-R"] {
        text.push_str(&format!("{h:<11}"));
    }
    text.push('\n');
    for (label, values) in &rows {
        text.push_str(&format!("{label:<label_w$}"));
        for v in values {
            text.push_str(&format!("{v:<11.4}"));
        }
        text.push('\n');
    }
    print!("{text}");
    if let Some(out) = &cmd.out {
        write_bytes(out, text.as_bytes())?;
    }
    Ok(())
}
