use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use reflm::corpus::synthetic::{make_synthetic, Manifest, SyntheticSpec};
use reflm::harness::{prepare_from_file, Corpus, TrainConfig, TrainLog, TrainedModel};
use reflm::task::{Split, Task};
use reflm::BUILD_ID;

#[derive(Parser)]
#[command(name = "reflm", version = BUILD_ID, about = "Reference-aware language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a raw corpus, or write a synthetic one, into a prepared directory.
    Prepare(PrepareArgs),
    /// Train a model on a prepared directory and write a checkpoint.
    Train(TrainArgs),
    /// Per-class perplexity of a split, as JSON.
    Eval(EvalArgs),
    /// Beam-decode a split and score it with BLEU.
    Generate(GenerateArgs),
    /// Export attention heat maps as CSV, one file per example.
    Heatmap(HeatmapArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    task: Task,
    #[arg(long)]
    out: PathBuf,
    /// Raw JSON-lines corpus to split 80/10/10.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    /// Database table CSV for the dialogue task.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Generate a synthetic corpus instead of reading one.
    #[arg(long)]
    synthetic: bool,
    /// Number of synthetic examples.
    #[arg(long, default_value_t = 500)]
    size: usize,
    /// Share of synthetic ingredient names or table rows kept out of training.
    #[arg(long, default_value_t = 0.2)]
    held_out: f64,
    /// Rows in the synthetic dialogue database.
    #[arg(long, default_value_t = reflm::corpus::synthetic::TABLE_ROWS)]
    table_rows: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Overrides for [`TrainConfig`]; each flag is named after its field.
#[derive(Args, Default)]
#[command(rename_all = "snake_case")]
struct ConfigFlags {
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    hidden_dim: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long)]
    attention_dim: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    lr_decay: Option<String>,
    #[arg(long)]
    clip_norm: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    sentence_attention: Option<String>,
    #[arg(long)]
    init_checkpoint: Option<String>,
    #[arg(long)]
    max_vocab: Option<String>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let fields = [
            ("task", &self.task),
            ("hidden_dim", &self.hidden_dim),
            ("embed_dim", &self.embed_dim),
            ("attention_dim", &self.attention_dim),
            ("lr", &self.lr),
            ("lr_decay", &self.lr_decay),
            ("clip_norm", &self.clip_norm),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("seed", &self.seed),
            ("mode", &self.mode),
            ("sentence_attention", &self.sentence_attention),
            ("init_checkpoint", &self.init_checkpoint),
            ("max_vocab", &self.max_vocab),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared data directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 10)]
    beam_width: usize,
    #[arg(long, default_value_t = 100)]
    max_len: usize,
    /// Decode only the first N examples.
    #[arg(long)]
    limit: Option<usize>,
    /// Write the JSON report here; the decoded text goes to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Example indices within the split; repeatable.
    #[arg(long = "index", required = true)]
    indices: Vec<usize>,
    /// Decoding steps to keep, as `start..end`.
    #[arg(long, value_parser = parse_range)]
    steps: Option<Range<usize>>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_range(s: &str) -> Result<Range<usize>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected start..end, got {s:?}"))?;
    let a = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    if b < a {
        return Err(format!("range end {b} is before its start {a}"));
    }
    Ok(a..b)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let manifest = if args.synthetic {
        let spec = SyntheticSpec {
            held_out_fraction: args.held_out,
            table_rows: args.table_rows,
            ..SyntheticSpec::new(args.task, args.seed, args.size)
        };
        make_synthetic(&spec, &args.out)?
    } else {
        let input = args.input.as_deref().context("--input is required without --synthetic")?;
        prepare_from_file(args.task, input, args.table.as_deref(), &args.out, args.seed)?
    };
    let sizes: Vec<String> = manifest.splits.iter().map(|(k, v)| format!("{k} {}", v.len())).collect();
    println!("prepared {} in {} ({})", manifest.task, args.out.display(), sizes.join(", "));
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    build_id: &'a str,
    config: &'a TrainConfig,
    vocab_size: usize,
    parameters: usize,
    log: &'a TrainLog,
}

fn train(args: TrainArgs) -> Result<()> {
    let manifest = Manifest::load(&args.data).with_context(|| format!("reading manifest in {}", args.data.display()))?;
    let mut config = TrainConfig::new(manifest.task);
    if let Some(path) = &args.config {
        config.apply_file(path)?;
    }
    for (k, v) in args.flags.pairs() {
        config.set(k, v).with_context(|| format!("--{k}"))?;
    }
    let corpus = Corpus::load(&args.data)?;
    let mut model = TrainedModel::init(&config, &corpus)?;
    log::info!("{} vocabulary entries, {} parameter values", model.vocab.len(), model.store.num_values());
    let log = model.train(&corpus)?;
    model.save(&args.out)?;
    let log_path = args.out.with_extension("log");
    fs::write(&log_path, log.text())?;
    write_json(
        &args.out.with_extension("train.json"),
        &TrainReport {
            build_id: BUILD_ID,
            config: &config,
            vocab_size: model.vocab.len(),
            parameters: model.store.num_values(),
            log: &log,
        },
    )?;
    println!("wrote {} (best epoch {}, loss log {})", args.out.display(), log.best_epoch, log_path.display());
    Ok(())
}

fn load(checkpoint: &Path, data: &Path) -> Result<(TrainedModel, Corpus)> {
    let model = TrainedModel::load(checkpoint)?;
    let corpus = Corpus::load(data)?;
    if corpus.task() != model.task() {
        bail!("checkpoint is for {} but {} holds {} data", model.task(), data.display(), corpus.task());
    }
    Ok((model, corpus))
}

fn eval(args: EvalArgs) -> Result<()> {
    let (model, corpus) = load(&args.checkpoint, &args.data)?;
    let report = model.evaluate(&corpus, args.split)?;
    match &args.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let (model, corpus) = load(&args.checkpoint, &args.data)?;
    let report = model.generate(&corpus, args.split, args.beam_width, args.max_len, args.limit)?;
    for g in &report.outputs {
        match g.turn {
            Some(t) => println!("{}:{}\t{}", g.example, t, g.tokens.join(" ")),
            None => println!("{}\t{}", g.example, g.tokens.join(" ")),
        }
    }
    println!("BLEU {:.4}", report.bleu.bleu);
    if let Some(p) = &args.out {
        write_json(p, &report)?;
    }
    Ok(())
}

fn heatmap(args: HeatmapArgs) -> Result<()> {
    let (model, corpus) = load(&args.checkpoint, &args.data)?;
    fs::create_dir_all(&args.out_dir)?;
    for &i in &args.indices {
        let map = model.heatmap(&corpus, args.split, i, args.steps.clone())?;
        let path = args.out_dir.join(format!("{}_{}_{i}.csv", model.task(), args.split));
        fs::write(&path, map.to_csv()?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Generate(a) => generate(a),
        Command::Heatmap(a) => heatmap(a),
    }
}
