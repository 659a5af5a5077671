//! Command-line entry points: `train`, `generate`, `eval`, `inspect`, `stats`.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::corpus::{compute_stats, examples, load_corpus, DocumentRecord};
use crate::metrics::evaluate_lines;
use crate::model::ModelParams;
use crate::serializer::Vocabulary;
use crate::trainer::{predict, prepare_example, prepare_examples, train};

pub use config::{RunConfig, MODEL_KEYS};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_LOG: &str = "metrics.log";

#[derive(Debug, Parser)]
#[command(name = "layoutmrc", version, about = "Layout-aware generative question answering over document images")]
pub struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Configuration override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write it to the output directory.
    Train(TrainArgs),
    /// Answer every question of a corpus, one line per question.
    Generate(GenerateArgs),
    /// Score predictions against the answers of a corpus.
    Eval(EvalArgs),
    /// Show the encoder input and saliency labels of one question.
    Inspect(InspectArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Output directory for the checkpoint, vocabulary, config and log.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Corpus whose answers are the references.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Question index over the whole corpus.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Use this model directory's vocabulary instead of one built from the corpus.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
}

/// Failure classes that map to distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or missing inputs (exit code 2).
    Usage(String),
    /// Anything that fails while running (exit code 1).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn usage<T>(message: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(message.into()))
}

fn resolve_config(cli: &Cli, base: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(dir) = base {
        let path = dir.join(CONFIG_FILE);
        if !path.exists() {
            return usage(format!("model config not found: {}", path.display()));
        }
        cfg.apply_file(&path).map_err(CliError::Usage)?;
    }
    if let Some(path) = &cli.config {
        cfg.apply_file(path).map_err(CliError::Usage)?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o).map_err(CliError::Usage)?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate().map_err(CliError::Usage)?;
    Ok(cfg)
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    match path {
        Some(p) => Ok(p),
        None => usage(format!("no {what} given")),
    }
}

fn read_corpus(path: &Path) -> Result<Vec<DocumentRecord>, CliError> {
    if !path.exists() {
        return usage(format!("corpus file not found: {}", path.display()));
    }
    load_corpus(path).map_err(|e| CliError::Runtime(e.into()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => cmd_train(&cli, a),
        Command::Generate(a) => cmd_generate(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Inspect(a) => cmd_inspect(&cli, a),
        Command::Stats(a) => cmd_stats(a),
    }
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_config(cli, None)?;
    let train_path = required(args.train.clone().or(cfg.train_corpus.clone()), "training corpus")?;
    let out = required(args.out.clone().or(cfg.output_dir.clone()), "output directory")?;
    let train_docs = read_corpus(&train_path)?;
    let dev_docs = match args.dev.clone().or(cfg.dev_corpus.clone()) {
        Some(p) => read_corpus(&p)?,
        None => Vec::new(),
    };

    let vocab = Vocabulary::build(&train_docs, cfg.vocab_size);
    let train_set = prepare_examples(&train_docs, &vocab, &cfg.model).context("preparing training data")?;
    let dev_set = prepare_examples(&dev_docs, &vocab, &cfg.model).context("preparing dev data")?;
    if train_set.is_empty() {
        return Err(anyhow::anyhow!("training corpus {} has no questions", train_path.display()).into());
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text()).context("writing config")?;
    vocab.save(out.join(VOCAB_FILE)).context("writing vocabulary")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let params = ModelParams::new(&cfg.model, vocab.len(), &mut rng);
    log::info!(
        "training on {} questions, {} parameters",
        train_set.len(),
        params.num_parameters()
    );
    let mut log_text = String::new();
    let outcome = train(&train_set, &dev_set, &vocab, &cfg.model, params, &cfg.train, |r| {
        eprintln!("{r}");
        let _ = writeln!(log_text, "{r}");
    })
    .context("training failed")?;
    let _ = writeln!(log_text, "best_epoch {}", outcome.best_epoch);
    fs::write(out.join(METRICS_LOG), log_text).context("writing metrics log")?;
    checkpoint::save(out.join(CHECKPOINT_FILE), &outcome.params).context("writing checkpoint")?;
    println!("best epoch {} written to {}", outcome.best_epoch, out.display());
    Ok(())
}

fn cmd_generate(cli: &Cli, args: &GenerateArgs) -> Result<(), CliError> {
    let model_dir = match args.model.clone() {
        Some(d) => d,
        None => {
            let cfg = resolve_config(cli, None)?;
            required(cfg.output_dir, "model directory")?
        }
    };
    if !model_dir.is_dir() {
        return usage(format!("model directory not found: {}", model_dir.display()));
    }
    let cfg = resolve_config(cli, Some(&model_dir))?;
    let corpus_path = required(args.corpus.clone().or(cfg.test_corpus.clone()), "corpus")?;
    let docs = read_corpus(&corpus_path)?;

    let vocab = Vocabulary::load(model_dir.join(VOCAB_FILE))
        .map_err(|e| anyhow::anyhow!("loading vocabulary: {e}"))?;
    let mut params = ModelParams::new(&cfg.model, vocab.len(), &mut ChaCha8Rng::seed_from_u64(0));
    let ckpt = cfg.checkpoint.clone().unwrap_or(model_dir.join(CHECKPOINT_FILE));
    checkpoint::load(&ckpt, &mut params).context("loading checkpoint")?;

    let data = prepare_examples(&docs, &vocab, &cfg.model).context("preparing inputs")?;
    let answers = predict(&data, &vocab, &params, &cfg.model, cfg.decode, cfg.train.max_answer_len)
        .context("generation failed")?;
    let mut file = fs::File::create(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    for a in &answers {
        writeln!(file, "{a}").context("writing predictions")?;
    }
    eprintln!("{} answers written to {}", answers.len(), args.output.display());
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    let cfg = resolve_config(cli, None)?;
    let corpus_path = required(args.corpus.clone().or(cfg.test_corpus), "corpus")?;
    let docs = read_corpus(&corpus_path)?;
    if !args.predictions.exists() {
        return usage(format!("predictions file not found: {}", args.predictions.display()));
    }
    let predictions = crate::metrics::read_lines(&args.predictions).map_err(|e| CliError::Runtime(e.into()))?;
    let references: Vec<String> = examples(&docs).map(|(_, qa)| qa.answer.clone()).collect();
    let report = evaluate_lines(predictions, references).map_err(|e| CliError::Runtime(e.into()))?;
    let text = report.to_string();
    print!("{text}");
    if let Some(path) = &args.report {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn fmt_loc(loc: Option<[f64; 4]>) -> String {
    match loc {
        Some(l) => format!("[{:.3}, {:.3}, {:.3}, {:.3}]", l[0], l[1], l[2], l[3]),
        None => "-".into(),
    }
}

/// Text dump of one question's encoder input, one position per line.
pub fn inspect_text(
    docs: &[DocumentRecord],
    index: usize,
    vocab: &Vocabulary,
    cfg: &RunConfig,
) -> anyhow::Result<String> {
    let total = examples(docs).count();
    let Some((doc, qa)) = examples(docs).nth(index) else {
        bail!("question index {index} is out of range (corpus has {total} questions)");
    };
    let ex = prepare_example(doc, qa, vocab, &cfg.model)?;
    let mut out = String::new();
    writeln!(out, "question: {}", qa.question)?;
    writeln!(out, "answer: {}", qa.answer)?;
    writeln!(out, "relevant rois: {:?}", qa.relevant_roi_ids)?;
    writeln!(out, "{:>4}  {:<16} {:<10} {:<10} {:<34} label", "pos", "token", "origin", "segment", "loc")?;
    for (k, p) in ex.seq.positions.iter().enumerate() {
        let label = match ex.labels.at_position(k) {
            Some(l) => u8::from(l.positive).to_string(),
            None => "-".into(),
        };
        let seg = p.seg_class.map_or("-".to_string(), |c| c.to_string());
        writeln!(
            out,
            "{k:>4}  {:<16} {:<10} {:<10} {:<34} {label}",
            p.piece,
            p.origin.to_string(),
            seg,
            fmt_loc(p.loc)
        )?;
    }
    Ok(out)
}

fn cmd_inspect(cli: &Cli, args: &InspectArgs) -> Result<(), CliError> {
    let cfg = resolve_config(cli, args.model.as_deref())?;
    let docs = read_corpus(&args.corpus)?;
    let vocab = match &args.model {
        Some(dir) => Vocabulary::load(dir.join(VOCAB_FILE))
            .map_err(|e| anyhow::anyhow!("loading vocabulary: {e}"))?,
        None => Vocabulary::build(&docs, cfg.vocab_size),
    };
    print!("{}", inspect_text(&docs, args.index, &vocab, &cfg)?);
    Ok(())
}

fn cmd_stats(args: &StatsArgs) -> Result<(), CliError> {
    let docs = read_corpus(&args.corpus)?;
    println!("{}", compute_stats(&docs));
    Ok(())
}
