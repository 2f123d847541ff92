mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wcaps_core::Polarity;

pub const MODEL_DIR_ENV: &str = "WCAPS_MODEL_DIR";
pub const DEFAULT_MODEL_FILE: &str = "model.wcaps";

/// Multi-domain sentiment classification with per-domain capsule networks.
#[derive(Debug, Parser)]
#[command(name = "wcaps", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-domain corpus as JSONL.
    Synth(SynthArgs),
    /// Train a model and write it with a training log.
    Train(TrainArgs),
    /// Score a model on a labeled dataset.
    Eval(EvalArgs),
    /// Predict domain and polarity for raw texts, one per line.
    Predict(PredictArgs),
    /// Dump token-level tf, idf and dbd values as TSV.
    Dbd(DbdArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Tsv,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10, value_parser = positive)]
    pub domains: usize,
    #[arg(long, default_value_t = 40, value_parser = positive)]
    pub docs_per_domain: usize,
    #[arg(long, default_value_t = 30, value_parser = positive)]
    pub domain_vocab: usize,
    #[arg(long, default_value_t = 8, value_parser = positive)]
    pub sentiment_words: usize,
    /// Share of each domain's words drawn from a common pool, in [0, 1].
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    pub vocab_overlap: f64,
    /// Positive-to-negative ratio within each domain.
    #[arg(long, default_value_t = 1.0, value_parser = positive_real)]
    pub imbalance: f64,
    #[arg(long, default_value_t = 8, value_parser = positive)]
    pub min_len: usize,
    #[arg(long, default_value_t = 16, value_parser = positive)]
    pub max_len: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data (JSONL, or CSV by extension).
    pub data: PathBuf,
    /// Model file to write.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Training log; defaults to the model path with `.log.json` appended.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 10, value_parser = positive)]
    pub epochs: usize,
    /// Defaults to 8, or 128 with --cost-sensitive.
    #[arg(long, value_parser = positive)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 1e-3, value_parser = positive_real)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 64, value_parser = positive)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 32, value_parser = positive)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 4, value_parser = positive)]
    pub capsules: usize,
    #[arg(long, default_value_t = 8, value_parser = positive)]
    pub capsule_dim: usize,
    #[arg(long, default_value_t = 3, value_parser = positive)]
    pub routing_iterations: usize,
    /// Upper bound on the padded sequence length.
    #[arg(long, value_parser = positive)]
    pub max_len: Option<usize>,
    #[arg(long, default_value_t = 2, value_parser = positive)]
    pub min_count: usize,
    #[arg(long)]
    pub cost_sensitive: bool,
    /// Class weighted by the cost-sensitive loss (pos or neg).
    #[arg(long, value_parser = polarity)]
    pub minority: Option<Polarity>,
    /// Stopword file, one token per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Word-vector file used to initialize embeddings.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Also run k-fold cross-validation and write its report here.
    #[arg(long, value_parser = at_least_two, requires = "cv_report")]
    pub folds: Option<usize>,
    #[arg(long, requires = "folds")]
    pub cv_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    /// Report file; standard output when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file; falls back to `$WCAPS_MODEL_DIR/model.wcaps`.
    #[arg(short, long)]
    pub model: Option<PathBuf>,
    /// Input texts, one per line; standard input when omitted.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DbdArgs {
    /// Read statistics from this model file.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub model: Option<PathBuf>,
    /// Build statistics from this labeled dataset instead.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Restrict the table to these tokens.
    #[arg(long, num_args = 1..)]
    pub tokens: Vec<String>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn at_least_two(s: &str) -> Result<usize, String> {
    match positive(s)? {
        1 => Err("needs at least 2 folds".into()),
        v => Ok(v),
    }
}

fn positive_real(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err("must be a positive number".into())
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("must lie in [0, 1]".into())
    }
}

fn polarity(s: &str) -> Result<Polarity, String> {
    s.parse().map_err(|bad| format!("unknown polarity `{bad}`"))
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
