use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod config;
mod manifest;

/// Passage-level reranking toolkit: retrieval, chunking, label transfer,
/// aggregation and evaluation.
#[derive(Debug, Parser)]
#[command(name = "passrank", version, propagate_version = true)]
pub struct Cli {
    /// key = value file pre-setting flags; command-line flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for internal parallelism [default: available cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 123)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inverted index operations
    #[command(subcommand)]
    Index(IndexCommand),
    /// First-stage retrieval into a TREC run
    Retrieve(RetrieveArgs),
    /// Split documents into passages
    Chunk(ChunkArgs),
    /// Label passages of retrieved documents
    Label(LabelArgs),
    /// Balance negatives against positives per query
    Sample(SampleArgs),
    /// Score passages of a run with a passage scorer
    Score(ScoreArgs),
    /// Rerank a run from aggregated passage scores
    Rerank(RerankArgs),
    /// Compute effectiveness metrics
    Evaluate(EvaluateArgs),
    /// Paired t-test between two runs
    Compare(CompareArgs),
    /// Assign queries to cross-validation folds
    Folds(FoldsArgs),
    /// Time per-query scoring and aggregation
    Bench(BenchArgs),
    /// Deterministic test scorer speaking the scorer protocol
    #[command(hide = true)]
    StubScorer(StubArgs),
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Build an index snapshot from a corpus
    Build(IndexBuildArgs),
}

#[derive(Debug, Args)]
pub struct IndexBuildArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "trec_text", value_parser = ["trec_text", "msmarco_tsv", "jsonl"])]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop English stopwords
    #[arg(long)]
    pub stopwords: bool,
    /// Apply the English Snowball stemmer
    #[arg(long)]
    pub stem: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "ql", value_parser = ["ql", "bm25"])]
    pub model: String,
    #[arg(long, default_value_t = passrank::index::DEFAULT_MU)]
    pub mu: f64,
    #[arg(long, default_value_t = passrank::index::DEFAULT_K1)]
    pub k1: f64,
    #[arg(long, default_value_t = passrank::index::DEFAULT_B)]
    pub b: f64,
    #[arg(long, default_value_t = 1000)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Run tag [default: the model name]
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long)]
    pub run_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ChunkArgs {
    /// sentence100, window150-75 or sentences
    #[arg(long, default_value = "sentence100")]
    pub policy: String,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "trec_text", value_parser = ["trec_text", "msmarco_tsv", "jsonl"])]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ScorerArgs {
    /// lexical, oracle:<path>, exec:<cmd> or tcp:<host:port>
    #[arg(long)]
    pub scorer: Option<String>,
    /// Parallel scorer connections
    #[arg(long, default_value_t = 1)]
    pub scorer_pool: usize,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    /// Index snapshot providing statistics for the lexical scorer
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long, default_value = "teacher", value_parser = ["teacher", "doc-transfer"])]
    pub policy: String,
    #[arg(long, default_value_t = passrank::scorer::DEFAULT_TAU)]
    pub tau: f64,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub passages: PathBuf,
    /// Fold specification; test-fold queries of --round are left out
    #[arg(long, requires = "round")]
    pub folds: Option<PathBuf>,
    #[arg(long, requires = "folds")]
    pub round: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, default_value = "jsonl", value_parser = ["jsonl", "tsv"])]
    pub format: String,
    #[arg(long, requires = "round")]
    pub folds: Option<PathBuf>,
    #[arg(long, requires = "folds")]
    pub round: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub passages: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub passage_scores: PathBuf,
    #[arg(long, default_value = "maxp", value_parser = ["firstp", "maxp", "sump", "avgp", "interp"])]
    pub agg: String,
    /// Passages averaged by interp
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Interp weight of the first-stage score, or auto to fit it on the
    /// validation queries of --round
    #[arg(long, default_value = "auto")]
    pub alpha: String,
    #[arg(long, default_value = "minmax", value_parser = ["minmax", "zscore"])]
    pub normalize: String,
    /// Judgments; enables the report of all aggregations
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long, requires = "round")]
    pub folds: Option<PathBuf>,
    #[arg(long, requires = "folds")]
    pub round: Option<usize>,
    /// Run tag [default: passrank-<agg>]
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "fold_run")]
    pub run: Option<PathBuf>,
    /// Run of one cross-validation round, in round order; needs --folds
    #[arg(long, requires = "folds", conflicts_with = "run")]
    pub fold_run: Vec<PathBuf>,
    #[arg(long)]
    pub folds: Option<PathBuf>,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value = "map,p20,ndcg20")]
    pub metrics: String,
    #[arg(long, default_value = "exp", value_parser = ["exp", "lin"])]
    pub gain: String,
    /// CSV of per-query values
    #[arg(long)]
    pub per_query: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub run_a: PathBuf,
    #[arg(long)]
    pub run_b: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value = "map")]
    pub metric: String,
    #[arg(long, default_value = "exp", value_parser = ["exp", "lin"])]
    pub gain: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Number of comparisons for the Bonferroni correction
    #[arg(long, default_value_t = 1)]
    pub bonferroni: usize,
}

#[derive(Debug, Args)]
pub struct FoldsArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub passages: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "maxp", value_parser = ["firstp", "maxp", "sump", "avgp", "interp"])]
    pub agg: String,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// CSV of per-query milliseconds
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StubArgs {
    /// Listen on this address instead of serving stdin/stdout
    #[arg(long)]
    pub tcp: Option<String>,
}

fn override_self(cmd: clap::Command) -> clap::Command {
    cmd.args_override_self(true).mut_subcommands(override_self)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args_os()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let mut root = override_self(Cli::command());
    root.build();

    let argv = match config::config_path(&argv) {
        Some(path) => {
            let injected = std::fs::read_to_string(&path)
                .map_err(|e| format!("cannot read config {path}: {e}"))
                .and_then(|text| config::parse(&text))
                .and_then(|cfg| config::inject(&argv, &cfg, &root));
            match injected {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("error: config {path}: {e}");
                    return ExitCode::from(2);
                }
            }
        }
        None => argv,
    };

    let matches = match root.try_get_matches_from_mut(&argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }

    match commands::run(cli, &root, &matches, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
