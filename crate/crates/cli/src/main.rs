//! `pfme` — detect and edit fine-grained hallucinations in documents,
//! score predictions, warm the evidence cache, and run ablation sweeps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pfme_cli::config::{resolve, FlagOverrides};
use pfme_cli::{commands, AppError};

#[derive(Parser)]
#[command(
    name = "pfme",
    version,
    about = "Progressive fine-grained hallucination detection and editing",
    long_about = "Retrieves factual evidence for a document, classifies each sentence into one \
of six fine-grained hallucination types via a staged decision tree, applies type-specific \
edits progressively, and scores detection quality with per-type, overall, and binary F1.\n\n\
Exit codes: 0 success, 2 usage/config error, 3 backend failure, 4 data error."
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Args, Clone, Default)]
struct CommonFlags {
    /// Config file (TOML; string values may use ${VAR} interpolation)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Evidence chunks per sentence (default 5)
    #[arg(short, long)]
    k: Option<usize>,

    /// Ranking method
    #[arg(long, value_parser = ["ret", "nlp", "fus", "rnd"])]
    method: Option<String>,

    /// Retrieval granularity
    #[arg(long, value_parser = ["document", "sentence"])]
    level: Option<String>,

    /// Evidence chunk size in whitespace tokens (default 600 document / 300 sentence)
    #[arg(long)]
    chunk_size: Option<usize>,

    /// Edit mode
    #[arg(long, value_parser = ["standard", "factscore"])]
    mode: Option<String>,

    /// Sentence splitter
    #[arg(long, value_parser = ["rule", "model"])]
    splitter: Option<String>,

    /// Candidate pool size for two-stage ranking (default 10)
    #[arg(long)]
    candidate_pool: Option<usize>,

    /// Seed for rnd ranking and mock backends
    #[arg(long)]
    seed: Option<u64>,

    /// Evidence cache directory
    #[arg(long)]
    cache_dir: Option<PathBuf>,

    /// Hermetic mode: serve wiki requests from cache only, never the network
    #[arg(long)]
    fixtures: bool,

    /// Parallel workers (documents / sweep grid points)
    #[arg(long)]
    jobs: Option<usize>,

    /// Include full decision traces in detect output
    #[arg(long)]
    emit_traces: bool,

    /// OA aggregation
    #[arg(long, value_parser = ["weighted", "micro"])]
    oa_average: Option<String>,
}

impl CommonFlags {
    fn overrides(&self) -> FlagOverrides {
        FlagOverrides {
            k: self.k,
            method: self.method.clone(),
            level: self.level.clone(),
            chunk_size: self.chunk_size,
            mode: self.mode.clone(),
            splitter: self.splitter.clone(),
            candidate_pool: self.candidate_pool,
            seed: self.seed,
            cache_dir: self.cache_dir.clone(),
            fixtures: self.fixtures,
            jobs: self.jobs,
            emit_traces: self.emit_traces,
            oa_average: self.oa_average.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Commands {
    /// Classify each sentence of the input documents (annotated JSONL out)
    Detect {
        /// Input: plain-text file or JSONL of {"id","passage"}
        input: PathBuf,
        /// Output JSONL path ("-" for stdout)
        #[arg(short, long, default_value = "-")]
        output: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Detect and apply edits, emitting edited plain text per document
    Edit {
        input: PathBuf,
        #[arg(short, long, default_value = "-")]
        output: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Score predicted annotations against gold
    Evaluate {
        /// Gold JSONL of {"id","gold_annotated"}
        gold: PathBuf,
        /// Predictions JSONL of {"id","annotated"} (detect output)
        pred: PathBuf,
        /// Editor label for the report row
        #[arg(long)]
        label: Option<String>,
        /// Also write the report as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write the report as JSON
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Warm the wiki evidence cache for the input documents
    RetrieveCache {
        input: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Ablation sweep over k × method × level, emitting CSV
    Sweep {
        /// Dataset JSONL of {"id","gold_annotated"}
        dataset: PathBuf,
        /// Evidence counts, e.g. "1-10" or "1,3,5"
        #[arg(long, default_value = "1-10")]
        ks: String,
        /// Comma-separated ranking methods
        #[arg(long, default_value = "ret")]
        methods: String,
        /// Comma-separated retrieval levels
        #[arg(long, default_value = "document")]
        levels: String,
        /// Output CSV path ("-" for stdout)
        #[arg(short, long, default_value = "-")]
        output: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
}

fn run() -> Result<(), AppError> {
    let cli = Cli::parse();
    match cli.command {
        Commands::Detect { input, output, flags } => {
            let config = resolve(flags.config.as_deref(), &flags.overrides())?;
            commands::cmd_detect(config, &input, &output)
        }
        Commands::Edit { input, output, flags } => {
            let config = resolve(flags.config.as_deref(), &flags.overrides())?;
            commands::cmd_edit(config, &input, &output)
        }
        Commands::Evaluate {
            gold,
            pred,
            label,
            csv,
            json,
            flags,
        } => {
            let config = resolve(flags.config.as_deref(), &flags.overrides())?;
            commands::cmd_evaluate(
                config,
                &gold,
                &pred,
                label.as_deref(),
                csv.as_deref(),
                json.as_deref(),
            )
            .map(|_| ())
        }
        Commands::RetrieveCache { input, flags } => {
            let config = resolve(flags.config.as_deref(), &flags.overrides())?;
            commands::cmd_retrieve_cache(config, &input)
        }
        Commands::Sweep {
            dataset,
            ks,
            methods,
            levels,
            output,
            flags,
        } => {
            let config = resolve(flags.config.as_deref(), &flags.overrides())?;
            commands::cmd_sweep(config, &dataset, &ks, &methods, &levels, &output)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
