//! `hybridq`: build, train, query and benchmark a hybrid vector-scalar
//! engine stored in a directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "hybridq", version, about = "Hybrid vector-scalar query engine with a learned optimizer")]
struct Cli {
    /// TOML key-value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every randomized step (index build, training, generation).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DbArg {
    /// Engine directory.
    #[arg(long, value_name = "DIR")]
    db: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a table into an engine directory.
    Ingest(IngestArgs),
    /// Scalar statistics.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Vector indexes.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Encoder and optimizer training.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Generate a benchmark workload and its ground truth.
    Benchgen(BenchgenArgs),
    /// Run one query written in the SQL dialect.
    Query(QueryArgs),
    /// Evaluate a workload against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    db: DbArg,
    /// A saved table directory (schema.json, scalars.csv, one .fvecs per column).
    #[arg(long, value_name = "DIR", conflicts_with_all = ["schema", "scalars", "vector"])]
    table_dir: Option<PathBuf>,
    /// Table schema as JSON.
    #[arg(long, value_name = "FILE", requires = "scalars")]
    schema: Option<PathBuf>,
    /// Scalar CSV with an `id` column plus one column per scalar.
    #[arg(long, value_name = "FILE")]
    scalars: Option<PathBuf>,
    /// Vector column data as NAME=FILE.fvecs; repeat per column.
    #[arg(long, value_name = "NAME=FILE")]
    vector: Vec<String>,
    /// Insert into an existing engine instead of creating a new one.
    #[arg(long)]
    append: bool,
}

#[derive(Subcommand, Debug)]
enum StatsCommand {
    /// Build histograms for every scalar column.
    Build {
        #[command(flatten)]
        db: DbArg,
        /// Bins per numeric histogram (defaults to the engine setting).
        #[arg(long)]
        bins: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum IndexCommand {
    /// Build one graph index per vector column.
    Build {
        #[command(flatten)]
        db: DbArg,
    },
}

#[derive(Subcommand, Debug)]
enum TrainCommand {
    /// Train the correlation encoder.
    Encoder {
        #[command(flatten)]
        db: DbArg,
        /// Fine-tune on rows inserted since the last training instead.
        #[arg(long)]
        incremental: bool,
    },
    /// Label sampled queries and train the plan and parameter models.
    Optimizer {
        #[command(flatten)]
        db: DbArg,
        /// Number of training queries to sample and label.
        #[arg(long, default_value_t = 500)]
        queries: usize,
        /// TOML file describing the parameter grid.
        #[arg(long, value_name = "FILE")]
        grid: Option<PathBuf>,
        /// Also write the labeled examples as CSV.
        #[arg(long, value_name = "FILE")]
        examples: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct BenchgenArgs {
    /// Benchmark spec (TOML with `table` and `workload` sections).
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Generate queries over this engine's table instead of a synthetic one.
    #[arg(long, value_name = "DIR")]
    db: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[command(flatten)]
    db: DbArg,
    /// Run a fixed configuration, e.g. `sequential` or
    /// `decomposed[lambda=2 ef=128 mode=strict max_scan=2k]`.
    #[arg(long, value_name = "CONFIG")]
    plan: Option<String>,
    /// Print the chosen plan and parameters.
    #[arg(long)]
    explain: bool,
    /// Query text; `-` reads standard input.
    sql: String,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    db: DbArg,
    /// Workload file written by `benchgen`.
    #[arg(long, value_name = "FILE")]
    workload: PathBuf,
    /// Ground-truth CSV; computed by full scan when omitted.
    #[arg(long, value_name = "FILE")]
    ground_truth: Option<PathBuf>,
    /// Static configuration to compare against.
    #[arg(long, value_name = "CONFIG")]
    baseline: Option<String>,
    /// Evaluate this static configuration instead of the learned planner.
    #[arg(long, value_name = "CONFIG", conflicts_with = "baseline")]
    plan: Option<String>,
    /// Timed runs per query; the median latency is reported.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Skip the untimed warm-up pass.
    #[arg(long)]
    no_warmup: bool,
    /// Write the per-query CSV here instead of standard output.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Also measure multi-threaded throughput with this many workers.
    #[arg(long, value_name = "N")]
    throughput_threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
