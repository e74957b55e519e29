//! `hkg`: statistics, decomposition, curvature, training and evaluation for
//! hyper-relational knowledge graphs.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 usage, 3 configuration,
//! 4 data. Failures print one `error[<category>]: <message>` line to stderr.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "hkg", version, about = "Hyper-relational knowledge graph toolkit")]
struct Cli {
    /// Worker threads for data-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset statistics as JSON (stdout) plus a table (stderr).
    Stats(StatsArgs),
    /// Convert hyper-relational facts to plain triples.
    Decompose(DecomposeArgs),
    /// Balanced Forman curvature of every edge of a triple file.
    Curvature(CurvatureArgs),
    /// Train a link predictor and write a checkpoint.
    Train(TrainArgs),
    /// Filtered-ranking evaluation of a checkpoint.
    Eval(EvalArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FormatArg {
    Tsv,
    Json,
}

impl From<FormatArg> for hkg_core::ingest::Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tsv => hkg_core::ingest::Format::Tsv,
            FormatArg::Json => hkg_core::ingest::Format::Json,
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory holding train/valid/test files.
    #[arg(long, conflicts_with_all = ["train", "valid", "test"])]
    data: Option<PathBuf>,
    #[arg(long, requires_all = ["valid", "test"])]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Input format; guessed from the extension when absent.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// TOML or JSON file of expected counts; any difference fails with exit 4.
    #[arg(long)]
    expect: Option<PathBuf>,
    /// Also write the JSON document here (with a manifest).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long, value_parser = parse_method)]
    method: hkg_core::decompose::Method,
    /// Directory holding train/valid/test files.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args, Debug)]
struct CurvatureArgs {
    /// Triple file (`s<TAB>r<TAB>o`), or a decomposition directory (its train split is used).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write `(rank, ric)` pairs in ascending curvature order.
    #[arg(long)]
    distribution: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_model)]
    model: hkg_core::models::ModelKind,
    /// Decomposition for triple models; FormerGNN accepts only `prune` or nothing.
    #[arg(long, value_parser = parse_method)]
    decompose: Option<hkg_core::decompose::Method>,
    /// TOML training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch trace CSV (default: `<out>.trace.csv`).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Config override `key=value`, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_method(s: &str) -> Result<hkg_core::decompose::Method, String> {
    s.parse().map_err(|e: hkg_core::HkgError| e.to_string())
}

fn parse_model(s: &str) -> Result<hkg_core::models::ModelKind, String> {
    s.parse().map_err(|e: hkg_core::HkgError| e.to_string())
}

fn init_threads(threads: Option<usize>) -> CliResult<usize> {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            if n == 0 {
                return Err(CliError::new(error::Category::Usage, "--threads must be positive"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::new(error::Category::Internal, e.to_string()))?;
        }
        Ok(rayon::current_num_threads())
    }
    #[cfg(not(feature = "parallel"))]
    {
        if threads.is_some_and(|n| n > 1) {
            log::warn!("built without the `parallel` feature; --threads is ignored");
        }
        Ok(1)
    }
}

fn run(argv: &[String]) -> CliResult<()> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            let rendered = e.render().to_string();
            let body = rendered.strip_prefix("error: ").unwrap_or(&rendered);
            let (first, rest) = body.split_once('\n').unwrap_or((body, ""));
            let mut detail = rest.trim_matches('\n').to_string();
            if !detail.contains("Usage:") {
                use clap::CommandFactory;
                detail = format!("{}\n{detail}", Cli::command().render_usage());
            }
            let mut err = CliError::new(error::Category::Usage, first);
            err.detail = Some(detail);
            return Err(err);
        }
    };
    let threads = init_threads(cli.threads)?;
    let ctx = commands::Context { argv, threads };
    match cli.command {
        Command::Stats(a) => commands::stats::run(&ctx, a),
        Command::Decompose(a) => commands::decompose::run(&ctx, a),
        Command::Curvature(a) => commands::curvature::run(&ctx, a),
        Command::Train(a) => commands::train::run(&ctx, a),
        Command::Eval(a) => commands::eval::run(&ctx, a),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let argv: Vec<String> = std::env::args().collect();
    if let Err(e) = run(&argv) {
        eprintln!("{e}");
        if let Some(detail) = &e.detail {
            eprintln!("{detail}");
        }
        std::process::exit(e.category.exit_code());
    }
}
