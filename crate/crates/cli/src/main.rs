use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lat_cli::commands::{self, EvalTarget, ExportSpec};
use lat_cli::Result;
use lat_core::{Execution, TaskKind};

#[derive(Parser)]
#[command(
    name = "lat",
    version,
    about = "Length-adaptive transformer: train, search, evaluate"
)]
struct Cli {
    /// Run per-example work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Sequence,
    Span,
}

#[derive(Subcommand)]
enum Command {
    /// Supervised training followed by LengthDrop training.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evolutionary search for the accuracy/FLOPs frontier.
    Search {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a split at full length, explicit lengths, or a FLOPs budget.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma-separated sequence lengths, one per layer.
        #[arg(long, value_delimiter = ',', conflicts_with = "budget")]
        lengths: Option<Vec<usize>>,
        #[arg(long, requires = "frontier")]
        budget: Option<u64>,
        /// `frontier.json` written by `search`.
        #[arg(long)]
        frontier: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form FLOPs breakdown as JSON.
    Flops {
        #[arg(long, conflicts_with = "config")]
        checkpoint: Option<PathBuf>,
        /// Training config to take the model shape from.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        /// Real input length; defaults to the model's maximum.
        #[arg(long)]
        n_actual: Option<usize>,
    },
    /// Time inference under several length configurations.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated lengths; repeat the flag for more configurations.
        #[arg(long)]
        lengths: Vec<String>,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset as JSONL splits.
    ExportData {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        min_len: usize,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        #[arg(long, default_value_t = 32)]
        vocab: usize,
        #[arg(long, default_value_t = 0.1)]
        validation_frac: f64,
        #[arg(long, default_value_t = 0.1)]
        test_frac: f64,
    },
}

fn parse_lengths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| lat_cli::CliError::Usage(format!("invalid length `{p}` in `{s}`")))
        })
        .collect()
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Train { config, data, out } => {
            let o = commands::cmd_train(&config, &data, &out, exec)?;
            println!("{}", o.checkpoint.display());
        }
        Command::Search {
            checkpoint,
            data,
            config,
            out,
        } => {
            let o = commands::cmd_search(&checkpoint, &data, &config, &out, exec)?;
            print_json(&o.summary)?;
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            lengths,
            budget,
            frontier,
            out,
        } => {
            let target = match (lengths, budget, frontier) {
                (Some(l), None, _) => EvalTarget::Lengths(l),
                (None, Some(flops), Some(frontier)) => EvalTarget::Budget { flops, frontier },
                _ => EvalTarget::Full,
            };
            let r = commands::cmd_eval(&checkpoint, &data, &split, target, out.as_deref(), exec)?;
            print_json(&r)?;
        }
        Command::Flops {
            checkpoint,
            config,
            lengths,
            n_actual,
        } => {
            let cfg = commands::load_model_config(checkpoint.as_deref(), config.as_deref())?;
            print_json(&commands::cmd_flops(&cfg, lengths, n_actual)?)?;
        }
        Command::Bench {
            checkpoint,
            lengths,
            batch,
            warmup,
            repeats,
            out,
        } => {
            let lengths = lengths
                .iter()
                .map(|s| parse_lengths(s))
                .collect::<Result<Vec<_>>>()?;
            let r = commands::cmd_bench(
                &checkpoint,
                &lengths,
                batch,
                warmup,
                repeats,
                out.as_deref(),
            )?;
            print!("{}", r.to_csv());
            if let Some(rho) = r.spearman {
                println!("spearman,{rho}");
            }
        }
        Command::ExportData {
            task,
            out,
            seed,
            count,
            min_len,
            max_len,
            vocab,
            validation_frac,
            test_frac,
        } => {
            let spec = ExportSpec {
                task: match task {
                    Task::Sequence => TaskKind::SequenceClassification,
                    Task::Span => TaskKind::SpanExtraction,
                },
                seed,
                count,
                len_range: (min_len, max_len),
                vocab_size: vocab,
                validation_frac,
                test_frac,
            };
            for p in commands::cmd_export_data(&spec, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
