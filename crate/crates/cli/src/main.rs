use clap::{Args, Parser, Subcommand};
use maxk_core::certify::brute::{brute_force, BruteOptions, DEFAULT_MAX_SEQUENCES};
use maxk_core::certify::{Certificate, Strategy};
use maxk_core::metrics::interpretation_stats;
use maxk_core::model::ModelParams;
use maxk_core::par::{with_threads, Exec};
use maxk_core::report::{model_files, run_strategy, sweep, write_sweep, SweepOptions};
use maxk_core::tensor::FlopTrace;
use maxk_core::trainer::{train, TrainConfig};
use maxk_core::Error;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "maxk",
    version,
    about = "Train max-of-k transformers and certify their accuracy"
)]
struct Cli {
    /// Worker threads (defaults to MAXK_THREADS, then the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its weights plus a `.json` sidecar.
    Train(TrainArgs),
    /// Exact accuracy by brute force.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_SEQUENCES)]
        max_sequences: u128,
    },
    /// Certificate from a single strategy.
    Certify(CertifyArgs),
    /// Every model in a directory against a set of strategies, as CSV.
    Sweep(SweepArgs),
    /// Interpretation statistics of a model.
    Stats {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    d_vocab: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    n_ctx: usize,
    #[arg(long, default_value_t = 3000)]
    steps: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// `brute`, `cubic`, `subcubic`, or a full `subcubic:eu=..,attn=..,combine=..` id.
    #[arg(long)]
    strategy: String,
    #[arg(long, default_value = "max_diff_exact")]
    eu: String,
    #[arg(long, default_value = "exact_EQKE+max_diff_exact")]
    attn: String,
    /// `on`, `off`, or a full combine name.
    #[arg(long, default_value = "on")]
    combine: String,
    #[arg(long, default_value_t = DEFAULT_MAX_SEQUENCES)]
    max_sequences: u128,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    models_dir: PathBuf,
    /// Brute force, cubic and all 100 subcubic configurations.
    #[arg(long, conflicts_with = "strategy")]
    all_strategies: bool,
    /// Strategy id; repeatable.
    #[arg(long)]
    strategy: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_SEQUENCES)]
    max_sequences: u128,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::UnknownStrategy(_) => 3,
            Error::CorruptModel(_) | Error::InvalidDimensions(_) => 4,
            Error::BudgetExceeded { .. } => 5,
            _ => 1,
        };
        Failure { code, error }
    }
}

fn load_model(path: &Path) -> Result<ModelParams, Failure> {
    ModelParams::load(path).map_err(|error| Failure { code: 4, error })
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(value).map_err(Error::from)?);
    Ok(())
}

fn parse_strategy(args: &CertifyArgs) -> Result<Strategy, Error> {
    if args.strategy == "subcubic" {
        format!("subcubic:eu={},attn={},combine={}", args.eu, args.attn, args.combine).parse()
    } else {
        args.strategy.parse()
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::Train(a) => {
            let config = TrainConfig {
                seed: a.seed,
                d_vocab: a.d_vocab,
                d_model: a.d_model,
                n_ctx: a.n_ctx,
                steps: a.steps,
                batch_size: a.batch_size,
                lr: a.lr,
                weight_decay: a.weight_decay,
                ..TrainConfig::default()
            };
            let trained = train(&config)?;
            trained.params.save(&a.out)?;
            trained.meta.save(&a.out)?;
            print_json(&trained.meta)
        }
        Command::Verify { model, max_sequences } => {
            let params = load_model(&model)?;
            let cert = brute_force(&params, BruteOptions { exec, max_sequences })?;
            print_json(&cert)
        }
        Command::Certify(a) => {
            let strategy = parse_strategy(&a)?;
            let params = load_model(&a.model)?;
            let cert: Certificate = run_strategy(&params, &strategy, exec, a.max_sequences)?;
            print_json(&cert)
        }
        Command::Sweep(a) => {
            let strategies = if a.all_strategies {
                Strategy::all()
            } else if a.strategy.is_empty() {
                return Err(Error::InvalidConfig("pass --all-strategies or at least one --strategy".into()).into());
            } else {
                a.strategy.iter().map(|s| s.parse()).collect::<Result<Vec<_>, _>>()?
            };
            let models = model_files(&a.models_dir)?;
            for m in &models {
                load_model(m)?;
            }
            let rows = sweep(
                &models,
                &strategies,
                SweepOptions {
                    exec,
                    max_sequences: a.max_sequences,
                },
            )?;
            write_sweep(&a.out, &rows)?;
            eprintln!("wrote {} rows to {}", rows.len(), a.out.display());
            Ok(())
        }
        Command::Stats { model } => {
            let params = load_model(&model)?;
            let paths = params.decompose_paths(&mut FlopTrace::new())?;
            print_json(&interpretation_stats(&paths)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    match with_threads(threads, || run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
