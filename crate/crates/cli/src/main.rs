use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use extremo_cli::{run, split_overrides, synthetic, CliError, Command, Invocation, ModelRef};

/// Next-day extreme-move prediction pipeline.
///
/// Any configuration key can be overridden with `--section.key value`, for example
/// `--svm.folds 5` or `--backtest.tau 0.95`.
#[derive(Debug, Parser)]
#[command(name = "extremo", version)]
struct Args {
    /// TOML configuration file; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; every module derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Load and align the BTC, ETH and gold series.
    Ingest,
    /// Compute indicators, normalized features, correlations and labels.
    Features,
    /// Recompute the label files and class distribution.
    Label,
    /// Train one model: ta, twitter:parallel, twitter:sequential or fusion.
    Train { model: String },
    /// Score trained models on the test period.
    Evaluate {
        /// Models to evaluate; defaults to every trained model.
        #[arg(long = "model")]
        models: Vec<String>,
    },
    /// Count positives at each configured threshold.
    SweepThreshold {
        #[arg(long = "model")]
        models: Vec<String>,
    },
    /// Simulate the configured strategies over the test periods.
    Backtest,
    /// Collect the tables into report.md.
    Report,
    /// Run every step in order.
    All,
    /// Write toy data with planted signals and a matching config.toml into a directory.
    Synthetic {
        out: PathBuf,
        #[arg(long, default_value_t = 600)]
        days: usize,
        #[arg(long, default_value_t = 200)]
        test_days: usize,
    },
}

fn models(names: &[String]) -> Result<Vec<ModelRef>, CliError> {
    names.iter().map(|n| ModelRef::parse(n)).collect()
}

fn execute(argv: &[String]) -> Result<(), CliError> {
    let (rest, overrides) = split_overrides(argv)?;
    let args = Args::try_parse_from(&rest).unwrap_or_else(|e| e.exit());
    let command = match args.command {
        Sub::Synthetic { out, days, test_days } => {
            if test_days < 10 || test_days + 100 > days {
                return Err(CliError::Validation(
                    "need --test-days >= 10 and at least 100 training days".into(),
                ));
            }
            let spec = synthetic::SyntheticSpec {
                n_days: days,
                test_days,
                seed: args.seed.unwrap_or(7),
                ..synthetic::SyntheticSpec::default()
            };
            let data = synthetic::generate(&out, &spec)?;
            println!("{}", data.config.display());
            return Ok(());
        }
        Sub::Ingest => Command::Ingest,
        Sub::Features => Command::Features,
        Sub::Label => Command::Label,
        Sub::Train { model } => Command::Train(ModelRef::parse(&model)?),
        Sub::Evaluate { models: m } => Command::Evaluate(models(&m)?),
        Sub::SweepThreshold { models: m } => Command::SweepThreshold(models(&m)?),
        Sub::Backtest => Command::Backtest,
        Sub::Report => Command::Report,
        Sub::All => Command::All,
    };
    let console = run(
        &command,
        &Invocation {
            config: args.config,
            overrides,
            seed: args.seed,
        },
    )?;
    print!("{console}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    match execute(&argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
