//! Pipeline driver for next-day extreme-move prediction: market data ingestion, technical
//! features, TA SVM and Twitter CNN training, probability fusion, evaluation and backtesting.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod synthetic;
pub mod workspace;

use std::path::PathBuf;

pub use config::{Architecture, PipelineConfig};
pub use error::CliError;
pub use pipeline::ModelRef;

/// One subcommand with its own arguments.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Ingest,
    Features,
    Label,
    Train(ModelRef),
    Evaluate(Vec<ModelRef>),
    SweepThreshold(Vec<ModelRef>),
    Backtest,
    Report,
    /// Every step in order, training the TA model, the configured Twitter model and fusion.
    All,
}

/// Everything a run needs besides the command itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Invocation {
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub seed: Option<u64>,
}

/// Runs one command; returns the tables worth showing on the console (empty for silent steps).
pub fn run(command: &Command, inv: &Invocation) -> Result<String, CliError> {
    let cfg = PipelineConfig::load(inv.config.as_deref(), &inv.overrides, inv.seed)?;
    run_with(command, &cfg)
}

pub fn run_with(command: &Command, cfg: &PipelineConfig) -> Result<String, CliError> {
    let silent = |r: Result<(), CliError>| r.map(|()| String::new());
    match command {
        Command::Ingest => silent(pipeline::cmd_ingest(cfg)),
        Command::Features => silent(pipeline::cmd_features(cfg)),
        Command::Label => silent(pipeline::cmd_label(cfg)),
        Command::Train(ModelRef::Ta) => silent(pipeline::cmd_train_ta(cfg)),
        Command::Train(ModelRef::Twitter(arch)) => silent(pipeline::cmd_train_twitter(cfg, *arch)),
        Command::Train(ModelRef::Fusion) => silent(pipeline::cmd_train_fusion(cfg)),
        Command::Evaluate(models) => pipeline::cmd_evaluate(cfg, models),
        Command::SweepThreshold(models) => pipeline::cmd_sweep(cfg, models),
        Command::Backtest => pipeline::cmd_backtest(cfg).map(|(_, text)| text),
        Command::Report => silent(pipeline::cmd_report(cfg)),
        Command::All => {
            let mut console = String::new();
            for step in [
                Command::Ingest,
                Command::Features,
                Command::Train(ModelRef::Ta),
                Command::Train(ModelRef::Twitter(cfg.fusion.twitter)),
                Command::Train(ModelRef::Fusion),
                Command::Evaluate(Vec::new()),
                Command::SweepThreshold(Vec::new()),
                Command::Backtest,
                Command::Report,
            ] {
                log::info!("running {step:?}");
                console.push_str(&run_with(&step, cfg)?);
            }
            Ok(console)
        }
    }
}

/// `(key, raw value)` pairs given as `--section.key value`.
pub type Overrides = Vec<(String, String)>;

/// Splits `--section.key value` and `--section.key=value` pairs out of `args`.
/// Returns the remaining arguments and the overrides in order.
pub fn split_overrides(args: &[String]) -> Result<(Vec<String>, Overrides), CliError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        match a.strip_prefix("--") {
            Some(key) if key.split('=').next().is_some_and(|k| k.contains('.')) => {
                if let Some((k, v)) = key.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else {
                    let v = args
                        .get(i + 1)
                        .ok_or_else(|| CliError::Validation(format!("option `{a}` needs a value")))?;
                    overrides.push((key.to_string(), v.clone()));
                    i += 1;
                }
            }
            _ => rest.push(a.clone()),
        }
        i += 1;
    }
    Ok((rest, overrides))
}
