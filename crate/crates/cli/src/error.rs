//! Error type shared by all subcommands and its exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, bad input data, or a failed invariant.
    #[error("{0}")]
    Validation(String),
    /// A prerequisite artifact or input is missing.
    #[error("missing prerequisite: {0}")]
    Dependency(String),
    /// An upstream module failed.
    #[error("{module}: {message}")]
    Module { module: &'static str, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Dependency(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

macro_rules! module_error {
    ($($ty:ty => $name:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Module { module: $name, message: e.to_string() }
            }
        })*
    };
}

module_error! {
    extremo::market_data::MarketDataError => "market_data",
    extremo::indicators::IndicatorError => "indicators",
    extremo::features::FeatureError => "features",
    extremo::svm::SvmError => "svm",
    extremo::embeddings_io::EmbeddingError => "embeddings_io",
    extremo::fusion_eval::FusionError => "fusion_eval",
    extremo::backtest::BacktestError => "backtest",
    extremo_neural::NeuralError => "neural",
    csv::Error => "csv",
    serde_json::Error => "json",
}
