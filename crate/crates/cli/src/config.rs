//! Pipeline configuration: a sectioned TOML file, dotted command-line overrides and named sub-seeds.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use extremo::backtest::HoldPolicy;
use extremo::features::{LabelMode, Task};
use extremo::fusion_eval::FusionMode;
use extremo::indicators::IndicatorConfig;
use extremo::svm::{KernelSpec, WorkingSet};
use extremo_neural::{FocalLossParams, LossKind, ModelSpec, ParallelCnnSpec, SequentialCnnSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub task: Task,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub labels: LabelConfig,
    pub indicators: IndicatorConfig,
    pub features: FeatureConfig,
    pub svm: SvmConfig,
    pub twitter: TwitterConfig,
    pub fusion: FusionConfig,
    pub evaluate: EvaluateConfig,
    pub backtest: BacktestConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            task: Task::Up5,
            output_dir: PathBuf::from("output"),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            labels: LabelConfig::default(),
            indicators: IndicatorConfig::default(),
            features: FeatureConfig::default(),
            svm: SvmConfig::default(),
            twitter: TwitterConfig::default(),
            fusion: FusionConfig::default(),
            evaluate: EvaluateConfig::default(),
            backtest: BacktestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub btc: PathBuf,
    pub eth: PathBuf,
    pub gold: PathBuf,
    /// Binary embedding file; only the Twitter models need it.
    pub embeddings: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            btc: PathBuf::from("btc.csv"),
            eth: PathBuf::from("eth.csv"),
            gold: PathBuf::from("gold.csv"),
            embeddings: PathBuf::from("embeddings.pbem"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// First label date of the test period.
    pub test_start: NaiveDate,
    /// Last label date used for training; defaults to the day before `test_start`.
    pub train_end: Option<NaiveDate>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_start: NaiveDate::from_ymd_opt(2020, 6, 1).expect("valid date"),
            train_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub mode: LabelMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Days per TA input window.
    pub window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { window: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    Polynomial,
    Linear,
}

impl KernelKind {
    pub fn spec(self, gamma: f64, degree: u32, coef0: f64) -> KernelSpec {
        match self {
            KernelKind::Rbf => KernelSpec::Rbf { gamma },
            KernelKind::Polynomial => KernelSpec::Polynomial { degree, gamma, coef0 },
            KernelKind::Linear => KernelSpec::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub kernel: KernelKind,
    pub degree: u32,
    pub coef0: f64,
    pub c_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub folds: usize,
    pub tol: f64,
    pub max_passes: usize,
    pub working_set: WorkingSet,
}

impl Default for SvmConfig {
    fn default() -> Self {
        let grid = extremo::svm::Grid::default();
        Self {
            kernel: KernelKind::Rbf,
            degree: 3,
            coef0: 0.0,
            c_grid: grid.c,
            gamma_grid: grid.gamma,
            folds: 4,
            tol: 1e-3,
            max_passes: 1_000_000,
            working_set: WorkingSet::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Parallel,
    Sequential,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Parallel => "parallel",
            Architecture::Sequential => "sequential",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    /// Focal for the 5% tasks, cross-entropy for the 2% tasks.
    Auto,
    Bce,
    Focal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParallelLayout {
    pub filter_heights: Vec<usize>,
    pub n_filters: usize,
    pub dense: Vec<usize>,
    /// Adam weight decay; unset means none.
    pub weight_decay: Option<f64>,
}

impl Default for ParallelLayout {
    fn default() -> Self {
        let d = ParallelCnnSpec::default();
        Self {
            filter_heights: d.filter_heights,
            n_filters: d.n_filters,
            dense: d.dense,
            weight_decay: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequentialLayout {
    pub kernels: Vec<usize>,
    pub channels: Vec<usize>,
    pub pool: usize,
    pub dense: Vec<usize>,
    /// Adam weight decay; unset picks 0.0005 for the 5% tasks and 0.001 for the 2% tasks.
    pub weight_decay: Option<f64>,
}

impl Default for SequentialLayout {
    fn default() -> Self {
        let d = SequentialCnnSpec::default();
        Self {
            kernels: d.kernels,
            channels: d.channels,
            pool: d.pool,
            dense: d.dense,
            weight_decay: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwitterConfig {
    /// Width every embedding file must declare.
    pub embedding_dim: usize,
    /// Slice count every stack is zero-padded to.
    pub max_slices: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub lr: f64,
    pub loss: LossChoice,
    pub focal_alpha: Option<f64>,
    pub focal_gamma: f64,
    /// Folds used for the held-out probabilities that train the fusion stage.
    pub oof_folds: usize,
    pub parallel: ParallelLayout,
    pub sequential: SequentialLayout,
}

impl Default for TwitterConfig {
    fn default() -> Self {
        Self {
            embedding_dim: extremo::embeddings_io::EMBEDDING_DIM,
            max_slices: extremo::embeddings_io::DEFAULT_MAX_SLICES,
            dropout: 0.5,
            max_epochs: 50,
            patience: 5,
            batch_size: 32,
            val_fraction: 0.1,
            lr: 1e-3,
            loss: LossChoice::Auto,
            focal_alpha: Some(0.12),
            focal_gamma: 1.0,
            oof_folds: 4,
            parallel: ParallelLayout::default(),
            sequential: SequentialLayout::default(),
        }
    }
}

impl TwitterConfig {
    pub fn model_spec(&self, arch: Architecture, dim: usize) -> ModelSpec {
        match arch {
            Architecture::Parallel => ModelSpec::Parallel(ParallelCnnSpec {
                max_slices: self.max_slices,
                dim,
                filter_heights: self.parallel.filter_heights.clone(),
                n_filters: self.parallel.n_filters,
                dense: self.parallel.dense.clone(),
                dropout: self.dropout,
            }),
            Architecture::Sequential => ModelSpec::Sequential(SequentialCnnSpec {
                height: self.max_slices,
                width: dim,
                kernels: self.sequential.kernels.clone(),
                channels: self.sequential.channels.clone(),
                pool: self.sequential.pool,
                dense: self.sequential.dense.clone(),
                dropout: self.dropout,
            }),
        }
    }

    pub fn loss_for(&self, task: Task) -> LossKind {
        let focal = LossKind::Focal(FocalLossParams {
            alpha: self.focal_alpha,
            gamma: self.focal_gamma,
        });
        match self.loss {
            LossChoice::Bce => LossKind::Bce,
            LossChoice::Focal => focal,
            LossChoice::Auto if task.spec().theta >= 0.05 => focal,
            LossChoice::Auto => LossKind::Bce,
        }
    }

    pub fn weight_decay_for(&self, arch: Architecture, task: Task) -> f64 {
        match arch {
            Architecture::Parallel => self.parallel.weight_decay.unwrap_or(0.0),
            Architecture::Sequential => {
                self.sequential
                    .weight_decay
                    .unwrap_or(if task.spec().theta >= 0.05 { 0.0005 } else { 0.001 })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Logistic,
    Svm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub model: FusionKind,
    pub mode: FusionMode,
    /// Which Twitter model feeds the fusion stage.
    pub twitter: Architecture,
    pub l2: f64,
    pub max_iter: usize,
    pub svm_kernel: KernelKind,
    pub svm_c: f64,
    pub svm_gamma: f64,
    pub svm_degree: u32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            model: FusionKind::Logistic,
            mode: FusionMode::OutOfFold,
            twitter: Architecture::Parallel,
            l2: 1e-4,
            max_iter: 100,
            svm_kernel: KernelKind::Polynomial,
            svm_c: 500.0,
            svm_gamma: 50.0,
            svm_degree: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub thresholds: Vec<f64>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            thresholds: extremo::fusion_eval::DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    pub name: String,
    /// 1-based day counted from the test start.
    pub first_day: u64,
    pub last_day: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    /// Probability threshold for model buy signals.
    pub tau: f64,
    pub hold_policy: HoldPolicy,
    pub ma_fast: usize,
    pub ma_slow: usize,
    /// Any of buy_hold, ma_cross, ta, twitter:parallel, twitter:sequential, fusion.
    pub strategies: Vec<String>,
    pub periods: Vec<PeriodConfig>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        let period = |name: &str, first_day, last_day| PeriodConfig {
            name: name.into(),
            first_day,
            last_day,
        };
        Self {
            tau: 0.5,
            hold_policy: HoldPolicy::default(),
            ma_fast: 7,
            ma_slow: 21,
            strategies: vec!["buy_hold".into(), "ma_cross".into(), "fusion".into()],
            periods: vec![
                period("full", 1, 365),
                period("bull", 150, 350),
                period("bear", 315, 365),
            ],
        }
    }
}

impl PipelineConfig {
    /// Loads `path` (if any), applies `--section.key value` overrides, then the seed flag.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)], seed: Option<u64>) -> Result<Self, CliError> {
        let (mut table, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for (key, raw) in overrides {
            set_dotted(&mut table, key, parse_override(raw))?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {}", e.message())))?;
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.resolve_paths(&base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative paths are taken relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.output_dir,
            &mut self.data.btc,
            &mut self.data.eth,
            &mut self.data.gold,
            &mut self.data.embeddings,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        self.indicators
            .validate()
            .map_err(|e| CliError::Validation(format!("indicators: {e}")))?;
        if self.features.window == 0 {
            return bad("features.window must be at least 1".into());
        }
        if self.svm.c_grid.is_empty() || self.svm.gamma_grid.is_empty() {
            return bad("svm.c_grid and svm.gamma_grid must be non-empty".into());
        }
        if self.svm.folds < 2 {
            return bad("svm.folds must be at least 2".into());
        }
        if self.twitter.patience == 0 {
            return bad("twitter.patience must be at least 1".into());
        }
        if self.twitter.oof_folds < 2 {
            return bad("twitter.oof_folds must be at least 2".into());
        }
        let taus = &self.evaluate.thresholds;
        if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || taus.windows(2).any(|w| w[0] >= w[1]) {
            return bad("evaluate.thresholds must be strictly increasing values in (0, 1)".into());
        }
        if !(self.backtest.tau > 0.0 && self.backtest.tau < 1.0) {
            return bad(format!("backtest.tau must lie in (0, 1), got {}", self.backtest.tau));
        }
        if self.backtest.ma_fast == 0 || self.backtest.ma_fast >= self.backtest.ma_slow {
            return bad("backtest.ma_fast must be positive and below backtest.ma_slow".into());
        }
        for p in &self.backtest.periods {
            if p.first_day == 0 || p.first_day > p.last_day {
                return bad(format!("backtest period `{}` has an empty day range", p.name));
            }
        }
        for s in &self.backtest.strategies {
            crate::pipeline::ModelRef::parse_strategy(s)?;
        }
        Ok(())
    }

    /// Last label date allowed in any training set.
    pub fn train_end(&self) -> NaiveDate {
        self.split
            .train_end
            .unwrap_or(self.split.test_start - chrono::Days::new(1))
    }

    /// Deterministic per-module seed: the first 8 bytes of SHA-256 over the run seed and `name`.
    pub fn sub_seed(&self, name: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses an override as a TOML value, falling back to a plain string.
fn parse_override(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("malformed option `--{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("`{part}` in `--{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.into(), v.into())
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_by_dotted_name() {
        let cfg = PipelineConfig::load(
            None,
            &[
                ov("svm.c_grid", "[1.0, 10.0]"),
                ov("twitter.parallel.n_filters", "3"),
                ov("task", "down2"),
                ov("split.test_start", "2020-07-01"),
            ],
            Some(7),
        )
        .unwrap();
        assert_eq!(cfg.svm.c_grid, vec![1.0, 10.0]);
        assert_eq!(cfg.twitter.parallel.n_filters, 3);
        assert_eq!(cfg.task, Task::Down2);
        assert_eq!(cfg.split.test_start, NaiveDate::from_ymd_opt(2020, 7, 1).unwrap());
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            PipelineConfig::load(None, &[ov("svm.cc", "1")], None),
            Err(CliError::Validation(_))
        ));
        assert!(PipelineConfig::load(None, &[ov("nosuch", "1")], None).is_err());
    }

    #[test]
    fn per_task_defaults() {
        let t = TwitterConfig::default();
        assert!(matches!(t.loss_for(Task::Up5), LossKind::Focal(_)));
        assert_eq!(t.loss_for(Task::Down2), LossKind::Bce);
        assert_eq!(t.weight_decay_for(Architecture::Sequential, Task::Up5), 0.0005);
        assert_eq!(t.weight_decay_for(Architecture::Sequential, Task::Up2), 0.001);
        assert_eq!(t.weight_decay_for(Architecture::Parallel, Task::Up2), 0.0);
    }

    #[test]
    fn sub_seeds_differ_by_name_and_are_stable() {
        let cfg = PipelineConfig::default();
        assert_ne!(cfg.sub_seed("svm"), cfg.sub_seed("twitter"));
        assert_eq!(cfg.sub_seed("svm"), PipelineConfig::default().sub_seed("svm"));
    }
}
