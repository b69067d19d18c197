//! Subcommand implementations. Each reads its inputs from the configured data paths or from
//! artifacts of earlier steps and writes only into the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use extremo::backtest::{compare_strategies, format_backtest_table, Period, StrategyRun, StrategySpec};
use extremo::embeddings_io::{read_embedding_file, EmbeddingStack};
use extremo::features::{
    build_windows, class_distribution, make_labels, normalize, pearson_correlations, write_correlations, ClassCounts,
    DateSplit, FeatureFrame, LabelSet, NormalizationRules, SplitPart, Task, N_FEATURES,
};
use extremo::fusion_eval::{
    build_fusion_input, fit_fusion_svm, fit_logistic, format_report_table, sweep_thresholds, FusionMode, FusionModel,
    ProbPair, ReportRow, ThresholdSweep,
};
use extremo::indicators::compute_indicator_frame;
use extremo::market_data::{
    align_panel, load_asset_series, load_candles, read_panel, write_panel, AlignedPanel, AssetId, CandleSchema,
    DATE_FORMAT,
};
use extremo::svm::{
    grid_search, out_of_fold_decisions, sigmoid, stratified_folds, train_smo, Grid, GridSearchConfig, SvmModel,
    SvmParams,
};
use extremo_neural::{predict_batch, train, Dataset, Model, TrainConfig, TrainHistory};
use serde::{Deserialize, Serialize};

use crate::config::{Architecture, FusionKind, PipelineConfig};
use crate::error::CliError;
use crate::workspace::Workspace;

pub const PANEL: &str = "panel.csv";
pub const FEATURES: &str = "features.csv";
pub const INDICATORS: &str = "indicators.csv";
pub const CORRELATIONS: &str = "correlations.csv";
pub const DISTRIBUTION: &str = "class_distribution.json";
pub const DISTRIBUTION_TXT: &str = "class_distribution.txt";

fn labels_path(task: Task) -> String {
    format!("labels/{}.csv", task.name())
}

/// A trained model the evaluation and backtest steps can refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelRef {
    Ta,
    Twitter(Architecture),
    Fusion,
}

/// A backtest strategy named in the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyRef {
    BuyHold,
    MaCross,
    Model(ModelRef),
}

impl ModelRef {
    pub const ALL: [ModelRef; 4] = [
        ModelRef::Ta,
        ModelRef::Twitter(Architecture::Parallel),
        ModelRef::Twitter(Architecture::Sequential),
        ModelRef::Fusion,
    ];

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "ta" => Ok(ModelRef::Ta),
            "twitter:parallel" => Ok(ModelRef::Twitter(Architecture::Parallel)),
            "twitter:sequential" => Ok(ModelRef::Twitter(Architecture::Sequential)),
            "fusion" => Ok(ModelRef::Fusion),
            _ => Err(CliError::Validation(format!(
                "unknown model `{s}` (expected ta, twitter:parallel, twitter:sequential or fusion)"
            ))),
        }
    }

    pub fn parse_strategy(s: &str) -> Result<StrategyRef, CliError> {
        match s {
            "buy_hold" => Ok(StrategyRef::BuyHold),
            "ma_cross" => Ok(StrategyRef::MaCross),
            other => ModelRef::parse(other).map(StrategyRef::Model),
        }
    }

    /// Command-line spelling.
    pub fn arg(self) -> &'static str {
        match self {
            ModelRef::Ta => "ta",
            ModelRef::Twitter(Architecture::Parallel) => "twitter:parallel",
            ModelRef::Twitter(Architecture::Sequential) => "twitter:sequential",
            ModelRef::Fusion => "fusion",
        }
    }

    /// File-name stem.
    pub fn stem(self) -> &'static str {
        match self {
            ModelRef::Ta => "ta",
            ModelRef::Twitter(Architecture::Parallel) => "twitter_parallel",
            ModelRef::Twitter(Architecture::Sequential) => "twitter_sequential",
            ModelRef::Fusion => "fusion",
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            ModelRef::Ta => "TA SVM",
            ModelRef::Twitter(Architecture::Parallel) => "Twitter CNN (parallel)",
            ModelRef::Twitter(Architecture::Sequential) => "Twitter CNN (sequential)",
            ModelRef::Fusion => "Fusion",
        }
    }

    fn checkpoint(self) -> String {
        match self {
            ModelRef::Ta => "models/ta_svm.json".into(),
            ModelRef::Twitter(_) => format!("models/{}.ckpt", self.stem()),
            ModelRef::Fusion => "models/fusion.json".into(),
        }
    }

    fn meta(self) -> String {
        format!("models/{}_meta.json", self.stem())
    }

    fn predictions(self) -> String {
        format!("predictions/{}.csv", self.stem())
    }
}

fn date_str(d: NaiveDate) -> String {
    d.format(DATE_FORMAT).to_string()
}

fn check_input(key: &str, path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "{key}: file not found: {}",
            path.display()
        )))
    }
}

/// Rejects training sets that reach into the test period.
pub fn guard_training_dates<I: IntoIterator<Item = NaiveDate>>(
    dates: I,
    test_start: NaiveDate,
) -> Result<(), CliError> {
    if let Some(d) = dates.into_iter().find(|&d| d >= test_start) {
        return Err(CliError::Validation(format!(
            "test-period leakage: training would use the label dated {} (test starts {})",
            date_str(d),
            date_str(test_start)
        )));
    }
    Ok(())
}

fn check_split(cfg: &PipelineConfig) -> Result<(), CliError> {
    if cfg.train_end() >= cfg.split.test_start {
        return Err(CliError::Validation(format!(
            "test-period leakage: split.train_end {} is not before split.test_start {}",
            date_str(cfg.train_end()),
            date_str(cfg.split.test_start)
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- ingest / features / label

#[derive(Debug, Serialize)]
struct IngestSummary {
    rows: usize,
    first_date: String,
    last_date: String,
    btc_rows: usize,
    dropped_btc_rows: usize,
}

pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<(), CliError> {
    check_input("data.btc", &cfg.data.btc)?;
    check_input("data.eth", &cfg.data.eth)?;
    check_input("data.gold", &cfg.data.gold)?;
    let btc = load_candles(&cfg.data.btc, &CandleSchema::default())?;
    let eth = load_asset_series(&cfg.data.eth, AssetId::Eth)?;
    let gold = load_asset_series(&cfg.data.gold, AssetId::Gold)?;
    let panel = align_panel(&btc, &eth, &gold)?;
    let mut ws = Workspace::open(cfg, "ingest")?;
    let mut buf = Vec::new();
    write_panel(&mut buf, &panel)?;
    ws.write_bytes(PANEL, &buf)?;
    ws.write_json(
        "ingest_summary.json",
        &IngestSummary {
            rows: panel.len(),
            first_date: date_str(panel.rows[0].date()),
            last_date: date_str(panel.rows[panel.len() - 1].date()),
            btc_rows: btc.len(),
            dropped_btc_rows: btc.len() - panel.len(),
        },
    )?;
    ws.finish(cfg)?;
    Ok(())
}

fn load_panel(ws: &Workspace) -> Result<AlignedPanel, CliError> {
    Ok(read_panel(ws.read(PANEL, "extremo ingest")?.as_slice())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub task: String,
    pub train: ClassCounts,
    pub test: ClassCounts,
}

fn write_labels(cfg: &PipelineConfig, ws: &mut Workspace, panel: &AlignedPanel) -> Result<(), CliError> {
    let candles = panel.candles();
    let split = DateSplit {
        test_start: cfg.split.test_start,
    };
    let mut table = Vec::new();
    for task in Task::ALL {
        let labels = make_labels(candles.as_slice(), task.spec(), cfg.labels.mode)?;
        let mut buf = Vec::new();
        labels.write_csv(&mut buf)?;
        ws.write_bytes(&labels_path(task), &buf)?;
        let part = |p| -> Result<ClassCounts, CliError> {
            if labels.labels.iter().any(|l| split.part_of(l.date) == p) {
                Ok(class_distribution(&labels, &split, p)?)
            } else {
                Ok(ClassCounts::from_values(std::iter::empty()))
            }
        };
        table.push(TaskDistribution {
            task: task.name().into(),
            train: part(SplitPart::Train)?,
            test: part(SplitPart::Test)?,
        });
    }
    ws.write_json(DISTRIBUTION, &table)?;
    ws.write_text(DISTRIBUTION_TXT, &format_distribution(&table))?;
    Ok(())
}

fn format_distribution(table: &[TaskDistribution]) -> String {
    let header = [
        "Task",
        "Train T",
        "Train F",
        "Train T %",
        "Test T",
        "Test F",
        "Test T %",
    ];
    let body: Vec<Vec<String>> = table
        .iter()
        .map(|d| {
            vec![
                d.task.clone(),
                d.train.t.to_string(),
                d.train.f.to_string(),
                format!("{:.2}", d.train.true_ratio * 100.0),
                d.test.t.to_string(),
                d.test.f.to_string(),
                format!("{:.2}", d.test.true_ratio * 100.0),
            ]
        })
        .collect();
    extremo::fusion_eval::aligned_table(&header, &body)
}

pub fn cmd_features(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut ws = Workspace::open(cfg, "features")?;
    let panel = load_panel(&ws)?;
    let frame = compute_indicator_frame(&panel, &cfg.indicators)?;
    let mut buf = Vec::new();
    frame.write_csv(&mut buf)?;
    ws.write_bytes(INDICATORS, &buf)?;
    let features = normalize(&frame, &NormalizationRules::default())?;
    let mut buf = Vec::new();
    features.write_csv(&mut buf)?;
    ws.write_bytes(FEATURES, &buf)?;
    let mut buf = Vec::new();
    write_correlations(&mut buf, &pearson_correlations(&features)?)?;
    ws.write_bytes(CORRELATIONS, &buf)?;
    write_labels(cfg, &mut ws, &panel)?;
    ws.finish(cfg)?;
    Ok(())
}

pub fn cmd_label(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut ws = Workspace::open(cfg, "label")?;
    let panel = load_panel(&ws)?;
    write_labels(cfg, &mut ws, &panel)?;
    ws.finish(cfg)?;
    Ok(())
}

fn load_labels(ws: &Workspace, task: Task) -> Result<LabelSet, CliError> {
    Ok(LabelSet::read_csv(
        ws.read(&labels_path(task), "extremo features")?.as_slice(),
        task.spec(),
    )?)
}

fn load_features(ws: &Workspace) -> Result<FeatureFrame, CliError> {
    Ok(FeatureFrame::read_csv(
        ws.read(FEATURES, "extremo features")?.as_slice(),
    )?)
}

// ---------------------------------------------------------------- shared sample handling

/// One labelled forecast: made on `prediction_date` about the move on `label_date`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub prediction_date: NaiveDate,
    pub label_date: NaiveDate,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Train,
    Test,
}

fn part_of(cfg: &PipelineConfig, label_date: NaiveDate) -> Option<Part> {
    if label_date >= cfg.split.test_start {
        Some(Part::Test)
    } else if label_date <= cfg.train_end() {
        Some(Part::Train)
    } else {
        None
    }
}

/// Per-sample probabilities of one model, with the split each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub target: Target,
    pub test: bool,
    pub prob: f64,
}

fn write_predictions(ws: &mut Workspace, model: ModelRef, rows: &[PredictionRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["prediction_date", "label_date", "split", "label", "prob"])?;
    for r in rows {
        w.write_record([
            date_str(r.target.prediction_date),
            date_str(r.target.label_date),
            if r.test { "test".into() } else { "train".into() },
            u8::from(r.target.label).to_string(),
            r.prob.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Validation(e.to_string()))?;
    ws.write_bytes(&model.predictions(), &bytes)
}

fn read_predictions(ws: &Workspace, model: ModelRef) -> Result<Vec<PredictionRow>, CliError> {
    let bytes = ws.read(&model.predictions(), &format!("extremo train {}", model.arg()))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut out = Vec::new();
    let bad = |m: String| CliError::Validation(format!("{}: {m}", model.predictions()));
    for rec in r.records() {
        let rec = rec?;
        let date =
            |i: usize| NaiveDate::parse_from_str(rec.get(i).unwrap_or(""), DATE_FORMAT).map_err(|e| bad(e.to_string()));
        out.push(PredictionRow {
            target: Target {
                prediction_date: date(0)?,
                label_date: date(1)?,
                label: rec.get(3) == Some("1"),
            },
            test: rec.get(2) == Some("test"),
            prob: rec
                .get(4)
                .unwrap_or("")
                .parse()
                .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BaseModelMeta {
    task: String,
    /// How the training-row probabilities in the predictions file were produced.
    fusion_mode: FusionMode,
    train_samples: usize,
    test_samples: usize,
}

// ---------------------------------------------------------------- TA model

struct TaSamples {
    targets: Vec<Target>,
    x: Vec<Vec<f64>>,
}

fn ta_samples(cfg: &PipelineConfig, ws: &Workspace) -> Result<TaSamples, CliError> {
    let frame = load_features(ws)?;
    let labels = load_labels(ws, cfg.task)?;
    let windows: BTreeMap<NaiveDate, Vec<f64>> = build_windows(&frame, cfg.features.window)?
        .into_iter()
        .map(|w| (w.date, w.x))
        .collect();
    let mut targets = Vec::new();
    let mut x = Vec::new();
    for l in &labels.labels {
        if let Some(v) = windows.get(&l.prediction_date) {
            targets.push(Target {
                prediction_date: l.prediction_date,
                label_date: l.date,
                label: l.value,
            });
            x.push(v.clone());
        }
    }
    Ok(TaSamples { targets, x })
}

fn split_indices(cfg: &PipelineConfig, targets: &[Target]) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        match part_of(cfg, t.label_date) {
            Some(Part::Train) => train.push(i),
            Some(Part::Test) => test.push(i),
            None => {}
        }
    }
    (train, test)
}

fn need_both_classes(what: &str, labels: &[bool]) -> Result<(), CliError> {
    let pos = labels.iter().filter(|&&v| v).count();
    if labels.len() < 2 || pos == 0 || pos == labels.len() {
        return Err(CliError::Validation(format!(
            "{what}: training data needs both classes ({pos} positive of {})",
            labels.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TaReport {
    cv: extremo::svm::CvReport,
    final_stats: extremo::svm::TrainStats,
    n_support_vectors: usize,
}

pub fn cmd_train_ta(cfg: &PipelineConfig) -> Result<(), CliError> {
    check_split(cfg)?;
    let mut ws = Workspace::open(cfg, "train_ta")?;
    let samples = ta_samples(cfg, &ws)?;
    let (train_idx, test_idx) = split_indices(cfg, &samples.targets);
    guard_training_dates(
        train_idx.iter().map(|&i| samples.targets[i].label_date),
        cfg.split.test_start,
    )?;
    let x: Vec<Vec<f64>> = train_idx.iter().map(|&i| samples.x[i].clone()).collect();
    let y: Vec<bool> = train_idx.iter().map(|&i| samples.targets[i].label).collect();
    need_both_classes("train ta", &y)?;

    let base = SvmParams {
        kernel: cfg.svm.kernel.spec(1.0, cfg.svm.degree, cfg.svm.coef0),
        tol: cfg.svm.tol,
        max_passes: cfg.svm.max_passes,
        working_set: cfg.svm.working_set,
        ..SvmParams::default()
    };
    let search = GridSearchConfig {
        grid: Grid {
            c: cfg.svm.c_grid.clone(),
            gamma: cfg.svm.gamma_grid.clone(),
        },
        k: cfg.svm.folds,
        seed: cfg.sub_seed("svm.folds"),
        base,
    };
    let cv = grid_search(&x, &y, &search)?;
    log::info!(
        "TA grid search: best C = {}, mean F1 = {:.4}",
        cv.best.c,
        cv.best_mean_f1
    );
    let model = train_smo(&x, &y, &cv.best)?;
    if !model.stats.converged {
        log::warn!("SMO stopped at the pass cap with KKT gap {:.3e}", model.stats.kkt_gap);
    }
    let train_probs: Vec<f64> = match cfg.fusion.mode {
        FusionMode::OutOfFold => out_of_fold_decisions(&x, &y, &cv.best, cfg.svm.folds, cfg.sub_seed("svm.oof"))?
            .into_iter()
            .map(sigmoid)
            .collect(),
        FusionMode::InSample => model.predict_proba_batch(&x)?,
    };
    let mut rows: Vec<PredictionRow> = train_idx
        .iter()
        .zip(&train_probs)
        .map(|(&i, &prob)| PredictionRow {
            target: samples.targets[i],
            test: false,
            prob,
        })
        .collect();
    for &i in &test_idx {
        rows.push(PredictionRow {
            target: samples.targets[i],
            test: true,
            prob: model.predict_proba(&samples.x[i])?,
        });
    }
    ws.write_text(&ModelRef::Ta.checkpoint(), &(model.to_json()? + "\n"))?;
    ws.write_json(
        "models/ta_report.json",
        &TaReport {
            n_support_vectors: model.support_vectors.len(),
            final_stats: model.stats,
            cv,
        },
    )?;
    ws.write_json(
        &ModelRef::Ta.meta(),
        &BaseModelMeta {
            task: cfg.task.name().into(),
            fusion_mode: cfg.fusion.mode,
            train_samples: train_idx.len(),
            test_samples: test_idx.len(),
        },
    )?;
    write_predictions(&mut ws, ModelRef::Ta, &rows)?;
    ws.finish(cfg)?;
    Ok(())
}

fn ta_test_probabilities(cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<PredictionRow>, CliError> {
    let text = ws.read(&ModelRef::Ta.checkpoint(), "extremo train ta")?;
    let model = SvmModel::from_json(std::str::from_utf8(&text).map_err(|e| CliError::Validation(e.to_string()))?)?;
    let samples = ta_samples(cfg, ws)?;
    let expected = cfg.features.window * N_FEATURES;
    if model.dim() != expected {
        return Err(CliError::Validation(format!(
            "incompatible checkpoint: TA model expects {} inputs, the configured window gives {expected}",
            model.dim()
        )));
    }
    let (_, test_idx) = split_indices(cfg, &samples.targets);
    test_idx
        .iter()
        .map(|&i| {
            Ok(PredictionRow {
                target: samples.targets[i],
                test: true,
                prob: model.predict_proba(&samples.x[i])?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- Twitter models

/// Embedding stacks zero-padded on the fly to the configured slice count.
pub struct StackDataset<'a> {
    stacks: &'a [EmbeddingStack],
    items: Vec<(usize, bool)>,
    max_slices: usize,
    dim: usize,
}

impl<'a> StackDataset<'a> {
    pub fn new(stacks: &'a [EmbeddingStack], items: Vec<(usize, bool)>, max_slices: usize, dim: usize) -> Self {
        Self {
            stacks,
            items,
            max_slices,
            dim,
        }
    }
}

impl Dataset for StackDataset<'_> {
    fn len(&self) -> usize {
        self.items.len()
    }
    fn input_len(&self) -> usize {
        self.max_slices * self.dim
    }
    fn input(&self, i: usize, out: &mut [f64]) {
        let values = &self.stacks[self.items[i].0].values;
        for (o, &v) in out.iter_mut().zip(values) {
            *o = f64::from(v);
        }
        out[values.len()..].fill(0.0);
    }
    fn label(&self, i: usize) -> bool {
        self.items[i].1
    }
}

struct TwitterSamples {
    stacks: Vec<EmbeddingStack>,
    dim: usize,
    targets: Vec<Target>,
    stack_of: Vec<usize>,
}

fn twitter_samples(cfg: &PipelineConfig, ws: &Workspace) -> Result<TwitterSamples, CliError> {
    if !cfg.data.embeddings.is_file() {
        return Err(CliError::Dependency(format!(
            "data.embeddings: embedding file not found: {}",
            cfg.data.embeddings.display()
        )));
    }
    let file = read_embedding_file(&cfg.data.embeddings, Some(cfg.twitter.embedding_dim))?;
    if let Some(s) = file.stacks.iter().find(|s| s.n_slices() > cfg.twitter.max_slices) {
        return Err(CliError::Validation(format!(
            "embedding stack of {} has {} slices, above twitter.max_slices = {}",
            date_str(s.date),
            s.n_slices(),
            cfg.twitter.max_slices
        )));
    }
    let labels = load_labels(ws, cfg.task)?;
    let by_prediction: BTreeMap<NaiveDate, (NaiveDate, bool)> = labels
        .labels
        .iter()
        .map(|l| (l.prediction_date, (l.date, l.value)))
        .collect();
    let pairs: Vec<(NaiveDate, bool)> = by_prediction.iter().map(|(&d, &(_, v))| (d, v)).collect();
    let (aligned, report) = extremo::embeddings_io::align_with_labels(&file.stacks, &pairs)?;
    if report.dropped() > 0 {
        log::info!(
            "embedding join: {} samples, {} stacks without a label, {} labels without a stack",
            report.joined,
            report.stacks_without_label.len(),
            report.labels_without_stack.len()
        );
    }
    let targets = aligned
        .iter()
        .map(|a| Target {
            prediction_date: a.date,
            label_date: by_prediction[&a.date].0,
            label: a.label,
        })
        .collect();
    Ok(TwitterSamples {
        dim: file.header.dim,
        stack_of: aligned.iter().map(|a| a.stack_index).collect(),
        stacks: file.stacks,
        targets,
    })
}

fn twitter_train_config(cfg: &PipelineConfig, arch: Architecture, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: cfg.twitter.max_epochs,
        patience: cfg.twitter.patience,
        batch_size: cfg.twitter.batch_size,
        val_fraction: cfg.twitter.val_fraction,
        adam: extremo_neural::AdamConfig {
            lr: cfg.twitter.lr,
            weight_decay: cfg.twitter.weight_decay_for(arch, cfg.task),
            ..extremo_neural::AdamConfig::default()
        },
        loss: cfg.twitter.loss_for(cfg.task),
        seed,
    }
}

#[derive(Debug, Serialize)]
struct TwitterReport {
    n_params: usize,
    history: TrainHistory,
    /// Best validation F1 of each held-out fold model, when those were trained.
    oof_best_val_f1: Vec<f64>,
}

pub fn cmd_train_twitter(cfg: &PipelineConfig, arch: Architecture) -> Result<(), CliError> {
    check_split(cfg)?;
    let model_ref = ModelRef::Twitter(arch);
    let mut ws = Workspace::open(cfg, &format!("train_{}", model_ref.stem()))?;
    let s = twitter_samples(cfg, &ws)?;
    let (train_idx, test_idx) = split_indices(cfg, &s.targets);
    guard_training_dates(train_idx.iter().map(|&i| s.targets[i].label_date), cfg.split.test_start)?;
    let items =
        |idx: &[usize]| -> Vec<(usize, bool)> { idx.iter().map(|&i| (s.stack_of[i], s.targets[i].label)).collect() };
    let train_items = items(&train_idx);
    need_both_classes("train twitter", &train_items.iter().map(|p| p.1).collect::<Vec<_>>())?;
    let spec = cfg.twitter.model_spec(arch, s.dim);
    let seed = cfg.sub_seed(&format!("twitter.{}", arch.name()));
    let train_set = StackDataset::new(&s.stacks, train_items.clone(), cfg.twitter.max_slices, s.dim);
    let (model, history) = train(spec.clone(), &train_set, &twitter_train_config(cfg, arch, seed))?;
    log::info!(
        "{}: best epoch {} of {}",
        model_ref.display(),
        history.best_epoch,
        history.epochs.len()
    );

    let mut oof_best = Vec::new();
    let train_probs = match cfg.fusion.mode {
        FusionMode::InSample => predict_batch(&model, &train_set)?,
        FusionMode::OutOfFold => {
            let labels: Vec<bool> = train_items.iter().map(|p| p.1).collect();
            let k = cfg.twitter.oof_folds;
            let folds = stratified_folds(&labels, k, cfg.sub_seed(&format!("twitter.{}.folds", arch.name())))?;
            let mut probs = vec![0.0; train_items.len()];
            for f in 0..k {
                let fit: Vec<(usize, bool)> = (0..labels.len())
                    .filter(|&i| folds[i] != f)
                    .map(|i| train_items[i])
                    .collect();
                let held: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f).collect();
                let fit_set = StackDataset::new(&s.stacks, fit, cfg.twitter.max_slices, s.dim);
                let fold_cfg = twitter_train_config(cfg, arch, seed.wrapping_add(1 + f as u64));
                let (m, h) = train(spec.clone(), &fit_set, &fold_cfg)?;
                oof_best.push(h.epochs[h.best_epoch - 1].val_f1);
                let held_set = StackDataset::new(
                    &s.stacks,
                    held.iter().map(|&i| train_items[i]).collect(),
                    cfg.twitter.max_slices,
                    s.dim,
                );
                for (&i, p) in held.iter().zip(predict_batch(&m, &held_set)?) {
                    probs[i] = p;
                }
            }
            probs
        }
    };
    let test_set = StackDataset::new(&s.stacks, items(&test_idx), cfg.twitter.max_slices, s.dim);
    let test_probs = predict_batch(&model, &test_set)?;
    let mut rows: Vec<PredictionRow> = train_idx
        .iter()
        .zip(train_probs)
        .map(|(&i, prob)| PredictionRow {
            target: s.targets[i],
            test: false,
            prob,
        })
        .collect();
    rows.extend(test_idx.iter().zip(test_probs).map(|(&i, prob)| PredictionRow {
        target: s.targets[i],
        test: true,
        prob,
    }));

    ws.write_bytes(&model_ref.checkpoint(), &model.to_bytes()?)?;
    ws.write_json(
        &format!("models/{}_report.json", model_ref.stem()),
        &TwitterReport {
            n_params: model.n_params(),
            history,
            oof_best_val_f1: oof_best,
        },
    )?;
    ws.write_json(
        &model_ref.meta(),
        &BaseModelMeta {
            task: cfg.task.name().into(),
            fusion_mode: cfg.fusion.mode,
            train_samples: train_idx.len(),
            test_samples: test_idx.len(),
        },
    )?;
    write_predictions(&mut ws, model_ref, &rows)?;
    ws.finish(cfg)?;
    Ok(())
}

fn twitter_test_probabilities(
    cfg: &PipelineConfig,
    ws: &Workspace,
    arch: Architecture,
) -> Result<Vec<PredictionRow>, CliError> {
    let model_ref = ModelRef::Twitter(arch);
    let bytes = ws.read(&model_ref.checkpoint(), &format!("extremo train {}", model_ref.arg()))?;
    let model = Model::from_bytes(&bytes)?;
    let s = twitter_samples(cfg, ws)?;
    let expected = (cfg.twitter.max_slices, s.dim);
    if model.spec.input_shape() != expected {
        return Err(CliError::Validation(format!(
            "incompatible checkpoint: {} expects {:?} inputs, the data gives {expected:?}",
            model_ref.display(),
            model.spec.input_shape()
        )));
    }
    let (_, test_idx) = split_indices(cfg, &s.targets);
    let items = test_idx.iter().map(|&i| (s.stack_of[i], s.targets[i].label)).collect();
    let probs = predict_batch(
        &model,
        &StackDataset::new(&s.stacks, items, cfg.twitter.max_slices, s.dim),
    )?;
    Ok(test_idx
        .iter()
        .zip(probs)
        .map(|(&i, prob)| PredictionRow {
            target: s.targets[i],
            test: true,
            prob,
        })
        .collect())
}

// ---------------------------------------------------------------- fusion

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FusionArtifact {
    model: FusionModel,
    mode: FusionMode,
    twitter: Architecture,
    task: String,
}

/// Inner join of Twitter and TA rows on prediction date.
fn join_pairs(twitter: &[PredictionRow], ta: &[PredictionRow]) -> Result<Vec<(PredictionRow, ProbPair)>, CliError> {
    let ta_by_date: BTreeMap<NaiveDate, &PredictionRow> = ta.iter().map(|r| (r.target.prediction_date, r)).collect();
    let mut out = Vec::new();
    for tw in twitter {
        if let Some(t) = ta_by_date.get(&tw.target.prediction_date) {
            if t.target != tw.target || t.test != tw.test {
                return Err(CliError::Validation(format!(
                    "base model predictions disagree on the sample of {}; retrain both with the same task and split",
                    date_str(tw.target.prediction_date)
                )));
            }
            out.push((tw.clone(), build_fusion_input(tw.prob, t.prob)?));
        }
    }
    Ok(out)
}

fn read_meta(ws: &Workspace, model: ModelRef) -> Result<BaseModelMeta, CliError> {
    let bytes = ws.read(&model.meta(), &format!("extremo train {}", model.arg()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn cmd_train_fusion(cfg: &PipelineConfig) -> Result<(), CliError> {
    check_split(cfg)?;
    let twitter_ref = ModelRef::Twitter(cfg.fusion.twitter);
    let mut ws = Workspace::open(cfg, "train_fusion")?;
    for base in [ModelRef::Ta, twitter_ref] {
        let meta = read_meta(&ws, base)?;
        if meta.fusion_mode != cfg.fusion.mode || meta.task != cfg.task.name() {
            return Err(CliError::Validation(format!(
                "{} was trained for task {} in {:?} mode; retrain it for task {} in {:?} mode",
                base.display(),
                meta.task,
                meta.fusion_mode,
                cfg.task.name(),
                cfg.fusion.mode
            )));
        }
    }
    let joined = join_pairs(
        &read_predictions(&ws, twitter_ref)?,
        &read_predictions(&ws, ModelRef::Ta)?,
    )?;
    let train_rows: Vec<&(PredictionRow, ProbPair)> = joined.iter().filter(|(r, _)| !r.test).collect();
    guard_training_dates(
        train_rows.iter().map(|(r, _)| r.target.label_date),
        cfg.split.test_start,
    )?;
    let pairs: Vec<ProbPair> = train_rows.iter().map(|(_, p)| *p).collect();
    let labels: Vec<bool> = train_rows.iter().map(|(r, _)| r.target.label).collect();
    need_both_classes("train fusion", &labels)?;
    let model = match cfg.fusion.model {
        FusionKind::Logistic => {
            FusionModel::Logistic(fit_logistic(&pairs, &labels, cfg.fusion.l2, cfg.fusion.max_iter)?)
        }
        FusionKind::Svm => {
            let params = SvmParams {
                c: cfg.fusion.svm_c,
                kernel: cfg
                    .fusion
                    .svm_kernel
                    .spec(cfg.fusion.svm_gamma, cfg.fusion.svm_degree, 0.0),
                tol: cfg.svm.tol,
                max_passes: cfg.svm.max_passes,
                working_set: cfg.svm.working_set,
            };
            fit_fusion_svm(&pairs, &labels, &params)?
        }
    };
    let rows: Vec<PredictionRow> = joined
        .iter()
        .map(|(r, p)| {
            Ok(PredictionRow {
                prob: model.predict_proba(p)?,
                ..r.clone()
            })
        })
        .collect::<Result<_, CliError>>()?;
    ws.write_json(
        &ModelRef::Fusion.checkpoint(),
        &FusionArtifact {
            model,
            mode: cfg.fusion.mode,
            twitter: cfg.fusion.twitter,
            task: cfg.task.name().into(),
        },
    )?;
    write_predictions(&mut ws, ModelRef::Fusion, &rows)?;
    ws.finish(cfg)?;
    Ok(())
}

fn load_fusion(ws: &Workspace) -> Result<FusionArtifact, CliError> {
    let bytes = ws.read(&ModelRef::Fusion.checkpoint(), "extremo train fusion")?;
    Ok(serde_json::from_slice(&bytes)?)
}

// ---------------------------------------------------------------- evaluation

/// Test-period probabilities recomputed from the stored checkpoints.
pub fn test_probabilities(
    cfg: &PipelineConfig,
    ws: &Workspace,
    model: ModelRef,
) -> Result<Vec<PredictionRow>, CliError> {
    match model {
        ModelRef::Ta => ta_test_probabilities(cfg, ws),
        ModelRef::Twitter(arch) => twitter_test_probabilities(cfg, ws, arch),
        ModelRef::Fusion => {
            let fusion = load_fusion(ws)?;
            let tw = twitter_test_probabilities(cfg, ws, fusion.twitter)?;
            let ta = ta_test_probabilities(cfg, ws)?;
            join_pairs(&tw, &ta)?
                .into_iter()
                .map(|(r, p)| {
                    Ok(PredictionRow {
                        prob: fusion.model.predict_proba(&p)?,
                        ..r
                    })
                })
                .collect()
        }
    }
}

fn parameters_of(ws: &Workspace, model: ModelRef) -> Result<String, CliError> {
    Ok(match model {
        ModelRef::Ta => {
            let text = ws.read(&model.checkpoint(), "extremo train ta")?;
            let m = SvmModel::from_json(std::str::from_utf8(&text).map_err(|e| CliError::Validation(e.to_string()))?)?;
            FusionModel::Svm { model: m }.describe()
        }
        ModelRef::Twitter(_) => {
            let m = Model::from_bytes(&ws.read(&model.checkpoint(), &format!("extremo train {}", model.arg()))?)?;
            format!("{} parameters", m.n_params())
        }
        ModelRef::Fusion => load_fusion(ws)?.model.describe(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: String,
    pub parameters: String,
    pub n_test: usize,
    pub dates: Vec<NaiveDate>,
    pub probabilities: Vec<f64>,
    pub labels: Vec<bool>,
    pub sweep: ThresholdSweep,
}

pub fn evaluate_model(
    cfg: &PipelineConfig,
    ws: &Workspace,
    model: ModelRef,
    taus: &[f64],
) -> Result<Evaluation, CliError> {
    let rows = test_probabilities(cfg, ws, model)?;
    if rows.is_empty() {
        return Err(CliError::Validation(format!("{}: no test samples", model.display())));
    }
    let probs: Vec<f64> = rows.iter().map(|r| r.prob).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.target.label).collect();
    Ok(Evaluation {
        model: model.arg().into(),
        parameters: parameters_of(ws, model)?,
        n_test: rows.len(),
        dates: rows.iter().map(|r| r.target.prediction_date).collect(),
        sweep: sweep_thresholds(&probs, &labels, taus)?,
        probabilities: probs,
        labels,
    })
}

fn chosen_models(ws: &Workspace, requested: &[ModelRef]) -> Vec<ModelRef> {
    if requested.is_empty() {
        ModelRef::ALL
            .into_iter()
            .filter(|m| ws.exists(&m.checkpoint()))
            .collect()
    } else {
        requested.to_vec()
    }
}

fn evaluation_table(evals: &[(ModelRef, Evaluation)]) -> String {
    let rows: Vec<ReportRow> = evals
        .iter()
        .flat_map(|(m, e)| {
            e.sweep.results.iter().map(move |r| ReportRow {
                model: format!("{} (tau {})", m.display(), r.tau),
                report: r.report,
                parameters: e.parameters.clone(),
            })
        })
        .collect();
    format_report_table(&rows)
}

pub fn cmd_evaluate(cfg: &PipelineConfig, requested: &[ModelRef]) -> Result<String, CliError> {
    let mut ws = Workspace::open(cfg, "evaluate")?;
    let models = chosen_models(&ws, requested);
    if models.is_empty() {
        return Err(CliError::Dependency(
            "no trained model found; run `extremo train` first".into(),
        ));
    }
    let mut evals = Vec::new();
    for m in models {
        let e = evaluate_model(cfg, &ws, m, &cfg.evaluate.thresholds)?;
        ws.write_json(&format!("eval/{}.json", m.stem()), &e)?;
        ws.write_text(&format!("eval/{}.txt", m.stem()), &evaluation_table(&[(m, e.clone())]))?;
        evals.push((m, e));
    }
    let table = evaluation_table(&evals);
    ws.write_text("eval/summary.txt", &table)?;
    ws.finish(cfg)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub model: String,
    pub thresholds: Vec<f64>,
    pub positives: Vec<usize>,
    pub monotone: bool,
    /// Each threshold's positive set is contained in the previous one's.
    pub nested: bool,
}

pub fn sweep_summary(model: ModelRef, probs: &[f64], sweep: &ThresholdSweep) -> SweepSummary {
    let taus: Vec<f64> = sweep.results.iter().map(|r| r.tau).collect();
    let positives: Vec<usize> = sweep.results.iter().map(|r| r.n_positive).collect();
    let sets: Vec<BTreeSet<usize>> = taus
        .iter()
        .map(|&t| {
            probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > t)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    SweepSummary {
        model: model.arg().into(),
        monotone: positives.windows(2).all(|w| w[1] <= w[0]),
        nested: sets.windows(2).all(|w| w[1].is_subset(&w[0])),
        thresholds: taus,
        positives,
    }
}

pub fn cmd_sweep(cfg: &PipelineConfig, requested: &[ModelRef]) -> Result<String, CliError> {
    let mut ws = Workspace::open(cfg, "sweep_threshold")?;
    let models = chosen_models(&ws, requested);
    if models.is_empty() {
        return Err(CliError::Dependency(
            "no trained model found; run `extremo train` first".into(),
        ));
    }
    let mut out = String::new();
    for m in models {
        let e = evaluate_model(cfg, &ws, m, &cfg.evaluate.thresholds)?;
        let summary = sweep_summary(m, &e.probabilities, &e.sweep);
        if !(summary.monotone && summary.nested) {
            return Err(CliError::Validation(format!(
                "{}: threshold sweep is not monotone",
                m.display()
            )));
        }
        let _ = writeln!(
            out,
            "{}: positives {:?} at thresholds {:?}",
            m.display(),
            summary.positives,
            summary.thresholds
        );
        ws.write_json(&format!("sweep/{}.json", m.stem()), &(summary, e.sweep))?;
    }
    ws.write_text("sweep/summary.txt", &out)?;
    ws.finish(cfg)?;
    Ok(out)
}

// ---------------------------------------------------------------- backtest and report

/// Runs every configured strategy over every period; returns the runs and their text tables.
pub fn cmd_backtest(cfg: &PipelineConfig) -> Result<(Vec<StrategyRun>, String), CliError> {
    let mut ws = Workspace::open(cfg, "backtest")?;
    let history = load_panel(&ws)?.candles();
    let mut specs = Vec::new();
    for name in &cfg.backtest.strategies {
        let spec = match ModelRef::parse_strategy(name)? {
            crate::pipeline::StrategyRef::BuyHold => ("Buy and Hold".to_string(), StrategySpec::BuyHold),
            crate::pipeline::StrategyRef::MaCross => (
                format!("MA cross ({}/{})", cfg.backtest.ma_fast, cfg.backtest.ma_slow),
                StrategySpec::MaCross {
                    fast: cfg.backtest.ma_fast,
                    slow: cfg.backtest.ma_slow,
                },
            ),
            crate::pipeline::StrategyRef::Model(m) => {
                if !ws.exists(&m.checkpoint()) {
                    return Err(CliError::Dependency(format!(
                        "strategy `{name}` needs {}; run `extremo train {}` first",
                        m.checkpoint(),
                        m.arg()
                    )));
                }
                let probs = test_probabilities(cfg, &ws, m)?
                    .into_iter()
                    .map(|r| (r.target.prediction_date, r.prob))
                    .collect();
                (
                    format!("{} (tau {})", m.display(), cfg.backtest.tau),
                    StrategySpec::ModelSignal {
                        probs,
                        tau: cfg.backtest.tau,
                    },
                )
            }
        };
        specs.push(spec);
    }
    let periods: Vec<Period> = cfg
        .backtest
        .periods
        .iter()
        .map(|p| Period::from_days(&p.name, cfg.split.test_start, p.first_day, p.last_day))
        .collect();
    let runs = compare_strategies(history.as_slice(), &specs, &periods, cfg.backtest.hold_policy)?;
    let mut text = String::new();
    for p in &periods {
        let of_period: Vec<&StrategyRun> = runs.iter().filter(|r| r.period == p.name).collect();
        let table = format_backtest_table(&of_period);
        ws.write_text(&format!("backtest/{}.txt", p.name), &table)?;
        let _ = writeln!(
            text,
            "{} ({} to {})\n{table}",
            p.name,
            date_str(p.start),
            date_str(p.end)
        );
        for r in of_period {
            let mut buf = Vec::new();
            r.equity.write_csv(&mut buf)?;
            ws.write_bytes(&format!("backtest/equity/{}_{}.csv", slug(&r.strategy), p.name), &buf)?;
        }
    }
    ws.write_json("backtest/backtest.json", &runs)?;
    ws.finish(cfg)?;
    Ok((runs, text))
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

pub fn cmd_report(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut ws = Workspace::open(cfg, "report")?;
    let mut doc = String::from("# Extreme-move prediction report\n\n");
    let _ = writeln!(
        doc,
        "Task: {}. Test period starts {}.\n",
        cfg.task.name(),
        date_str(cfg.split.test_start)
    );
    let section = |doc: &mut String, title: &str, body: &str| {
        let _ = writeln!(doc, "## {title}\n\n```\n{}```\n", body);
    };
    if ws.exists(CORRELATIONS) {
        let raw = String::from_utf8_lossy(&ws.read(CORRELATIONS, "extremo features")?).into_owned();
        let body: Vec<Vec<String>> = raw
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect();
        section(
            &mut doc,
            "Feature correlation with next-day close",
            &extremo::fusion_eval::aligned_table(&["Feature", "Pearson r"], &body),
        );
    }
    if ws.exists(DISTRIBUTION_TXT) {
        section(
            &mut doc,
            "Class distribution",
            &String::from_utf8_lossy(&ws.read(DISTRIBUTION_TXT, "extremo features")?),
        );
    }
    if ws.exists("eval/summary.txt") {
        section(
            &mut doc,
            "Classification results",
            &String::from_utf8_lossy(&ws.read("eval/summary.txt", "extremo evaluate")?),
        );
    }
    if ws.exists("sweep/summary.txt") {
        section(
            &mut doc,
            "Threshold sweep",
            &String::from_utf8_lossy(&ws.read("sweep/summary.txt", "extremo sweep-threshold")?),
        );
    }
    for p in &cfg.backtest.periods {
        let rel = format!("backtest/{}.txt", p.name);
        if ws.exists(&rel) {
            section(
                &mut doc,
                &format!("Backtest: {} (days {} to {})", p.name, p.first_day, p.last_day),
                &String::from_utf8_lossy(&ws.read(&rel, "extremo backtest")?),
            );
        }
    }
    ws.write_text("report.md", &doc)?;
    ws.finish(cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn model_refs_round_trip() {
        for m in ModelRef::ALL {
            assert_eq!(ModelRef::parse(m.arg()).unwrap(), m);
        }
        assert!(ModelRef::parse("twitter").is_err());
        assert_eq!(ModelRef::parse_strategy("buy_hold").unwrap(), StrategyRef::BuyHold);
    }

    #[test]
    fn leakage_guard_rejects_test_dates() {
        let start = NaiveDate::from_ymd_opt(2020, 6, 1).unwrap();
        assert!(guard_training_dates([start.pred_opt().unwrap()], start).is_ok());
        assert!(matches!(
            guard_training_dates([start], start),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("MA cross (7/21)"), "ma_cross_7_21");
        assert_eq!(slug("Fusion (tau 0.5)"), "fusion_tau_0_5");
    }

    #[test]
    fn sweep_summary_nested() {
        let probs = [0.2, 0.6, 0.96, 0.995];
        let labels = [false, true, true, true];
        let sweep = sweep_thresholds(&probs, &labels, &[0.5, 0.95, 0.99]).unwrap();
        let s = sweep_summary(ModelRef::Ta, &probs, &sweep);
        assert_eq!(s.positives, vec![3, 2, 1]);
        assert!(s.monotone && s.nested);
    }

    proptest! {
        #[test]
        fn sweeps_are_nested_for_any_probabilities(
            data in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200),
        ) {
            let (probs, labels): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
            let sweep = sweep_thresholds(&probs, &labels, &[0.5, 0.95, 0.99]).unwrap();
            let s = sweep_summary(ModelRef::Fusion, &probs, &sweep);
            prop_assert!(s.monotone && s.nested);
        }
    }
}
