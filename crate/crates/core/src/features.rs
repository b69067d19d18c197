//! Normalized 19-feature daily frame, 5-day windows, extreme-movement labels,
//! class distributions and per-feature Pearson correlations.
//!
//! Three normalizations are in play: percentage change against the previous
//! BTC close (price-like features), percentage change against the feature's
//! own previous value (volume, ETH, gold), and ratio to the previous BTC close
//! (MACD, deviation, spread). The binary moving-average flag passes through.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indicators::{IndicatorFrame, IndicatorRow};
use crate::market_data::{Candle, DATE_FORMAT};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot normalize {feature} on {date}: previous value is zero")]
    ZeroDenominator { feature: Feature, date: NaiveDate },
    #[error("non-finite {feature} on {date}")]
    NonFinite { feature: Feature, date: NaiveDate },
    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

pub const N_FEATURES: usize = 19;

/// The daily features in frame column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Open,
    High,
    Low,
    Close,
    AdjClose,
    Volume,
    Ma7,
    Ma21,
    Ema,
    Ema26,
    Ema12,
    Macd,
    Sd20,
    BollUpper,
    BollLower,
    Spread,
    MaFeature,
    Eth,
    Gold,
}

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::Open,
        Feature::High,
        Feature::Low,
        Feature::Close,
        Feature::AdjClose,
        Feature::Volume,
        Feature::Ma7,
        Feature::Ma21,
        Feature::Ema,
        Feature::Ema26,
        Feature::Ema12,
        Feature::Macd,
        Feature::Sd20,
        Feature::BollUpper,
        Feature::BollLower,
        Feature::Spread,
        Feature::MaFeature,
        Feature::Eth,
        Feature::Gold,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column name used in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            Feature::Open => "open",
            Feature::High => "high",
            Feature::Low => "low",
            Feature::Close => "close",
            Feature::AdjClose => "adj_close",
            Feature::Volume => "volume",
            Feature::Ma7 => "ma7",
            Feature::Ma21 => "ma21",
            Feature::Ema => "ema",
            Feature::Ema26 => "ema26",
            Feature::Ema12 => "ema12",
            Feature::Macd => "macd",
            Feature::Sd20 => "sd20",
            Feature::BollUpper => "boll_upper",
            Feature::BollLower => "boll_lower",
            Feature::Spread => "spread",
            Feature::MaFeature => "ma_feature",
            Feature::Eth => "eth",
            Feature::Gold => "gold",
        }
    }

    /// Display label in the correlation report.
    pub fn label(self) -> &'static str {
        match self {
            Feature::Open => "Open",
            Feature::High => "High",
            Feature::Low => "Low",
            Feature::Close => "Close",
            Feature::AdjClose => "Adj Close",
            Feature::Volume => "Volume",
            Feature::Ma7 => "ma7",
            Feature::Ma21 => "ma21",
            Feature::Ema => "ema",
            Feature::Ema26 => "26ema",
            Feature::Ema12 => "12ema",
            Feature::Macd => "MACD",
            Feature::Sd20 => "20sd",
            Feature::BollUpper => "upper band",
            Feature::BollLower => "lower band",
            Feature::Spread => "spread",
            Feature::MaFeature => "ma feature",
            Feature::Eth => "eth",
            Feature::Gold => "gold",
        }
    }

    pub fn raw_value(self, row: &IndicatorRow) -> f64 {
        match self {
            Feature::Open => row.candle.open,
            Feature::High => row.candle.high,
            Feature::Low => row.candle.low,
            Feature::Close => row.candle.close,
            Feature::AdjClose => row.candle.adj_close,
            Feature::Volume => row.candle.volume,
            Feature::Ma7 => row.ma7,
            Feature::Ma21 => row.ma21,
            Feature::Ema => row.ema,
            Feature::Ema26 => row.ema26,
            Feature::Ema12 => row.ema12,
            Feature::Macd => row.macd,
            Feature::Sd20 => row.sd20,
            Feature::BollUpper => row.boll_upper,
            Feature::BollLower => row.boll_lower,
            Feature::Spread => row.spread,
            Feature::MaFeature => f64::from(row.ma_feature),
            Feature::Eth => row.eth_close,
            Feature::Gold => row.gold_close,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizationRule {
    /// `(x_t - close_{t-1}) / close_{t-1}`
    VsPrevBtcClose,
    /// `(x_t - x_{t-1}) / x_{t-1}`
    VsOwnPrev,
    /// `x_t / close_{t-1}`
    OverPrevBtcClose,
    PassThrough,
}

impl NormalizationRule {
    pub fn default_for(feature: Feature) -> Self {
        use Feature::*;
        match feature {
            Open | High | Low | Close | AdjClose | Ma7 | Ma21 | Ema | Ema26 | Ema12 | BollUpper | BollLower => {
                NormalizationRule::VsPrevBtcClose
            }
            Volume | Eth | Gold => NormalizationRule::VsOwnPrev,
            Macd | Sd20 | Spread => NormalizationRule::OverPrevBtcClose,
            MaFeature => NormalizationRule::PassThrough,
        }
    }
}

/// A rule for every feature, indexed by [`Feature::index`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationRules([NormalizationRule; N_FEATURES]);

impl Default for NormalizationRules {
    fn default() -> Self {
        Self(Feature::ALL.map(NormalizationRule::default_for))
    }
}

impl NormalizationRules {
    pub fn rule(&self, feature: Feature) -> NormalizationRule {
        self.0[feature.index()]
    }

    pub fn with_rule(mut self, feature: Feature, rule: NormalizationRule) -> Self {
        self.0[feature.index()] = rule;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub date: NaiveDate,
    pub values: [f64; N_FEATURES],
}

impl FeatureRow {
    pub fn get(&self, feature: Feature) -> f64 {
        self.values[feature.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub rows: Vec<FeatureRow>,
}

impl FeatureFrame {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.rows.iter().map(|r| r.date).collect()
    }

    pub fn column(&self, feature: Feature) -> Vec<f64> {
        self.rows.iter().map(|r| r.get(feature)).collect()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["date"];
        header.extend(Feature::ALL.iter().map(|f| f.name()));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut record = vec![r.date.format(DATE_FORMAT).to_string()];
            record.extend(r.values.iter().map(f64::to_string));
            w.write_record(&record)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(source);
        let headers = reader.headers()?.clone();
        let expected: Vec<&str> = std::iter::once("date")
            .chain(Feature::ALL.iter().map(|f| f.name()))
            .collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(FeatureError::Parse {
                line: 1,
                message: "unexpected feature header".into(),
            });
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let date = parse_date(&record[0], line)?;
            let mut values = [0.0; N_FEATURES];
            for (slot, raw) in values.iter_mut().zip(record.iter().skip(1)) {
                *slot = raw.parse().map_err(|e| FeatureError::Parse {
                    line,
                    message: format!("bad value `{raw}`: {e}"),
                })?;
            }
            rows.push(FeatureRow { date, values });
        }
        Ok(Self { rows })
    }
}

fn parse_date(raw: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw, DATE_FORMAT).map_err(|e| FeatureError::Parse {
        line,
        message: format!("bad date `{raw}`: {e}"),
    })
}

/// Normalizes every indicator row against its predecessor.
///
/// The first row only serves as the basis and yields no output row.
pub fn normalize(frame: &IndicatorFrame, rules: &NormalizationRules) -> Result<FeatureFrame> {
    if frame.len() < 2 {
        return Err(FeatureError::InsufficientData {
            needed: 2,
            got: frame.len(),
        });
    }
    let mut rows = Vec::with_capacity(frame.len() - 1);
    for pair in frame.rows.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let prev_close = prev.candle.close;
        let mut values = [0.0; N_FEATURES];
        for feature in Feature::ALL {
            let x = feature.raw_value(cur);
            let v = match rules.rule(feature) {
                NormalizationRule::VsPrevBtcClose => (x - prev_close) / prev_close,
                NormalizationRule::VsOwnPrev => {
                    let base = feature.raw_value(prev);
                    if base == 0.0 {
                        return Err(FeatureError::ZeroDenominator {
                            feature,
                            date: cur.date(),
                        });
                    }
                    (x - base) / base
                }
                NormalizationRule::OverPrevBtcClose => x / prev_close,
                NormalizationRule::PassThrough => x,
            };
            if !v.is_finite() {
                return Err(FeatureError::NonFinite {
                    feature,
                    date: cur.date(),
                });
            }
            values[feature.index()] = v;
        }
        rows.push(FeatureRow {
            date: cur.date(),
            values,
        });
    }
    Ok(FeatureFrame { rows })
}

/// Consecutive frame rows ending at `date`, flattened oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub date: NaiveDate,
    pub x: Vec<f64>,
}

pub fn build_windows(frame: &FeatureFrame, w: usize) -> Result<Vec<WindowedSample>> {
    if w == 0 {
        return Err(FeatureError::Invalid("window must be at least 1".into()));
    }
    if frame.len() < w {
        return Err(FeatureError::InsufficientData {
            needed: w,
            got: frame.len(),
        });
    }
    Ok(frame
        .rows
        .windows(w)
        .map(|rows| WindowedSample {
            date: rows[w - 1].date,
            x: rows.iter().flat_map(|r| r.values).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub direction: Direction,
    /// Threshold as a fraction (0.05 = 5%).
    pub theta: f64,
}

/// Which bar values define the move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Next day's high (up) or low (down) against the previous close.
    #[default]
    HighLow,
    /// Close-to-close change.
    CloseOnly,
}

/// The four prediction tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "up5")]
    Up5,
    #[serde(rename = "up2")]
    Up2,
    #[serde(rename = "down5")]
    Down5,
    #[serde(rename = "down2")]
    Down2,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Up5, Task::Up2, Task::Down5, Task::Down2];

    pub fn spec(self) -> LabelSpec {
        let (direction, theta) = match self {
            Task::Up5 => (Direction::Up, 0.05),
            Task::Up2 => (Direction::Up, 0.02),
            Task::Down5 => (Direction::Down, 0.05),
            Task::Down2 => (Direction::Down, 0.02),
        };
        LabelSpec { direction, theta }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Up5 => "up5",
            Task::Up2 => "up2",
            Task::Down5 => "down5",
            Task::Down2 => "down2",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| FeatureError::Invalid(format!("unknown task `{s}` (expected up5, up2, down5, down2)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    /// Day whose high/low is judged.
    pub date: NaiveDate,
    /// Previous trading day, on which a forecast of this label is made.
    pub prediction_date: NaiveDate,
    pub value: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub spec: LabelSpec,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub t: usize,
    pub f: usize,
    pub true_ratio: f64,
}

impl ClassCounts {
    pub fn from_values<I: IntoIterator<Item = bool>>(values: I) -> Self {
        let (mut t, mut f) = (0, 0);
        for v in values {
            if v {
                t += 1;
            } else {
                f += 1;
            }
        }
        let total = t + f;
        Self {
            t,
            f,
            true_ratio: if total == 0 { 0.0 } else { t as f64 / total as f64 },
        }
    }
}

impl LabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> ClassCounts {
        ClassCounts::from_values(self.labels.iter().map(|l| l.value))
    }

    /// Keeps labels whose prediction date satisfies `keep`.
    pub fn filter_prediction_dates(&self, mut keep: impl FnMut(NaiveDate) -> bool) -> LabelSet {
        LabelSet {
            spec: self.spec,
            labels: self
                .labels
                .iter()
                .filter(|l| keep(l.prediction_date))
                .copied()
                .collect(),
        }
    }

    pub fn value_on_prediction_date(&self, date: NaiveDate) -> Option<bool> {
        self.labels
            .binary_search_by_key(&date, |l| l.prediction_date)
            .ok()
            .map(|i| self.labels[i].value)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["date", "prediction_date", "label"])?;
        for l in &self.labels {
            w.write_record([
                l.date.format(DATE_FORMAT).to_string(),
                l.prediction_date.format(DATE_FORMAT).to_string(),
                u8::from(l.value).to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R, spec: LabelSpec) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(source);
        let mut labels = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != 3 {
                return Err(FeatureError::Parse {
                    line,
                    message: "expected date,prediction_date,label".into(),
                });
            }
            let value = match &record[2] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(FeatureError::Parse {
                        line,
                        message: format!("bad label `{other}`"),
                    })
                }
            };
            labels.push(Label {
                date: parse_date(&record[0], line)?,
                prediction_date: parse_date(&record[1], line)?,
                value,
            });
        }
        Ok(Self { spec, labels })
    }
}

/// Labels every candle after the first against the previous close (strict `>`).
pub fn make_labels(candles: &[Candle], spec: LabelSpec, mode: LabelMode) -> Result<LabelSet> {
    if candles.len() < 2 {
        return Err(FeatureError::InsufficientData {
            needed: 2,
            got: candles.len(),
        });
    }
    if !(spec.theta > 0.0) {
        return Err(FeatureError::Invalid(format!(
            "theta must be positive, got {}",
            spec.theta
        )));
    }
    let labels = candles
        .windows(2)
        .map(|pair| {
            let (prev, cur) = (&pair[0], &pair[1]);
            let base = prev.close;
            let change = match (spec.direction, mode) {
                (Direction::Up, LabelMode::HighLow) => (cur.high - base) / base,
                (Direction::Down, LabelMode::HighLow) => (base - cur.low) / base,
                (Direction::Up, LabelMode::CloseOnly) => (cur.close - base) / base,
                (Direction::Down, LabelMode::CloseOnly) => (base - cur.close) / base,
            };
            Label {
                date: cur.date,
                prediction_date: prev.date,
                value: change > spec.theta,
            }
        })
        .collect();
    Ok(LabelSet { spec, labels })
}

/// Train/test partition by label date: the test part starts at `test_start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateSplit {
    pub test_start: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Test,
    All,
}

impl DateSplit {
    pub fn part_of(&self, label_date: NaiveDate) -> SplitPart {
        if label_date < self.test_start {
            SplitPart::Train
        } else {
            SplitPart::Test
        }
    }
}

pub fn class_distribution(labels: &LabelSet, split: &DateSplit, part: SplitPart) -> Result<ClassCounts> {
    if labels.is_empty() {
        return Err(FeatureError::Invalid("empty label set".into()));
    }
    Ok(ClassCounts::from_values(
        labels
            .labels
            .iter()
            .filter(|l| part == SplitPart::All || split.part_of(l.date) == part)
            .map(|l| l.value),
    ))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub feature: Feature,
    /// `None` when either column has zero variance.
    pub r: Option<f64>,
}

/// Pearson r of each feature at day t with the normalized close of day t+1.
pub fn pearson_correlations(frame: &FeatureFrame) -> Result<Vec<CorrelationEntry>> {
    if frame.len() < 4 {
        return Err(FeatureError::InsufficientData {
            needed: 4,
            got: frame.len(),
        });
    }
    let target: Vec<f64> = frame.rows[1..].iter().map(|r| r.get(Feature::Close)).collect();
    Ok(Feature::ALL
        .iter()
        .map(|&feature| {
            let x: Vec<f64> = frame.rows[..frame.len() - 1].iter().map(|r| r.get(feature)).collect();
            CorrelationEntry {
                feature,
                r: pearson(&x, &target),
            }
        })
        .collect())
}

pub fn write_correlations<W: Write>(sink: W, table: &[CorrelationEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["feature", "pearson_r"])?;
    for e in table {
        let r = e.r.map(|v| format!("{v:.6}")).unwrap_or_else(|| "undefined".into());
        w.write_record([e.feature.label(), r.as_str()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicators::{compute_indicator_frame, IndicatorConfig};
    use crate::market_data::{AlignedPanel, PanelRow};
    use proptest::prelude::*;

    fn date(i: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(i)
    }

    fn candle(i: u64, close: f64, high: f64, low: f64) -> Candle {
        Candle {
            date: date(i),
            open: close,
            high,
            low,
            close,
            adj_close: close,
            volume: 100.0,
        }
    }

    fn row_with(close: f64, volume: f64, spread: f64, feat: f64) -> IndicatorRow {
        IndicatorRow {
            candle: Candle {
                date: date(0),
                open: feat,
                high: feat.max(close) + spread,
                low: feat.min(close),
                close,
                adj_close: close,
                volume,
            },
            ma7: feat,
            ma21: feat,
            ema: feat,
            ema12: feat,
            ema26: feat,
            macd: 1.0,
            sd20: 2.0,
            boll_upper: feat,
            boll_lower: feat,
            spread,
            eth_close: 50.0,
            gold_close: 1800.0,
            ma_feature: 1,
        }
    }

    #[test]
    fn normalization_examples() {
        let mut prev = row_with(100.0, 160.0, 1.0, 100.0);
        let mut cur = row_with(101.0, 200.0, 3.0, 105.0);
        prev.candle.date = date(0);
        cur.candle.date = date(1);
        let frame = IndicatorFrame { rows: vec![prev, cur] };
        let out = normalize(&frame, &NormalizationRules::default()).unwrap();
        assert_eq!(out.len(), 1);
        let r = &out.rows[0];
        assert_eq!(r.get(Feature::Ma7), 0.05);
        assert_eq!(r.get(Feature::Volume), 0.25);
        assert_eq!(r.get(Feature::Spread), 0.03);
        assert_eq!(r.get(Feature::MaFeature), 1.0);
        assert_eq!(r.date, date(1));
    }

    #[test]
    fn feature_equal_to_prev_close_normalizes_to_zero() {
        let mut prev = row_with(100.0, 1.0, 1.0, 100.0);
        let mut cur = row_with(100.0, 1.0, 1.0, 100.0);
        prev.candle.date = date(0);
        cur.candle.date = date(1);
        let out = normalize(
            &IndicatorFrame { rows: vec![prev, cur] },
            &NormalizationRules::default(),
        )
        .unwrap();
        assert_eq!(out.rows[0].get(Feature::Ema), 0.0);
    }

    #[test]
    fn zero_own_previous_value_is_an_error() {
        let mut prev = row_with(100.0, 0.0, 1.0, 100.0);
        let mut cur = row_with(100.0, 5.0, 1.0, 100.0);
        prev.candle.date = date(0);
        cur.candle.date = date(1);
        match normalize(
            &IndicatorFrame { rows: vec![prev, cur] },
            &NormalizationRules::default(),
        ) {
            Err(FeatureError::ZeroDenominator { feature, date: d }) => {
                assert_eq!(feature, Feature::Volume);
                assert_eq!(d, date(1));
            }
            other => panic!("expected zero-denominator error, got {other:?}"),
        }
    }

    #[test]
    fn rule_mapping_is_total() {
        let rules = NormalizationRules::default();
        let counts = Feature::ALL.iter().fold([0usize; 4], |mut acc, &f| {
            acc[rules.rule(f) as usize] += 1;
            acc
        });
        assert_eq!(counts, [12, 3, 3, 1]);
    }

    fn frame_of(n: usize) -> FeatureFrame {
        FeatureFrame {
            rows: (0..n)
                .map(|i| FeatureRow {
                    date: date(i as u64),
                    values: std::array::from_fn(|j| (i * 100 + j) as f64),
                })
                .collect(),
        }
    }

    #[test]
    fn window_counts_and_layout() {
        let one = build_windows(&frame_of(5), 5).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].x.len(), 95);
        assert_eq!(one[0].x[0], 0.0);
        assert_eq!(one[0].x[94], 418.0);
        assert_eq!(build_windows(&frame_of(7), 5).unwrap().len(), 7 - 5 + 1);
        let single = build_windows(&frame_of(3), 1).unwrap();
        assert_eq!(single[2].x, frame_of(3).rows[2].values.to_vec());
        assert!(matches!(
            build_windows(&frame_of(4), 5),
            Err(FeatureError::InsufficientData { .. })
        ));
    }

    #[test]
    fn label_examples() {
        let up5 = Task::Up5.spec();
        let l = make_labels(
            &[candle(0, 100.0, 101.0, 99.0), candle(1, 104.0, 105.2, 100.0)],
            up5,
            LabelMode::HighLow,
        )
        .unwrap();
        assert_eq!(l.len(), 1);
        assert!(l.labels[0].value);
        assert_eq!(l.labels[0].prediction_date, date(0));
        let l = make_labels(
            &[candle(0, 100.0, 101.0, 99.0), candle(1, 104.0, 105.0, 100.0)],
            up5,
            LabelMode::HighLow,
        )
        .unwrap();
        assert!(!l.labels[0].value);
        let l = make_labels(
            &[candle(0, 100.0, 101.0, 99.0), candle(1, 99.0, 100.0, 97.9)],
            Task::Down2.spec(),
            LabelMode::HighLow,
        )
        .unwrap();
        assert!(l.labels[0].value);
    }

    #[test]
    fn close_only_mode_ignores_high() {
        let bars = [candle(0, 100.0, 101.0, 99.0), candle(1, 101.0, 110.0, 100.0)];
        let l = make_labels(&bars, Task::Up5.spec(), LabelMode::CloseOnly).unwrap();
        assert!(!l.labels[0].value);
    }

    #[test]
    fn class_distribution_counts() {
        let values = [true, false, false, false, true];
        let labels = LabelSet {
            spec: Task::Up2.spec(),
            labels: values
                .iter()
                .enumerate()
                .map(|(i, &v)| Label {
                    date: date(i as u64 + 1),
                    prediction_date: date(i as u64),
                    value: v,
                })
                .collect(),
        };
        let split = DateSplit { test_start: date(100) };
        let c = class_distribution(&labels, &split, SplitPart::All).unwrap();
        assert_eq!((c.t, c.f), (2, 3));
        assert!((c.true_ratio - 0.4).abs() < 1e-15);
        let all_false = LabelSet {
            spec: labels.spec,
            labels: labels.labels.iter().map(|l| Label { value: false, ..*l }).collect(),
        };
        assert_eq!(
            class_distribution(&all_false, &split, SplitPart::All)
                .unwrap()
                .true_ratio,
            0.0
        );
        let split = DateSplit { test_start: date(3) };
        let train = class_distribution(&labels, &split, SplitPart::Train).unwrap();
        let test = class_distribution(&labels, &split, SplitPart::Test).unwrap();
        assert_eq!((train.t + test.t, train.f + test.f), (2, 3));
    }

    #[test]
    fn pearson_examples() {
        let mut frame = frame_of(10);
        for (i, r) in frame.rows.iter_mut().enumerate() {
            r.values[Feature::Close.index()] = ((i * 7) % 5) as f64;
        }
        // Feature equal to the next-day target.
        for i in 0..9 {
            let next = frame.rows[i + 1].get(Feature::Close);
            frame.rows[i].values[Feature::Eth.index()] = next;
            frame.rows[i].values[Feature::Gold.index()] = -next;
            frame.rows[i].values[Feature::MaFeature.index()] = 1.0;
        }
        let table = pearson_correlations(&frame).unwrap();
        let get = |f: Feature| table.iter().find(|e| e.feature == f).unwrap().r;
        assert!((get(Feature::Eth).unwrap() - 1.0).abs() < 1e-12);
        assert!((get(Feature::Gold).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(get(Feature::MaFeature), None);
    }

    #[test]
    fn frame_csv_round_trip_is_exact() {
        let mut frame = frame_of(4);
        frame.rows[1].values[3] = 0.1 + 0.2;
        frame.rows[2].values[5] = -1.234_567_890_123_456_7e-12;
        let mut buf = Vec::new();
        frame.write_csv(&mut buf).unwrap();
        assert_eq!(FeatureFrame::read_csv(buf.as_slice()).unwrap(), frame);
    }

    fn walk_panel(steps: &[(f64, f64, f64, f64)]) -> AlignedPanel {
        let mut close = 500.0;
        let mut eth = 30.0;
        let mut gold = 1500.0;
        AlignedPanel {
            rows: steps
                .iter()
                .enumerate()
                .map(|(i, &(r, up, down, aux))| {
                    let open = close;
                    close *= 1.0 + r;
                    eth *= 1.0 + aux;
                    gold *= 1.0 - aux / 3.0;
                    PanelRow {
                        candle: Candle {
                            date: date(i as u64),
                            open,
                            high: open.max(close) * (1.0 + up),
                            low: open.min(close) * (1.0 - down),
                            close,
                            adj_close: close,
                            volume: 1e3 * (1.0 + up * 10.0),
                        },
                        eth_close: eth,
                        gold_close: gold,
                    }
                })
                .collect(),
        }
    }

    proptest! {
        #[test]
        fn windows_shift_by_one_row(n in 6usize..30) {
            let samples = build_windows(&frame_of(n), 5).unwrap();
            for pair in samples.windows(2) {
                prop_assert_eq!(&pair[0].x[19..], &pair[1].x[..76]);
            }
        }

        #[test]
        fn up_labels_monotone_in_theta(steps in proptest::collection::vec((-0.1f64..0.1, 0.0f64..0.1, 0.0f64..0.1, -0.05f64..0.05), 2..80)) {
            let candles = walk_panel(&steps).candles();
            for direction in [Direction::Up, Direction::Down] {
                let loose = make_labels(candles.as_slice(), LabelSpec { direction, theta: 0.02 }, LabelMode::HighLow).unwrap();
                let strict = make_labels(candles.as_slice(), LabelSpec { direction, theta: 0.05 }, LabelMode::HighLow).unwrap();
                for (s, l) in strict.labels.iter().zip(&loose.labels) {
                    prop_assert!(!s.value || l.value);
                }
            }
        }

        #[test]
        fn normalization_matches_elementwise_oracle(steps in proptest::collection::vec((-0.1f64..0.1, 0.0f64..0.1, 0.0f64..0.1, -0.05f64..0.05), 30..60)) {
            let ind = compute_indicator_frame(&walk_panel(&steps), &IndicatorConfig::default()).unwrap();
            let out = normalize(&ind, &NormalizationRules::default()).unwrap();
            for (t, row) in out.rows.iter().enumerate() {
                let prev = &ind.rows[t];
                let cur = &ind.rows[t + 1];
                let pc = prev.candle.close;
                let eq1 = |x: f64| (x - pc) / pc;
                let eq2 = |x: f64, p: f64| (x - p) / p;
                prop_assert_eq!(row.get(Feature::High), eq1(cur.candle.high));
                prop_assert_eq!(row.get(Feature::BollLower), eq1(cur.boll_lower));
                prop_assert_eq!(row.get(Feature::Gold), eq2(cur.gold_close, prev.gold_close));
                prop_assert_eq!(row.get(Feature::Volume), eq2(cur.candle.volume, prev.candle.volume));
                prop_assert_eq!(row.get(Feature::Sd20), cur.sd20 / pc);
            }
        }
    }
}
