//! Loading, validation and date alignment of daily candles and auxiliary asset closes.
//!
//! BTC candles come from a CSV with `date,open,high,low,close[,adj_close],volume`
//! columns; ETH and gold come as `date,close` files. [`align_panel`] joins them
//! into one row per BTC day, forward-filling weekend and holiday holes in the
//! auxiliary series.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("invalid record on {date}: {message}")]
    Validation { date: NaiveDate, message: String },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("series `{0}` is empty")]
    Empty(&'static str),
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = MarketDataError> = std::result::Result<T, E>;

/// One daily OHLCV bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candle {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
    pub volume: f64,
}

impl Candle {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| {
            Err(MarketDataError::Validation {
                date: self.date,
                message,
            })
        };
        let prices = [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
            ("adj_close", self.adj_close),
        ];
        for (name, value) in prices {
            if !value.is_finite() || value <= 0.0 {
                return fail(format!("{name} must be finite and positive, got {value}"));
            }
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return fail(format!("volume must be finite and non-negative, got {}", self.volume));
        }
        if self.low > self.high {
            return fail(format!("low {} exceeds high {}", self.low, self.high));
        }
        if self.low > self.open.min(self.close) {
            return fail(format!("low {} above min(open, close)", self.low));
        }
        if self.high < self.open.max(self.close) {
            return fail(format!("high {} below max(open, close)", self.high));
        }
        Ok(())
    }
}

/// Date-sorted, validated candles with unique dates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandleSeries(Vec<Candle>);

impl CandleSeries {
    /// Sorts by date and validates every candle; duplicate dates are rejected.
    pub fn new(mut candles: Vec<Candle>) -> Result<Self> {
        for c in &candles {
            c.validate()?;
        }
        candles.sort_by_key(|c| c.date);
        if let Some(w) = candles.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(MarketDataError::DuplicateDate(w[0].date));
        }
        Ok(Self(candles))
    }

    pub fn as_slice(&self) -> &[Candle] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Candle> {
        self.0.iter()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.0.iter().map(|c| c.close).collect()
    }

    /// Candles whose date lies in `[start, end]`.
    pub fn between(&self, start: NaiveDate, end: NaiveDate) -> CandleSeries {
        CandleSeries(
            self.0
                .iter()
                .filter(|c| c.date >= start && c.date <= end)
                .copied()
                .collect(),
        )
    }

    pub fn into_inner(self) -> Vec<Candle> {
        self.0
    }
}

impl<'a> IntoIterator for &'a CandleSeries {
    type Item = &'a Candle;
    type IntoIter = std::slice::Iter<'a, Candle>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Header names for each candle field. `adj_close` is optional in the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandleSchema {
    pub date: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub adj_close: String,
    pub volume: String,
}

impl Default for CandleSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            adj_close: "adj_close".into(),
            volume: "volume".into(),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn require_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    column(headers, name).ok_or_else(|| MarketDataError::MissingColumn(name.to_string()))
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_date(raw: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), DATE_FORMAT).map_err(|e| MarketDataError::Parse {
        line,
        message: format!("bad date `{raw}`: {e}"),
    })
}

fn parse_number(raw: &str, field: &str, line: u64) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|e| MarketDataError::Parse {
        line,
        message: format!("bad {field} `{raw}`: {e}"),
    })
}

fn open_file(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| MarketDataError::Open {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_candles(path: &Path, schema: &CandleSchema) -> Result<CandleSeries> {
    read_candles(open_file(path)?, schema)
}

/// Parses candles from any CSV source. A missing `adj_close` column is filled from `close`.
pub fn read_candles<R: Read>(source: R, schema: &CandleSchema) -> Result<CandleSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let idx_date = require_column(&headers, &schema.date)?;
    let idx_open = require_column(&headers, &schema.open)?;
    let idx_high = require_column(&headers, &schema.high)?;
    let idx_low = require_column(&headers, &schema.low)?;
    let idx_close = require_column(&headers, &schema.close)?;
    let idx_adj = column(&headers, &schema.adj_close);
    let idx_volume = require_column(&headers, &schema.volume)?;

    let mut candles = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        let field = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).ok_or_else(|| MarketDataError::Parse {
                line,
                message: format!("missing field {name}"),
            })?;
            parse_number(raw, name, line)
        };
        let date = parse_date(record.get(idx_date).unwrap_or(""), line)?;
        let close = field(idx_close, "close")?;
        candles.push(Candle {
            date,
            open: field(idx_open, "open")?,
            high: field(idx_high, "high")?,
            low: field(idx_low, "low")?,
            close,
            adj_close: match idx_adj {
                Some(i) => field(i, "adj_close")?,
                None => close,
            },
            volume: field(idx_volume, "volume")?,
        });
    }
    CandleSeries::new(candles)
}

pub fn write_candles<W: Write>(sink: W, candles: &CandleSeries) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["date", "open", "high", "low", "close", "adj_close", "volume"])?;
    for c in candles {
        writer.write_record([
            c.date.format(DATE_FORMAT).to_string(),
            c.open.to_string(),
            c.high.to_string(),
            c.low.to_string(),
            c.close.to_string(),
            c.adj_close.to_string(),
            c.volume.to_string(),
        ])?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetId {
    Eth,
    Gold,
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssetId::Eth => "eth",
            AssetId::Gold => "gold",
        })
    }
}

/// Closing prices of an auxiliary asset, strictly increasing in date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSeries {
    pub asset_id: AssetId,
    points: Vec<(NaiveDate, f64)>,
}

impl AssetSeries {
    pub fn new(asset_id: AssetId, mut points: Vec<(NaiveDate, f64)>) -> Result<Self> {
        for &(date, price) in &points {
            if !price.is_finite() || price <= 0.0 {
                return Err(MarketDataError::Validation {
                    date,
                    message: format!("{asset_id} close must be finite and positive, got {price}"),
                });
            }
        }
        points.sort_by_key(|p| p.0);
        if let Some(w) = points.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(MarketDataError::DuplicateDate(w[0].0));
        }
        Ok(Self { asset_id, points })
    }

    pub fn points(&self) -> &[(NaiveDate, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Value at the latest date on or before `date`.
    pub fn as_of(&self, date: NaiveDate) -> Option<f64> {
        let idx = self.points.partition_point(|p| p.0 <= date);
        idx.checked_sub(1).map(|i| self.points[i].1)
    }
}

pub fn load_asset_series(path: &Path, asset_id: AssetId) -> Result<AssetSeries> {
    read_asset_series(open_file(path)?, asset_id)
}

pub fn read_asset_series<R: Read>(source: R, asset_id: AssetId) -> Result<AssetSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let idx_date = require_column(&headers, "date")?;
    let idx_close = require_column(&headers, "close")?;
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        let date = parse_date(record.get(idx_date).unwrap_or(""), line)?;
        let close = parse_number(record.get(idx_close).unwrap_or(""), "close", line)?;
        points.push((date, close));
    }
    AssetSeries::new(asset_id, points)
}

pub fn write_asset_series<W: Write>(sink: W, series: &AssetSeries) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["date", "close"])?;
    for (date, close) in series.points() {
        writer.write_record([date.format(DATE_FORMAT).to_string(), close.to_string()])?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub candle: Candle,
    pub eth_close: f64,
    pub gold_close: f64,
}

impl PanelRow {
    pub fn date(&self) -> NaiveDate {
        self.candle.date
    }
}

/// One row per BTC trading day with ETH and gold closes attached.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignedPanel {
    pub rows: Vec<PanelRow>,
}

impl AlignedPanel {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn candles(&self) -> CandleSeries {
        CandleSeries(self.rows.iter().map(|r| r.candle).collect())
    }
}

/// Joins BTC candles with ETH and gold closes.
///
/// Auxiliary gaps are forward-filled from the most recent prior value, so the
/// panel never looks ahead. BTC dates before the first ETH or gold point, or
/// after the last date both auxiliary series cover, are dropped.
pub fn align_panel(btc: &CandleSeries, eth: &AssetSeries, gold: &AssetSeries) -> Result<AlignedPanel> {
    if btc.is_empty() {
        return Err(MarketDataError::Empty("btc"));
    }
    if eth.is_empty() {
        return Err(MarketDataError::Empty("eth"));
    }
    if gold.is_empty() {
        return Err(MarketDataError::Empty("gold"));
    }
    let last_covered = eth.points.last().unwrap().0.min(gold.points.last().unwrap().0);

    // Both cursors only move forward; each BTC date is visited once.
    let mut eth_cursor = 0usize;
    let mut gold_cursor = 0usize;
    let mut rows = Vec::with_capacity(btc.len());
    for candle in btc {
        if candle.date > last_covered {
            break;
        }
        while eth_cursor < eth.points.len() && eth.points[eth_cursor].0 <= candle.date {
            eth_cursor += 1;
        }
        while gold_cursor < gold.points.len() && gold.points[gold_cursor].0 <= candle.date {
            gold_cursor += 1;
        }
        if eth_cursor == 0 || gold_cursor == 0 {
            continue;
        }
        rows.push(PanelRow {
            candle: *candle,
            eth_close: eth.points[eth_cursor - 1].1,
            gold_close: gold.points[gold_cursor - 1].1,
        });
    }
    if rows.is_empty() {
        return Err(MarketDataError::Alignment(
            "BTC dates do not overlap ETH and gold coverage".into(),
        ));
    }
    Ok(AlignedPanel { rows })
}

pub fn write_panel<W: Write>(sink: W, panel: &AlignedPanel) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record([
        "date",
        "open",
        "high",
        "low",
        "close",
        "adj_close",
        "volume",
        "eth_close",
        "gold_close",
    ])?;
    for r in &panel.rows {
        let c = &r.candle;
        writer.write_record([
            c.date.format(DATE_FORMAT).to_string(),
            c.open.to_string(),
            c.high.to_string(),
            c.low.to_string(),
            c.close.to_string(),
            c.adj_close.to_string(),
            c.volume.to_string(),
            r.eth_close.to_string(),
            r.gold_close.to_string(),
        ])?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a panel written by [`write_panel`].
pub fn read_panel<R: Read>(mut source: R) -> Result<AlignedPanel> {
    let mut text = Vec::new();
    source.read_to_end(&mut text).map_err(csv::Error::from)?;
    let candles = read_candles(text.as_slice(), &CandleSchema::default())?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_slice());
    let headers = reader.headers()?.clone();
    let idx_date = require_column(&headers, "date")?;
    let idx_eth = require_column(&headers, "eth_close")?;
    let idx_gold = require_column(&headers, "gold_close")?;
    let mut aux = std::collections::BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        let date = parse_date(record.get(idx_date).unwrap_or(""), line)?;
        let eth = parse_number(record.get(idx_eth).unwrap_or(""), "eth_close", line)?;
        let gold = parse_number(record.get(idx_gold).unwrap_or(""), "gold_close", line)?;
        if !(eth > 0.0 && gold > 0.0) {
            return Err(MarketDataError::Validation {
                date,
                message: "auxiliary closes must be positive".into(),
            });
        }
        aux.insert(date, (eth, gold));
    }
    let rows = candles
        .into_inner()
        .into_iter()
        .map(|candle| {
            let (eth_close, gold_close) = aux[&candle.date];
            PanelRow {
                candle,
                eth_close,
                gold_close,
            }
        })
        .collect();
    Ok(AlignedPanel { rows })
}
