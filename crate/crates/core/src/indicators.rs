//! The thirteen daily technical indicators: two SMAs, three EMAs, MACD, 20-day
//! deviation, Bollinger bands, high-low spread, ETH and gold closes, and the
//! binary moving-average flag.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{AlignedPanel, Candle, DATE_FORMAT};

#[derive(Debug, Error, PartialEq)]
pub enum IndicatorError {
    #[error("invalid indicator config: {0}")]
    Config(String),
    #[error("length mismatch: {0} vs {1}")]
    Shape(usize, usize),
    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

pub type Result<T, E = IndicatorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicatorConfig {
    pub sma_fast: usize,
    pub sma_slow: usize,
    /// Smoothing factor of the standalone EMA.
    pub ema_alpha: f64,
    pub ema_short_span: usize,
    pub ema_long_span: usize,
    pub std_window: usize,
    pub bollinger_k: f64,
    pub ma_feature_margin: f64,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        Self {
            sma_fast: 7,
            sma_slow: 21,
            ema_alpha: 0.67,
            ema_short_span: 12,
            ema_long_span: 26,
            std_window: 20,
            bollinger_k: 2.0,
            ma_feature_margin: 0.05,
        }
    }
}

impl IndicatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sma_fast < 1 || self.sma_slow < 1 || self.ema_short_span < 1 || self.ema_long_span < 1 {
            return Err(IndicatorError::Config("all windows must be at least 1".into()));
        }
        if self.std_window < 2 {
            return Err(IndicatorError::Config("std window must be at least 2".into()));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(IndicatorError::Config(format!(
                "ema_alpha {} not in (0, 1]",
                self.ema_alpha
            )));
        }
        if !(self.bollinger_k > 0.0) {
            return Err(IndicatorError::Config("bollinger_k must be positive".into()));
        }
        Ok(())
    }

    /// Rows consumed before every windowed indicator is defined.
    pub fn warm_up(&self) -> usize {
        self.sma_fast
            .max(self.sma_slow)
            .max(self.std_window)
            .max(self.ema_long_span)
            .max(self.ema_short_span)
            - 1
    }
}

/// Simple moving average; the first `n - 1` positions are undefined.
pub fn sma(series: &[f64], n: usize) -> Result<Vec<Option<f64>>> {
    if n < 1 {
        return Err(IndicatorError::Config("sma window must be at least 1".into()));
    }
    let mut out = vec![None; series.len()];
    for (t, window) in series.windows(n).enumerate() {
        out[t + n - 1] = Some(window.iter().sum::<f64>() / n as f64);
    }
    Ok(out)
}

/// `e0 = x0`, `e_t = alpha * x_t + (1 - alpha) * e_{t-1}`.
pub fn ema(series: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(IndicatorError::Config(format!("alpha {alpha} not in (0, 1]")));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut prev = match series.first() {
        Some(&x) => x,
        None => return Ok(out),
    };
    out.push(prev);
    for &x in &series[1..] {
        prev = alpha * x + (1.0 - alpha) * prev;
        out.push(prev);
    }
    Ok(out)
}

/// EMA with span convention `alpha = 2 / (n + 1)`.
pub fn ema_span(series: &[f64], n: usize) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(IndicatorError::Config("ema span must be at least 1".into()));
    }
    ema(series, 2.0 / (n as f64 + 1.0))
}

/// 12-span EMA minus 26-span EMA.
pub fn macd(series: &[f64]) -> Vec<f64> {
    macd_with_spans(series, 12, 26).expect("fixed spans are valid")
}

pub fn macd_with_spans(series: &[f64], short: usize, long: usize) -> Result<Vec<f64>> {
    let fast = ema_span(series, short)?;
    let slow = ema_span(series, long)?;
    Ok(fast.iter().zip(&slow).map(|(a, b)| a - b).collect())
}

/// Rolling sample standard deviation (divisor `n - 1`).
pub fn rolling_std(series: &[f64], n: usize) -> Result<Vec<Option<f64>>> {
    if n < 2 {
        return Err(IndicatorError::Config("std window must be at least 2".into()));
    }
    let mut out = vec![None; series.len()];
    for (t, window) in series.windows(n).enumerate() {
        let mean = window.iter().sum::<f64>() / n as f64;
        let ss: f64 = window.iter().map(|x| (x - mean) * (x - mean)).sum();
        out[t + n - 1] = Some((ss / (n - 1) as f64).sqrt());
    }
    Ok(out)
}

pub fn bollinger(ma: &[f64], sd: &[f64], k: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if ma.len() != sd.len() {
        return Err(IndicatorError::Shape(ma.len(), sd.len()));
    }
    let upper = ma.iter().zip(sd).map(|(m, s)| m + k * s).collect();
    let lower = ma.iter().zip(sd).map(|(m, s)| m - k * s).collect();
    Ok((upper, lower))
}

pub fn spread(candle: &Candle) -> f64 {
    candle.high - candle.low
}

/// 1 when the fast SMA sits strictly more than `margin` above the close.
pub fn ma_feature(sma_fast: f64, close: f64, margin: f64) -> u8 {
    u8::from(sma_fast > (1.0 + margin) * close)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRow {
    pub candle: Candle,
    pub ma7: f64,
    pub ma21: f64,
    pub ema: f64,
    pub ema12: f64,
    pub ema26: f64,
    pub macd: f64,
    pub sd20: f64,
    pub boll_upper: f64,
    pub boll_lower: f64,
    pub spread: f64,
    pub eth_close: f64,
    pub gold_close: f64,
    pub ma_feature: u8,
}

impl IndicatorRow {
    pub fn date(&self) -> NaiveDate {
        self.candle.date
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IndicatorFrame {
    pub rows: Vec<IndicatorRow>,
}

impl IndicatorFrame {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "date",
            "ma7",
            "ma21",
            "ema",
            "ema12",
            "ema26",
            "macd",
            "sd20",
            "boll_upper",
            "boll_lower",
            "spread",
            "eth_close",
            "gold_close",
            "ma_feature",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.date().format(DATE_FORMAT).to_string(),
                r.ma7.to_string(),
                r.ma21.to_string(),
                r.ema.to_string(),
                r.ema12.to_string(),
                r.ema26.to_string(),
                r.macd.to_string(),
                r.sd20.to_string(),
                r.boll_upper.to_string(),
                r.boll_lower.to_string(),
                r.spread.to_string(),
                r.eth_close.to_string(),
                r.gold_close.to_string(),
                r.ma_feature.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Computes every indicator over the panel and drops the warm-up rows.
///
/// EMAs are seeded on the first panel row; the frame starts at the first row
/// where the slowest window (the 26-day span by default) has a full history.
pub fn compute_indicator_frame(panel: &AlignedPanel, cfg: &IndicatorConfig) -> Result<IndicatorFrame> {
    cfg.validate()?;
    let warm_up = cfg.warm_up();
    if panel.len() <= warm_up {
        return Err(IndicatorError::InsufficientData {
            needed: warm_up + 1,
            got: panel.len(),
        });
    }
    let closes: Vec<f64> = panel.rows.iter().map(|r| r.candle.close).collect();
    let ma_fast = sma(&closes, cfg.sma_fast)?;
    let ma_slow = sma(&closes, cfg.sma_slow)?;
    let ema_plain = ema(&closes, cfg.ema_alpha)?;
    let ema_short = ema_span(&closes, cfg.ema_short_span)?;
    let ema_long = ema_span(&closes, cfg.ema_long_span)?;
    let sd = rolling_std(&closes, cfg.std_window)?;

    let rows = (warm_up..panel.len())
        .map(|t| {
            let row = &panel.rows[t];
            let ma7 = ma_fast[t].expect("defined after warm-up");
            let ma21 = ma_slow[t].expect("defined after warm-up");
            let sd20 = sd[t].expect("defined after warm-up");
            IndicatorRow {
                candle: row.candle,
                ma7,
                ma21,
                ema: ema_plain[t],
                ema12: ema_short[t],
                ema26: ema_long[t],
                macd: ema_short[t] - ema_long[t],
                sd20,
                boll_upper: ma21 + cfg.bollinger_k * sd20,
                boll_lower: ma21 - cfg.bollinger_k * sd20,
                spread: spread(&row.candle),
                eth_close: row.eth_close,
                gold_close: row.gold_close,
                ma_feature: ma_feature(ma7, row.candle.close, cfg.ma_feature_margin),
            }
        })
        .collect();
    Ok(IndicatorFrame { rows })
}
