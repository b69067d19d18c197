//! Long-only backtests: the one-day model-signal strategy, buy-and-hold and a
//! moving-average crossover, with profit, Sharpe, Sortino, drawdown and win rate.
//!
//! Every position uses all cash, enters and exits at daily closes, and pays no
//! fees. Equity is marked to market at each close, starting from 1.0.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion_eval::aligned_table;
use crate::market_data::{Candle, DATE_FORMAT};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("signal dated {0} has no matching candle")]
    Alignment(NaiveDate),
    #[error("insufficient data: need more than {needed} candles, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("period `{0}` contains no candles")]
    EmptyPeriod(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = BacktestError> = std::result::Result<T, E>;

/// Buy signals by date; missing dates mean no signal.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignalSeries {
    pub signals: BTreeMap<NaiveDate, bool>,
}

impl SignalSeries {
    pub fn from_pairs<I: IntoIterator<Item = (NaiveDate, bool)>>(pairs: I) -> Self {
        Self {
            signals: pairs.into_iter().collect(),
        }
    }

    /// Signal wherever the probability strictly exceeds `tau`.
    pub fn from_probabilities(probs: &[(NaiveDate, f64)], tau: f64) -> Self {
        Self::from_pairs(probs.iter().map(|&(d, p)| (d, p > tau)))
    }

    pub fn get(&self, date: NaiveDate) -> bool {
        self.signals.get(&date).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.signals.values().filter(|&&s| s).count()
    }
}

/// What happens to a signal that arrives while a position is open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldPolicy {
    /// Exit at the next close regardless; the signal is ignored.
    #[default]
    IgnoreWhileOpen,
    /// Keep holding while signals continue; exit at the first close without one.
    ExtendHold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub entry_date: NaiveDate,
    pub entry_price: f64,
    pub exit_date: NaiveDate,
    pub exit_price: f64,
    pub return_frac: f64,
}

impl Trade {
    fn new(entry: &Candle, exit: &Candle) -> Self {
        Self {
            entry_date: entry.date,
            entry_price: entry.close,
            exit_date: exit.date,
            exit_price: exit.close,
            return_frac: exit.close / entry.close - 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TradeLedger {
    pub trades: Vec<Trade>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EquityCurve {
    pub points: Vec<(NaiveDate, f64)>,
}

impl EquityCurve {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["date", "equity"])?;
        for (d, v) in &self.points {
            w.write_record([d.format(DATE_FORMAT).to_string(), v.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Position bookkeeping shared by the strategies; equity is marked at every close.
struct Engine<'a> {
    candles: &'a [Candle],
    cash: f64,
    entry: Option<usize>,
    ledger: TradeLedger,
    equity: EquityCurve,
}

impl<'a> Engine<'a> {
    fn new(candles: &'a [Candle]) -> Self {
        Self {
            candles,
            cash: 1.0,
            entry: None,
            ledger: TradeLedger::default(),
            equity: EquityCurve::default(),
        }
    }

    fn buy(&mut self, i: usize) {
        debug_assert!(self.entry.is_none());
        self.entry = Some(i);
    }

    fn sell(&mut self, i: usize) {
        let e = self.entry.take().expect("sell without position");
        let trade = Trade::new(&self.candles[e], &self.candles[i]);
        self.cash *= 1.0 + trade.return_frac;
        self.ledger.trades.push(trade);
    }

    fn mark(&mut self, i: usize) {
        let value = match self.entry {
            Some(e) => self.cash * (self.candles[i].close / self.candles[e].close),
            None => self.cash,
        };
        self.equity.points.push((self.candles[i].date, value));
    }

    fn finish(self) -> (TradeLedger, EquityCurve) {
        (self.ledger, self.equity)
    }
}

pub fn run_signal_strategy(
    candles: &[Candle],
    signals: &SignalSeries,
    policy: HoldPolicy,
) -> Result<(TradeLedger, EquityCurve)> {
    if candles.is_empty() {
        return Err(BacktestError::InsufficientData { needed: 0, got: 0 });
    }
    let index: BTreeMap<NaiveDate, usize> = candles.iter().enumerate().map(|(i, c)| (c.date, i)).collect();
    if let Some((&d, _)) = signals.signals.iter().find(|(d, _)| !index.contains_key(d)) {
        return Err(BacktestError::Alignment(d));
    }
    let last = candles.len() - 1;
    let mut engine = Engine::new(candles);
    for (i, candle) in candles.iter().enumerate() {
        let signal = signals.get(candle.date);
        match engine.entry {
            Some(_) => {
                let extend = policy == HoldPolicy::ExtendHold && signal && i < last;
                if !extend {
                    engine.sell(i);
                }
            }
            None if signal => {
                if i == last {
                    log::warn!(
                        "dropping buy signal on final day {}: no next close to exit at",
                        candle.date
                    );
                } else {
                    engine.buy(i);
                }
            }
            None => {}
        }
        engine.mark(i);
    }
    Ok(engine.finish())
}

pub fn run_buy_hold(candles: &[Candle]) -> Result<(TradeLedger, EquityCurve)> {
    if candles.len() < 2 {
        return Err(BacktestError::InsufficientData {
            needed: 1,
            got: candles.len(),
        });
    }
    let mut engine = Engine::new(candles);
    engine.buy(0);
    for i in 0..candles.len() {
        if i == candles.len() - 1 {
            engine.sell(i);
        }
        engine.mark(i);
    }
    Ok(engine.finish())
}

fn trailing_means(closes: &[f64], n: usize) -> Vec<Option<f64>> {
    (0..closes.len())
        .map(|i| (i + 1 >= n).then(|| closes[i + 1 - n..=i].iter().sum::<f64>() / n as f64))
        .collect()
}

/// Crossover strategy over the candles whose dates fall in `[start, end]`.
///
/// Moving averages use the full `history`, so the first in-period days already
/// have defined averages when enough earlier candles exist.
pub fn run_ma_cross(
    history: &[Candle],
    start: NaiveDate,
    end: NaiveDate,
    fast: usize,
    slow: usize,
) -> Result<(TradeLedger, EquityCurve)> {
    if fast == 0 || fast >= slow {
        return Err(BacktestError::Invalid(format!(
            "need 0 < fast < slow, got {fast}/{slow}"
        )));
    }
    if history.len() <= slow {
        return Err(BacktestError::InsufficientData {
            needed: slow,
            got: history.len(),
        });
    }
    let closes: Vec<f64> = history.iter().map(|c| c.close).collect();
    let f = trailing_means(&closes, fast);
    let s = trailing_means(&closes, slow);
    let above: Vec<Option<bool>> = f.iter().zip(&s).map(|(a, b)| Some(a.as_ref()? > b.as_ref()?)).collect();

    let first = history.partition_point(|c| c.date < start);
    let stop = history.partition_point(|c| c.date <= end);
    if first >= stop {
        return Err(BacktestError::EmptyPeriod(format!("{start}..{end}")));
    }
    let window = &history[first..stop];
    let mut engine = Engine::new(window);
    for (k, i) in (first..stop).enumerate() {
        let cross = match (i.checked_sub(1).and_then(|p| above[p]), above[i]) {
            (Some(prev), Some(cur)) if prev != cur => Some(cur),
            _ => None,
        };
        let is_last = i + 1 == stop;
        match (engine.entry.is_some(), cross) {
            (false, Some(true)) if !is_last => engine.buy(k),
            (true, Some(false)) => engine.sell(k),
            (true, _) if is_last => engine.sell(k),
            _ => {}
        }
        engine.mark(k);
    }
    Ok(engine.finish())
}

/// A ratio that may be infinite or undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Ratio {
    Value(f64),
    PosInfinity,
    Undefined,
}

impl Ratio {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Ratio::Value(v) => Some(v),
            _ => None,
        }
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Ratio::Value(v) => write!(f, "{v:.2}"),
            Ratio::PosInfinity => f.write_str("inf"),
            Ratio::Undefined => f.write_str("N.A."),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub profit_pct: f64,
    pub sharpe: Ratio,
    pub sortino: Ratio,
    pub max_drawdown_pct: f64,
    /// `None` when no trades were made or trades are not meaningful (buy-and-hold).
    pub win_pct: Option<f64>,
    pub n_trades: Option<usize>,
}

pub const ANNUALIZATION_DAYS: f64 = 365.0;

pub fn daily_returns(equity: &[f64]) -> Vec<f64> {
    equity.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

pub fn sharpe_ratio(returns: &[f64]) -> Ratio {
    if returns.len() < 2 {
        return Ratio::Undefined;
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Ratio::Undefined;
    }
    Ratio::Value(mean / var.sqrt() * ANNUALIZATION_DAYS.sqrt())
}

/// Downside deviation is `sqrt(Σ min(r, 0)² / n)` over all days.
pub fn sortino_ratio(returns: &[f64]) -> Ratio {
    if returns.is_empty() {
        return Ratio::Undefined;
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let dd = (returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / n).sqrt();
    if dd == 0.0 {
        return if mean > 0.0 {
            Ratio::PosInfinity
        } else {
            Ratio::Undefined
        };
    }
    Ratio::Value(mean / dd * ANNUALIZATION_DAYS.sqrt())
}

pub fn max_drawdown_pct(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in equity {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    worst * 100.0
}

/// Metrics of a run; `count_trades` is false for buy-and-hold, whose trade count is not reported.
pub fn compute_metrics(ledger: &TradeLedger, equity: &EquityCurve, count_trades: bool) -> Result<BacktestReport> {
    let values = equity.values();
    let (Some(&first), Some(&last)) = (values.first(), values.last()) else {
        return Err(BacktestError::Invalid("empty equity curve".into()));
    };
    let returns = daily_returns(&values);
    let n = ledger.trades.len();
    let (win_pct, n_trades) = if count_trades {
        let wins = ledger.trades.iter().filter(|t| t.return_frac > 0.0).count();
        ((n > 0).then(|| 100.0 * wins as f64 / n as f64), Some(n))
    } else {
        (None, None)
    };
    Ok(BacktestReport {
        profit_pct: (last / first - 1.0) * 100.0,
        sharpe: sharpe_ratio(&returns),
        sortino: sortino_ratio(&returns),
        max_drawdown_pct: max_drawdown_pct(&values),
        win_pct,
        n_trades,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub name: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    /// Period covering 1-based days `first..=last` counted from `origin` (day 1).
    pub fn from_days(name: &str, origin: NaiveDate, first: u64, last: u64) -> Self {
        Self {
            name: name.into(),
            start: origin + Days::new(first - 1),
            end: origin + Days::new(last - 1),
        }
    }
}

/// Full year, bull (days 150 to 350) and bear (days 315 to 365) windows from the test start.
pub fn default_periods(test_start: NaiveDate) -> Vec<Period> {
    vec![
        Period::from_days("full", test_start, 1, 365),
        Period::from_days("bull", test_start, 150, 350),
        Period::from_days("bear", test_start, 315, 365),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StrategySpec {
    BuyHold,
    MaCross {
        fast: usize,
        slow: usize,
    },
    /// Buy when the model probability for the date exceeds `tau`.
    ModelSignal {
        probs: Vec<(NaiveDate, f64)>,
        tau: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: String,
    pub period: String,
    pub report: BacktestReport,
    pub ledger: TradeLedger,
    pub equity: EquityCurve,
}

pub fn run_strategy(
    history: &[Candle],
    spec: &StrategySpec,
    period: &Period,
    policy: HoldPolicy,
) -> Result<(TradeLedger, EquityCurve, bool)> {
    let first = history.partition_point(|c| c.date < period.start);
    let stop = history.partition_point(|c| c.date <= period.end);
    if first >= stop {
        return Err(BacktestError::EmptyPeriod(period.name.clone()));
    }
    let window = &history[first..stop];
    match spec {
        StrategySpec::BuyHold => {
            let (l, e) = run_buy_hold(window)?;
            Ok((l, e, false))
        }
        StrategySpec::MaCross { fast, slow } => {
            let (l, e) = run_ma_cross(history, period.start, period.end, *fast, *slow)?;
            Ok((l, e, true))
        }
        StrategySpec::ModelSignal { probs, tau } => {
            let in_window: Vec<(NaiveDate, f64)> = probs
                .iter()
                .filter(|(d, _)| *d >= period.start && *d <= period.end)
                .copied()
                .collect();
            let signals = SignalSeries::from_probabilities(&in_window, *tau);
            let (l, e) = run_signal_strategy(window, &signals, policy)?;
            Ok((l, e, true))
        }
    }
}

/// One run per (strategy, period), ordered by period then strategy.
pub fn compare_strategies(
    history: &[Candle],
    specs: &[(String, StrategySpec)],
    periods: &[Period],
    policy: HoldPolicy,
) -> Result<Vec<StrategyRun>> {
    let jobs: Vec<(&Period, &(String, StrategySpec))> =
        periods.iter().flat_map(|p| specs.iter().map(move |s| (p, s))).collect();
    jobs.par_iter()
        .map(|(period, (name, spec))| {
            let (ledger, equity, count) = run_strategy(history, spec, period, policy)?;
            Ok(StrategyRun {
                strategy: name.clone(),
                period: period.name.clone(),
                report: compute_metrics(&ledger, &equity, count)?,
                ledger,
                equity,
            })
        })
        .collect()
}

/// Aligned text table of one period's runs.
pub fn format_backtest_table(runs: &[&StrategyRun]) -> String {
    let header = [
        "Strategy",
        "Profit %",
        "Sortino",
        "Sharpe",
        "Max Drawdown %",
        "Win %",
        "Num of Trades",
    ];
    let body: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            vec![
                r.strategy.clone(),
                format!("{:.1}", r.report.profit_pct),
                r.report.sortino.to_string(),
                r.report.sharpe.to_string(),
                format!("{:.1}", r.report.max_drawdown_pct),
                r.report.win_pct.map_or("N.A.".into(), |w| format!("{w:.0}")),
                r.report.n_trades.map_or("N.A.".into(), |n| n.to_string()),
            ]
        })
        .collect();
    aligned_table(&header, &body)
}
