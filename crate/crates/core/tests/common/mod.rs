//! Independent reference computations shared by the integration and acceptance tests.
//!
//! Everything here is written from the definitions, without calling the library routine
//! it checks against.

#![allow(dead_code)]

use chrono::{Days, NaiveDate};
use extremo::market_data::{AlignedPanel, Candle, PanelRow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Seeded geometric random walk for BTC, ETH and gold.
pub fn random_walk_panel(n: usize, seed: u64) -> AlignedPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = Normal::<f64>::new(0.0, 0.03).unwrap();
    let start = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
    let (mut close, mut eth, mut gold) = (8000.0_f64, 300.0_f64, 1300.0_f64);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let open = close;
        close = open * step.sample(&mut rng).exp();
        let high = open.max(close) * (1.0 + rng.random_range(0.0..0.04));
        let low = open.min(close) * (1.0 - rng.random_range(0.0..0.04));
        eth *= step.sample(&mut rng).exp();
        gold *= (step.sample(&mut rng) / 5.0).exp();
        rows.push(PanelRow {
            candle: Candle {
                date: start + Days::new(i as u64),
                open,
                high,
                low,
                close,
                adj_close: close,
                volume: 1e9 * rng.random_range(0.5..1.5),
            },
            eth_close: eth,
            gold_close: gold,
        });
    }
    AlignedPanel { rows }
}

/// The thirteen indicators of one day, in the order
/// ma7, ma21, ema, ema12, ema26, macd, sd20, boll_upper, boll_lower, spread, eth, gold, ma_feature.
pub type IndicatorValues = [f64; 13];

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation by the two-pass formula.
fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Exponential average in closed form: `(1-a)^t x_0 + sum_{k=1..t} a (1-a)^(t-k) x_k`.
fn ema_closed_form(xs: &[f64], t: usize, alpha: f64) -> f64 {
    let keep = 1.0 - alpha;
    let mut v = keep.powi(t as i32) * xs[0];
    for (k, &x) in xs.iter().enumerate().take(t + 1).skip(1) {
        v += alpha * keep.powi((t - k) as i32) * x;
    }
    v
}

/// Indicators on day `t` of the panel with the default settings.
pub fn indicators_at(panel: &AlignedPanel, t: usize) -> IndicatorValues {
    let closes: Vec<f64> = panel.rows.iter().map(|r| r.candle.close).collect();
    let ma7 = mean(&closes[t + 1 - 7..=t]);
    let ma21 = mean(&closes[t + 1 - 21..=t]);
    let ema = ema_closed_form(&closes, t, 0.67);
    let ema12 = ema_closed_form(&closes, t, 2.0 / 13.0);
    let ema26 = ema_closed_form(&closes, t, 2.0 / 27.0);
    let sd20 = sample_std(&closes[t + 1 - 20..=t]);
    let row = &panel.rows[t];
    [
        ma7,
        ma21,
        ema,
        ema12,
        ema26,
        ema12 - ema26,
        sd20,
        ma21 + 2.0 * sd20,
        ma21 - 2.0 * sd20,
        row.candle.high - row.candle.low,
        row.eth_close,
        row.gold_close,
        if ma7 > 1.05 * row.candle.close { 1.0 } else { 0.0 },
    ]
}

/// Relative difference with an absolute floor near zero, where relative error is meaningless.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Two Gaussian clouds in the plane, labels alternate true/false.
pub fn two_blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::<f64>::new(0.0, 1.0).unwrap();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let positive = i % 2 == 0;
        let c = if positive { 1.0 } else { -1.0 };
        x.push(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]);
        y.push(positive);
    }
    (x, y)
}

/// Projection onto `{0 <= a <= c, sum y_i a_i = 0}` by bisection on the multiplier.
fn project(v: &[f64], ys: &[f64], c: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> {
        v.iter()
            .zip(ys)
            .map(|(&vi, &yi)| (vi - lambda * yi).clamp(0.0, c))
            .collect()
    };
    let balance = |a: &[f64]| -> f64 { a.iter().zip(ys).map(|(ai, yi)| ai * yi).sum() };
    // The balance is non-increasing in lambda.
    let (mut lo, mut hi) = (-1.0, 1.0);
    while balance(&at(lo)) < 0.0 {
        lo *= 2.0;
    }
    while balance(&at(hi)) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if balance(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Soft-margin SVM dual solved by accelerated projected gradient ascent.
/// Returns `(alphas, bias)`; the decision function is `sum a_i y_i k(x_i, x) + bias`.
pub fn dual_qp_oracle(k: &[Vec<f64>], y: &[bool], c: f64, iterations: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    let ys: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    // Row-sum bound on the largest eigenvalue of the Hessian.
    let lipschitz = k
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| 1.0 - ys[i] * (0..n).map(|j| k[i][j] * ys[j] * a[j]).sum::<f64>())
            .collect()
    };
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0_f64;
    for _ in 0..iterations {
        let g = grad(&z);
        let next = project(
            &z.iter().zip(&g).map(|(zi, gi)| zi + step * gi).collect::<Vec<_>>(),
            &ys,
            c,
        );
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next
            .iter()
            .zip(&a)
            .map(|(n, o)| n + (t - 1.0) / t_next * (n - o))
            .collect();
        a = next;
        t = t_next;
    }
    let g = grad(&a);
    let margin = 1e-6 * c;
    let free: Vec<usize> = (0..n).filter(|&i| a[i] > margin && a[i] < c - margin).collect();
    let bias = if free.is_empty() {
        0.0
    } else {
        free.iter().map(|&i| ys[i] * g[i]).sum::<f64>() / free.len() as f64
    };
    (a, bias)
}

pub fn oracle_decision(k_row: &[f64], y: &[bool], alphas: &[f64], bias: f64) -> f64 {
    k_row
        .iter()
        .zip(y)
        .zip(alphas)
        .map(|((kv, &yi), a)| if yi { a * kv } else { -a * kv })
        .sum::<f64>()
        + bias
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp()
}
