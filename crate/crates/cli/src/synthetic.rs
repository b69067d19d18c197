//! Toy market and embedding data with planted signals, for smoke runs and tests.
//!
//! Day `d` carries two independent event flags. A technical event makes gold jump 30% on `d`;
//! a text event shifts the first embedding coordinates of every slice stacked for `d`. The
//! BTC high of day `d + 1` breaks 5% above the close of `d` when either event fired, flipped with a
//! small probability, so each base model sees part of the signal and only the fused model sees all
//! of it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use extremo::embeddings_io::{write_embedding_file, EmbeddingFileHeader, EmbeddingStack, FORMAT_VERSION};
use extremo::market_data::{write_asset_series, write_candles, AssetId, AssetSeries, Candle, CandleSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_days: usize,
    pub start: NaiveDate,
    /// Number of trailing days that form the test period.
    pub test_days: usize,
    pub event_rate: f64,
    /// Probability that the next-day move disagrees with the events.
    pub label_noise: f64,
    pub dim: usize,
    pub max_slices: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_days: 600,
            start: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            test_days: 200,
            event_rate: 0.25,
            label_noise: 0.02,
            dim: 16,
            max_slices: 8,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn test_start(&self) -> NaiveDate {
        self.start + Days::new((self.n_days - self.test_days) as u64)
    }
}

/// Files written by [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dir: PathBuf,
    pub config: PathBuf,
    /// Per day: (technical event, text event).
    pub events: Vec<(NaiveDate, bool, bool)>,
}

pub fn generate(dir: &Path, spec: &SyntheticSpec) -> Result<SyntheticData, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut candles = Vec::with_capacity(spec.n_days);
    let mut eth = Vec::with_capacity(spec.n_days);
    let mut gold = Vec::with_capacity(spec.n_days);
    let mut stacks = Vec::with_capacity(spec.n_days);
    let mut events = Vec::with_capacity(spec.n_days);
    let (mut close, mut eth_close) = (10_000.0_f64, 200.0_f64);
    let mut jump_next = false;
    for i in 0..spec.n_days {
        let date = spec.start + Days::new(i as u64);
        let open = close;
        close = open * (1.0 + 0.003 * noise.sample(&mut rng));
        let body_high = open.max(close);
        let high = if jump_next {
            open * 1.08
        } else {
            body_high * (1.0 + rng.random_range(0.0..0.01))
        };
        let low = open.min(close) * (1.0 - rng.random_range(0.0..0.01));
        let volume = 1e6 * (1.0 + 0.01 * noise.sample(&mut rng));
        candles.push(Candle {
            date,
            open,
            high,
            low,
            close,
            adj_close: close,
            volume,
        });
        eth_close *= 1.0 + 0.004 * noise.sample(&mut rng);
        eth.push((date, eth_close));

        let ta_event = rng.random_bool(spec.event_rate);
        let text_event = rng.random_bool(spec.event_rate);
        let level = if ta_event { 1300.0 } else { 1000.0 };
        gold.push((date, level * (1.0 + 0.002 * noise.sample(&mut rng))));
        let n_slices = rng.random_range(3..=spec.max_slices);
        let mut values = Vec::with_capacity(n_slices * spec.dim);
        for _ in 0..n_slices {
            for j in 0..spec.dim {
                let shift = if text_event && j < 4 { 1.5 } else { 0.0 };
                values.push((shift + 0.5 * noise.sample(&mut rng)) as f32);
            }
        }
        stacks.push(EmbeddingStack::new(date, spec.dim, values)?);
        events.push((date, ta_event, text_event));
        jump_next = (ta_event || text_event) != rng.random_bool(spec.label_noise);
    }

    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        std::fs::File::create(&p).map_err(|e| CliError::io(&p, e))
    };
    write_candles(create("btc.csv")?, &CandleSeries::new(candles)?)?;
    write_asset_series(create("eth.csv")?, &AssetSeries::new(AssetId::Eth, eth)?)?;
    write_asset_series(create("gold.csv")?, &AssetSeries::new(AssetId::Gold, gold)?)?;
    let header = EmbeddingFileHeader {
        version: FORMAT_VERSION,
        dim: spec.dim,
        max_slices: spec.max_slices,
    };
    write_embedding_file(&dir.join("embeddings.pbem"), &header, &stacks)?;
    let config = dir.join("config.toml");
    std::fs::write(&config, config_toml(spec)).map_err(|e| CliError::io(&config, e))?;
    Ok(SyntheticData {
        dir: dir.to_path_buf(),
        config,
        events,
    })
}

/// A configuration sized for the toy data: small grids, small networks, periods inside the test span.
pub fn config_toml(spec: &SyntheticSpec) -> String {
    let last = spec.test_days as u64 - 1;
    let third = last / 3;
    let mut s = String::new();
    let _ = writeln!(s, "seed = {}\ntask = \"up5\"\noutput_dir = \"output\"\n", spec.seed);
    let _ = writeln!(
        s,
        "[data]\nbtc = \"btc.csv\"\neth = \"eth.csv\"\ngold = \"gold.csv\"\nembeddings = \"embeddings.pbem\"\n"
    );
    let _ = writeln!(
        s,
        "[split]\ntest_start = \"{}\"\n",
        spec.test_start().format("%Y-%m-%d")
    );
    let _ = writeln!(s, "[svm]\nc_grid = [1.0, 10.0, 100.0]\ngamma_grid = [1.0, 10.0]\n");
    let _ = writeln!(
        s,
        "[twitter]\nembedding_dim = {}\nmax_slices = {}\nmax_epochs = 30\npatience = 10\nloss = \"bce\"\nlr = 0.003\n",
        spec.dim, spec.max_slices
    );
    let _ = writeln!(
        s,
        "[twitter.parallel]\nfilter_heights = [2, 3]\nn_filters = 4\ndense = [16, 8]\n"
    );
    let _ = writeln!(
        s,
        "[twitter.sequential]\nkernels = [3, 2]\nchannels = [2, 3]\npool = 2\ndense = [16, 8]\n"
    );
    let _ = writeln!(
        s,
        "[backtest]\nstrategies = [\"buy_hold\", \"ma_cross\", \"ta\", \"fusion\"]\n"
    );
    for (name, first, last) in [("full", 1, last), ("early", 1, third), ("late", 2 * third, last)] {
        let _ = writeln!(
            s,
            "[[backtest.periods]]\nname = \"{name}\"\nfirst_day = {first}\nlast_day = {last}\n"
        );
    }
    s
}
