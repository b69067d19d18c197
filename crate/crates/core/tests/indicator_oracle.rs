mod common;

use common::{indicators_at, random_walk_panel, rel_err};
use extremo::features::{normalize, Feature, NormalizationRules};
use extremo::indicators::{compute_indicator_frame, IndicatorConfig, IndicatorRow};

fn library_values(r: &IndicatorRow) -> [f64; 13] {
    [
        r.ma7,
        r.ma21,
        r.ema,
        r.ema12,
        r.ema26,
        r.macd,
        r.sd20,
        r.boll_upper,
        r.boll_lower,
        r.spread,
        r.eth_close,
        r.gold_close,
        f64::from(r.ma_feature),
    ]
}

#[test]
fn indicators_match_definitions_on_random_walks() {
    for seed in [1, 2, 3] {
        let panel = random_walk_panel(1000, seed);
        let frame = compute_indicator_frame(&panel, &IndicatorConfig::default()).unwrap();
        assert_eq!(frame.len(), 1000 - 25);
        for (i, row) in frame.rows.iter().enumerate() {
            let expected = indicators_at(&panel, i + 25);
            for (k, (a, b)) in library_values(row).iter().zip(expected).enumerate() {
                assert!(rel_err(*a, b) <= 1e-9, "seed {seed} row {i} indicator {k}: {a} vs {b}");
            }
            assert_eq!(row.macd.to_bits(), (row.ema12 - row.ema26).to_bits());
        }
    }
}

#[test]
fn normalization_matches_elementwise_arithmetic_exactly() {
    let panel = random_walk_panel(300, 9);
    let frame = compute_indicator_frame(&panel, &IndicatorConfig::default()).unwrap();
    let features = normalize(&frame, &NormalizationRules::default()).unwrap();
    for (i, row) in features.rows.iter().enumerate() {
        let (prev, cur) = (&frame.rows[i], &frame.rows[i + 1]);
        let pc = prev.candle.close;
        let vs_close = |x: f64| (x - pc) / pc;
        let vs_own = |x: f64, p: f64| (x - p) / p;
        let c = &cur.candle;
        let expected = [
            (Feature::Open, vs_close(c.open)),
            (Feature::High, vs_close(c.high)),
            (Feature::Low, vs_close(c.low)),
            (Feature::Close, vs_close(c.close)),
            (Feature::AdjClose, vs_close(c.adj_close)),
            (Feature::Volume, vs_own(c.volume, prev.candle.volume)),
            (Feature::Ma7, vs_close(cur.ma7)),
            (Feature::Ma21, vs_close(cur.ma21)),
            (Feature::Ema, vs_close(cur.ema)),
            (Feature::Ema26, vs_close(cur.ema26)),
            (Feature::Ema12, vs_close(cur.ema12)),
            (Feature::Macd, cur.macd / pc),
            (Feature::Sd20, cur.sd20 / pc),
            (Feature::BollUpper, vs_close(cur.boll_upper)),
            (Feature::BollLower, vs_close(cur.boll_lower)),
            (Feature::Spread, cur.spread / pc),
            (Feature::MaFeature, f64::from(cur.ma_feature)),
            (Feature::Eth, vs_own(cur.eth_close, prev.eth_close)),
            (Feature::Gold, vs_own(cur.gold_close, prev.gold_close)),
        ];
        for (f, v) in expected {
            assert_eq!(row.get(f).to_bits(), v.to_bits(), "row {i} {}", f.name());
        }
    }
}
