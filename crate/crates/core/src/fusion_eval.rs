//! Late fusion of the tweet-model and TA-model probabilities, decision
//! thresholds, confusion matrices and classification reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svm::{self, sigmoid, SvmError, SvmModel, SvmParams};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("length mismatch: {left} vs {right}")]
    Shape { left: usize, right: usize },
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Svm(#[from] SvmError),
}

pub type Result<T, E = FusionError> = std::result::Result<T, E>;

/// Positive-class probabilities of the two base models for one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbPair {
    pub p_twitter: f64,
    pub p_ta: f64,
}

impl ProbPair {
    pub fn as_array(&self) -> [f64; 2] {
        [self.p_twitter, self.p_ta]
    }
}

pub fn build_fusion_input(p_twitter: f64, p_ta: f64) -> Result<ProbPair> {
    for (name, p) in [("twitter", p_twitter), ("ta", p_ta)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(FusionError::Validation(format!(
                "{name} probability {p} outside [0, 1]"
            )));
        }
    }
    Ok(ProbPair { p_twitter, p_ta })
}

/// Where the base-model probabilities used to train the fusion stage come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Predictions on the same samples the base models were fitted on.
    InSample,
    /// Predictions from models that did not see the sample.
    #[default]
    OutOfFold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub w: [f64; 2],
    pub b: f64,
}

impl LogisticModel {
    pub fn predict_proba(&self, pair: &ProbPair) -> f64 {
        sigmoid(self.w[0] * pair.p_twitter + self.w[1] * pair.p_ta + self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FusionModel {
    Svm { model: SvmModel },
    Logistic(LogisticModel),
}

impl FusionModel {
    pub fn predict_proba(&self, pair: &ProbPair) -> Result<f64> {
        match self {
            FusionModel::Svm { model } => Ok(model.predict_proba(&pair.as_array())?),
            FusionModel::Logistic(m) => Ok(m.predict_proba(pair)),
        }
    }

    pub fn predict_proba_batch(&self, pairs: &[ProbPair]) -> Result<Vec<f64>> {
        pairs.iter().map(|p| self.predict_proba(p)).collect()
    }

    pub fn describe(&self) -> String {
        match self {
            FusionModel::Svm { model } => match model.kernel {
                svm::KernelSpec::Rbf { gamma } => format!("rbf, C = {}, gamma = {}", model.c, gamma),
                svm::KernelSpec::Polynomial { degree, gamma, .. } => {
                    format!("polynomial (degree {degree}), C = {}, gamma = {}", model.c, gamma)
                }
                svm::KernelSpec::Linear => format!("linear, C = {}", model.c),
            },
            FusionModel::Logistic(_) => "Logistic regression".into(),
        }
    }
}

pub fn fusion_predict_proba(model: &FusionModel, pair: &ProbPair) -> Result<f64> {
    model.predict_proba(pair)
}

fn check_two_classes(labels: &[bool]) -> Result<()> {
    let pos = labels.iter().filter(|&&v| v).count();
    if pos == 0 || pos == labels.len() {
        return Err(FusionError::Training("both classes must be present".into()));
    }
    Ok(())
}

fn logistic_objective(pairs: &[ProbPair], labels: &[bool], l2: f64, theta: &[f64; 3]) -> f64 {
    let mut loss = 0.0;
    for (p, &y) in pairs.iter().zip(labels) {
        let z = theta[0] * p.p_twitter + theta[1] * p.p_ta + theta[2];
        // log(1 + e^{-s}) with s = ±z, computed stably.
        let s = if y { z } else { -z };
        loss += if s > 0.0 {
            (-s).exp().ln_1p()
        } else {
            -s + s.exp().ln_1p()
        };
    }
    loss + 0.5 * l2 * (theta[0] * theta[0] + theta[1] * theta[1])
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for r in 0..3 {
        m[r][..3].copy_from_slice(&a[r]);
        m[r][3] = b[r];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// L2-regularized logistic regression (bias unpenalized) by damped Newton steps.
pub fn fit_logistic(pairs: &[ProbPair], labels: &[bool], l2: f64, max_iter: usize) -> Result<LogisticModel> {
    if pairs.len() != labels.len() {
        return Err(FusionError::Shape {
            left: pairs.len(),
            right: labels.len(),
        });
    }
    check_two_classes(labels)?;
    if !(l2 >= 0.0) {
        return Err(FusionError::Validation(format!("l2 must be non-negative, got {l2}")));
    }
    let mut theta = [0.0f64; 3];
    let mut obj = logistic_objective(pairs, labels, l2, &theta);
    for _ in 0..max_iter {
        let mut grad = [l2 * theta[0], l2 * theta[1], 0.0];
        let mut hess = [[0.0; 3]; 3];
        hess[0][0] = l2;
        hess[1][1] = l2;
        for (p, &y) in pairs.iter().zip(labels) {
            let x = [p.p_twitter, p.p_ta, 1.0];
            let z = theta[0] * x[0] + theta[1] * x[1] + theta[2];
            let mu = sigmoid(z);
            let r = mu - if y { 1.0 } else { 0.0 };
            let s = mu * (1.0 - mu);
            for a in 0..3 {
                grad[a] += r * x[a];
                for b in 0..3 {
                    hess[a][b] += s * x[a] * x[b];
                }
            }
        }
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-10 {
            break;
        }
        for (d, row) in hess.iter_mut().enumerate() {
            row[d] += 1e-10;
        }
        let Some(step) = solve3(hess, grad) else {
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-12 {
            let cand = [theta[0] - t * step[0], theta[1] - t * step[1], theta[2] - t * step[2]];
            let cand_obj = logistic_objective(pairs, labels, l2, &cand);
            if cand_obj < obj {
                theta = cand;
                obj = cand_obj;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(LogisticModel {
        w: [theta[0], theta[1]],
        b: theta[2],
    })
}

pub fn fit_fusion_svm(pairs: &[ProbPair], labels: &[bool], params: &SvmParams) -> Result<FusionModel> {
    if pairs.len() != labels.len() {
        return Err(FusionError::Shape {
            left: pairs.len(),
            right: labels.len(),
        });
    }
    check_two_classes(labels)?;
    let x: Vec<Vec<f64>> = pairs.iter().map(|p| p.as_array().to_vec()).collect();
    Ok(FusionModel::Svm {
        model: svm::train_smo(&x, labels, params)?,
    })
}

/// Positive iff `prob > tau`.
pub fn apply_threshold(probs: &[f64], tau: f64) -> Result<Vec<bool>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(FusionError::Validation(format!("threshold {tau} outside (0, 1)")));
    }
    Ok(probs.iter().map(|&p| p > tau).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn predicted_positive(&self) -> usize {
        self.tp + self.fp
    }
}

pub fn confusion(preds: &[bool], labels: &[bool]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(FusionError::Shape {
            left: preds.len(),
            right: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Positive-class F1, 0 when undefined.
pub fn positive_f1(preds: &[bool], labels: &[bool]) -> f64 {
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    let denom = 2 * cm.tp + cm.fp + cm.fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * cm.tp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Set when the corresponding ratio was 0/0 and reported as 0.
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    pub f1_degenerate: bool,
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let (precision, precision_degenerate) = ratio(tp, tp + fp);
        let (recall, recall_degenerate) = ratio(tp, tp + fn_);
        let (f1, f1_degenerate) = if precision + recall == 0.0 {
            (0.0, true)
        } else {
            (2.0 * precision * recall / (precision + recall), false)
        };
        Self {
            precision,
            recall,
            f1,
            support: tp + fn_,
            precision_degenerate,
            recall_degenerate,
            f1_degenerate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub positive: ClassMetrics,
    pub negative: ClassMetrics,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub total: usize,
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(FusionError::Validation("cannot report on zero samples".into()));
    }
    let positive = ClassMetrics::from_counts(cm.tp, cm.fp, cm.fn_);
    let negative = ClassMetrics::from_counts(cm.tn, cm.fn_, cm.fp);
    let weighted_f1 = (positive.f1 * positive.support as f64 + negative.f1 * negative.support as f64) / total as f64;
    Ok(ClassificationReport {
        positive,
        negative,
        weighted_f1,
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub tau: f64,
    pub n_positive: usize,
    pub confusion: ConfusionMatrix,
    pub report: ClassificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub results: Vec<ThresholdResult>,
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 0.95, 0.99];

pub fn sweep_thresholds(probs: &[f64], labels: &[bool], taus: &[f64]) -> Result<ThresholdSweep> {
    if probs.len() != labels.len() {
        return Err(FusionError::Shape {
            left: probs.len(),
            right: labels.len(),
        });
    }
    if taus.is_empty() {
        return Err(FusionError::Validation("no thresholds given".into()));
    }
    if taus.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(FusionError::Validation("thresholds must be sorted ascending".into()));
    }
    let results: Vec<ThresholdResult> = taus
        .par_iter()
        .map(|&tau| {
            let preds = apply_threshold(probs, tau)?;
            let cm = confusion(&preds, labels)?;
            Ok(ThresholdResult {
                tau,
                n_positive: cm.predicted_positive(),
                confusion: cm,
                report: report(&cm)?,
            })
        })
        .collect::<Result<_>>()?;
    assert!(
        results.windows(2).all(|w| w[1].n_positive <= w[0].n_positive),
        "positive count must not increase with the threshold"
    );
    Ok(ThresholdSweep { results })
}

/// One row of a model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub report: ClassificationReport,
    pub parameters: String,
}

fn metric(v: f64, degenerate: bool) -> String {
    if degenerate {
        format!("{v:.3}*")
    } else {
        format!("{v:.3}")
    }
}

/// Aligned text table with precision, recall and F1 per class, weighted F1 and accuracy.
/// Values marked `*` were undefined (0/0) and are shown as 0.
pub fn format_report_table(rows: &[ReportRow]) -> String {
    let header = [
        "Model",
        "Precision T",
        "Precision F",
        "Recall T",
        "Recall F",
        "F1 T",
        "F1 F",
        "F1 Weighted",
        "Accuracy",
        "Parameters",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let (p, n) = (&r.report.positive, &r.report.negative);
            vec![
                r.model.clone(),
                metric(p.precision, p.precision_degenerate),
                metric(n.precision, n.precision_degenerate),
                metric(p.recall, p.recall_degenerate),
                metric(n.recall, n.recall_degenerate),
                metric(p.f1, p.f1_degenerate),
                metric(n.f1, n.f1_degenerate),
                format!("{:.3}", r.report.weighted_f1),
                format!("{:.3}", r.report.accuracy),
                r.parameters.clone(),
            ]
        })
        .collect();
    aligned_table(&header, &body)
}

/// Left-aligned first column, right-aligned numeric columns, last column left-aligned.
pub fn aligned_table(header: &[&str], body: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let rendered: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 || i == cols - 1 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", rendered.join("  ").trim_end());
    };
    line(header.to_vec());
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(rule.iter().map(String::as_str).collect());
    for row in body {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svm::KernelSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fusion_input_examples() {
        assert_eq!(build_fusion_input(0.7, 0.4).unwrap().as_array(), [0.7, 0.4]);
        assert_eq!(build_fusion_input(0.0, 1.0).unwrap().as_array(), [0.0, 1.0]);
        assert!(matches!(build_fusion_input(1.2, 0.4), Err(FusionError::Validation(_))));
    }

    #[test]
    fn logistic_predict_examples() {
        let zero = LogisticModel { w: [0.0, 0.0], b: 0.0 };
        assert_eq!(
            zero.predict_proba(&ProbPair {
                p_twitter: 0.3,
                p_ta: 0.9
            }),
            0.5
        );
        let ones = LogisticModel { w: [1.0, 1.0], b: 0.0 };
        assert_eq!(
            ones.predict_proba(&ProbPair {
                p_twitter: 0.0,
                p_ta: 0.0
            }),
            0.5
        );
    }

    fn pair(a: f64, b: f64) -> ProbPair {
        ProbPair { p_twitter: a, p_ta: b }
    }

    #[test]
    fn logistic_separates_separable_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let pos = i % 3 == 0;
            let base = if pos { 0.7 } else { 0.1 };
            pairs.push(pair(base + 0.2 * rng.random::<f64>(), rng.random::<f64>()));
            labels.push(pos);
        }
        let m = fit_logistic(&pairs, &labels, 1e-8, 100).unwrap();
        let correct = pairs
            .iter()
            .zip(&labels)
            .filter(|(p, &l)| (m.predict_proba(p) > 0.5) == l)
            .count();
        assert_eq!(correct, pairs.len());
    }

    #[test]
    fn strong_l2_recovers_class_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs: Vec<ProbPair> = (0..400).map(|_| pair(rng.random(), rng.random())).collect();
        let labels: Vec<bool> = (0..400).map(|i| i % 4 == 0).collect();
        let m = fit_logistic(&pairs, &labels, 1e6, 100).unwrap();
        assert!(m.w[0].abs() < 1e-3 && m.w[1].abs() < 1e-3);
        let p = m.predict_proba(&pair(0.5, 0.5));
        assert!((p - 0.25).abs() < 1e-3, "{p}");
    }

    #[test]
    fn mirrored_data_has_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..100 {
            let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
            let l = a + 0.3 * rng.random::<f64>() > 0.6;
            // Mirror through (0.5, 0.5): p -> 1 - p, label flipped.
            pairs.push(pair(a - 0.5, b - 0.5));
            labels.push(l);
            pairs.push(pair(0.5 - a, 0.5 - b));
            labels.push(!l);
        }
        let m = fit_logistic(&pairs, &labels, 0.1, 100).unwrap();
        assert!(m.b.abs() < 1e-9, "{}", m.b);
    }

    #[test]
    fn single_class_is_training_error() {
        assert!(matches!(
            fit_logistic(&[pair(0.1, 0.2), pair(0.3, 0.4)], &[true, true], 1.0, 10),
            Err(FusionError::Training(_))
        ));
    }

    #[test]
    fn fusion_svm_matches_svm_module() {
        let pairs: Vec<ProbPair> = (0..40)
            .map(|i| pair((i as f64) / 40.0, ((i * 7) % 40) as f64 / 40.0))
            .collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.p_twitter + 0.5 * p.p_ta > 0.7).collect();
        let params = SvmParams {
            c: 10.0,
            kernel: KernelSpec::polynomial(1.0),
            ..SvmParams::default()
        };
        let fused = fit_fusion_svm(&pairs, &labels, &params).unwrap();
        let x: Vec<Vec<f64>> = pairs.iter().map(|p| p.as_array().to_vec()).collect();
        let direct = svm::train_smo(&x, &labels, &params).unwrap();
        for p in &pairs {
            assert_eq!(
                fused.predict_proba(p).unwrap(),
                svm::predict_proba(&direct, &p.as_array()).unwrap()
            );
        }
    }

    #[test]
    fn threshold_examples() {
        let probs = [0.2, 0.6, 0.96, 0.995];
        assert_eq!(apply_threshold(&probs, 0.95).unwrap(), [false, false, true, true]);
        assert_eq!(apply_threshold(&probs, 0.99).unwrap(), [false, false, false, true]);
        assert_eq!(apply_threshold(&probs, 0.5).unwrap(), [false, true, true, true]);
        assert_eq!(apply_threshold(&[0.5], 0.5).unwrap(), [false]);
        assert!(apply_threshold(&probs, 1.0).is_err());
    }

    fn ten_sample_set() -> (Vec<bool>, Vec<bool>) {
        let preds = vec![true, true, true, false, false, false, false, false, false, false];
        let labels = vec![true, true, false, true, false, false, false, false, false, false];
        (preds, labels)
    }

    #[test]
    fn confusion_examples() {
        let (preds, labels) = ten_sample_set();
        let cm = confusion(&preds, &labels).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                tp: 2,
                fp: 1,
                fn_: 1,
                tn: 6
            }
        );
        let same = confusion(&labels, &labels).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        let flipped: Vec<bool> = labels.iter().map(|v| !v).collect();
        let inv = confusion(&flipped, &labels).unwrap();
        assert_eq!((inv.tp, inv.tn), (0, 0));
        assert!(confusion(&[true], &[true, false]).is_err());
    }

    #[test]
    fn report_examples() {
        let r = report(&ConfusionMatrix {
            tp: 2,
            fp: 1,
            fn_: 1,
            tn: 6,
        })
        .unwrap();
        assert!((r.positive.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.positive.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.positive.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.accuracy - 0.8).abs() < 1e-12);
        // Negative class: tp = 6, fp = 1, fn = 1.
        assert!((r.negative.f1 - 6.0 / 7.0).abs() < 1e-12);
        assert!((r.weighted_f1 - (3.0 * 2.0 / 3.0 + 7.0 * 6.0 / 7.0) / 10.0).abs() < 1e-12);

        let perfect = report(&ConfusionMatrix {
            tp: 3,
            fp: 0,
            fn_: 0,
            tn: 4,
        })
        .unwrap();
        assert_eq!(
            [
                perfect.positive.precision,
                perfect.positive.recall,
                perfect.positive.f1,
                perfect.weighted_f1,
                perfect.accuracy
            ],
            [1.0; 5]
        );

        let none = report(&ConfusionMatrix {
            tp: 0,
            fp: 0,
            fn_: 4,
            tn: 6,
        })
        .unwrap();
        assert!(none.positive.precision_degenerate);
        assert_eq!(none.positive.precision, 0.0);
        assert_eq!(none.positive.recall, 0.0);
        assert!(!none.positive.recall_degenerate);
        assert!(report(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn sweep_examples() {
        let probs = [0.2, 0.6, 0.96, 0.995, 0.97];
        let labels = [false, true, true, true, false];
        let s = sweep_thresholds(&probs, &labels, &DEFAULT_THRESHOLDS).unwrap();
        let counts: Vec<usize> = s.results.iter().map(|r| r.n_positive).collect();
        assert_eq!(counts, [4, 3, 1]);
        let above = sweep_thresholds(&probs, &labels, &[0.999]).unwrap();
        assert_eq!(above.results[0].n_positive, 0);
        let single = sweep_thresholds(&probs, &labels, &[0.95]).unwrap();
        let composed = confusion(&apply_threshold(&probs, 0.95).unwrap(), &labels).unwrap();
        assert_eq!(single.results[0].confusion, composed);
        assert!(matches!(
            sweep_thresholds(&probs, &labels, &[0.9, 0.5]),
            Err(FusionError::Validation(_))
        ));
    }

    #[test]
    fn precision_rises_on_monotone_fixture() {
        // Higher probability samples are increasingly likely to be true positives.
        let probs: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let labels: Vec<bool> = (0..100).map(|i| i >= 90 || (i >= 50 && i % 2 == 0)).collect();
        let s = sweep_thresholds(&probs, &labels, &[0.3, 0.5, 0.7, 0.9, 0.95]).unwrap();
        for w in s.results.windows(2) {
            if w[1].confusion.tp > 0 {
                assert!(w[1].report.positive.precision >= w[0].report.positive.precision);
            }
        }
    }

    #[test]
    fn table_is_aligned() {
        let r = report(&ConfusionMatrix {
            tp: 2,
            fp: 1,
            fn_: 1,
            tn: 6,
        })
        .unwrap();
        let text = format_report_table(&[
            ReportRow {
                model: "TA".into(),
                report: r,
                parameters: "rbf, C = 1, gamma = 0.1".into(),
            },
            ReportRow {
                model: "Fusion model".into(),
                report: r,
                parameters: "Logistic regression".into(),
            },
        ]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("Model"));
        let col = lines[0].find("Accuracy").unwrap();
        assert_eq!(&lines[2][col..col + 8], "   0.800");
    }

    proptest! {
        #[test]
        fn positives_nested_in_threshold(probs in proptest::collection::vec(0.0f64..1.0, 1..60), t1 in 0.01f64..0.98, dt in 0.0f64..0.5) {
            let t2 = (t1 + dt).min(0.99);
            let a = apply_threshold(&probs, t1).unwrap();
            let b = apply_threshold(&probs, t2).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(!*y || *x);
            }
            let labels: Vec<bool> = probs.iter().map(|p| (p * 1000.0) as u64 % 2 == 0).collect();
            let ca = confusion(&a, &labels).unwrap();
            let cb = confusion(&b, &labels).unwrap();
            prop_assert!(cb.tp <= ca.tp && cb.fp <= ca.fp);
        }

        #[test]
        fn weighted_f1_between_class_f1s(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50, tn in 0usize..50) {
            prop_assume!(tp + fp + fn_ + tn > 0);
            let r = report(&ConfusionMatrix { tp, fp, fn_, tn }).unwrap();
            let lo = r.positive.f1.min(r.negative.f1);
            let hi = r.positive.f1.max(r.negative.f1);
            prop_assert!(r.weighted_f1 >= lo - 1e-12 && r.weighted_f1 <= hi + 1e-12);
            for v in [r.positive.precision, r.positive.recall, r.negative.precision, r.negative.recall, r.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn self_confusion_is_perfect(labels in proptest::collection::vec(any::<bool>(), 1..60)) {
            let r = report(&confusion(&labels, &labels).unwrap()).unwrap();
            prop_assert_eq!(r.accuracy, 1.0);
        }
    }
}
