//! Binary kernel SVM trained by sequential minimal optimization, plus
//! stratified k-fold grid search over `C` and `gamma` scored by positive-class F1.
//!
//! Labels are booleans, mapped to `-1`/`+1` internally. The solver works on the
//! standard dual: minimize `½αᵀQα − eᵀα` subject to `0 ≤ α ≤ C`, `yᵀα = 0`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion_eval::positive_f1;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("shape mismatch: expected dimension {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid parameters: {0}")]
    Config(String),
    #[error("invalid training data: {0}")]
    Validation(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("cannot build {k} stratified folds: {reason}")]
    Folds { k: usize, reason: String },
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SvmError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Rbf { gamma: f64 },
    Polynomial { degree: u32, gamma: f64, coef0: f64 },
    Linear,
}

impl KernelSpec {
    pub fn polynomial(gamma: f64) -> Self {
        KernelSpec::Polynomial {
            degree: 3,
            gamma,
            coef0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(SvmError::Config(format!("gamma must be positive, got {gamma}")))
            }
            KernelSpec::Polynomial { degree, gamma, coef0 } => {
                if degree == 0 {
                    Err(SvmError::Config("polynomial degree must be at least 1".into()))
                } else if !(gamma > 0.0 && gamma.is_finite()) {
                    Err(SvmError::Config(format!("gamma must be positive, got {gamma}")))
                } else if !coef0.is_finite() {
                    Err(SvmError::Config("coef0 must be finite".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Same kernel family with `gamma` replaced; linear kernels are unchanged.
    pub fn with_gamma(self, gamma: f64) -> Self {
        match self {
            KernelSpec::Rbf { .. } => KernelSpec::Rbf { gamma },
            KernelSpec::Polynomial { degree, coef0, .. } => KernelSpec::Polynomial { degree, gamma, coef0 },
            KernelSpec::Linear => KernelSpec::Linear,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            KernelSpec::Rbf { gamma } | KernelSpec::Polynomial { gamma, .. } => Some(gamma),
            KernelSpec::Linear => None,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(SvmError::Shape {
                expected: x.len(),
                got: y.len(),
            });
        }
        Ok(match self {
            KernelSpec::Rbf { .. } => self.of_sqdist(sqdist(x, y)),
            _ => self.of_dot(dot(x, y)),
        })
    }

    fn of_sqdist(&self, d2: f64) -> f64 {
        match *self {
            KernelSpec::Rbf { gamma } => (-gamma * d2).exp(),
            _ => unreachable!("only RBF is distance based"),
        }
    }

    fn of_dot(&self, d: f64) -> f64 {
        match *self {
            KernelSpec::Polynomial { degree, gamma, coef0 } => (gamma * d + coef0).powi(degree as i32),
            KernelSpec::Linear => d,
            KernelSpec::Rbf { .. } => unreachable!("RBF is distance based"),
        }
    }

    fn uses_distance(&self) -> bool {
        matches!(self, KernelSpec::Rbf { .. })
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.eval(x, y)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn sqdist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkingSet {
    /// Most violating pair (first-order).
    #[default]
    MaxViolatingPair,
    /// First index by maximal violation, second by largest guaranteed decrease.
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: KernelSpec,
    /// Stop once the maximal KKT violation gap drops below this.
    pub tol: f64,
    /// Cap on SMO pair updates.
    pub max_passes: usize,
    #[serde(default)]
    pub working_set: WorkingSet,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            kernel: KernelSpec::Rbf { gamma: 1.0 },
            tol: 1e-3,
            max_passes: 1_000_000,
            working_set: WorkingSet::default(),
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvmError::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(SvmError::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_passes == 0 {
            return Err(SvmError::Config("max_passes must be at least 1".into()));
        }
        self.kernel.validate()
    }
}

/// Mapping from decision value to probability.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Calibration {
    /// `1 / (1 + e^{-f})`
    #[default]
    RawLogistic,
    /// `1 / (1 + e^{a·f + b})` with externally supplied coefficients.
    Platt { a: f64, b: f64 },
}

impl Calibration {
    pub fn apply(&self, decision: f64) -> f64 {
        match *self {
            Calibration::RawLogistic => sigmoid(decision),
            Calibration::Platt { a, b } => sigmoid(-(a * decision + b)),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub iterations: usize,
    pub converged: bool,
    /// Final `m − M` violation gap.
    pub kkt_gap: f64,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub version: u32,
    pub kernel: KernelSpec,
    pub c: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `y_i · α_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    #[serde(default)]
    pub calibration: Calibration,
    pub stats: TrainStats,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if x.len() != dim {
            return Err(SvmError::Shape {
                expected: dim,
                got: x.len(),
            });
        }
        let mut sum = 0.0;
        for (sv, coef) in self.support_vectors.iter().zip(&self.dual_coefs) {
            sum += coef * self.kernel.eval(sv, x)?;
        }
        Ok(sum + self.bias)
    }

    pub fn decision_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.decision(x)).collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(self.calibration.apply(self.decision(x)?))
    }

    pub fn predict_proba_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self
            .decision_batch(xs)?
            .into_iter()
            .map(|d| self.calibration.apply(d))
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<bool> {
        Ok(self.decision(x)? > 0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: SvmModel = serde_json::from_str(s)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(SvmError::Version(model.version));
        }
        if model.support_vectors.len() != model.dual_coefs.len() {
            return Err(SvmError::Validation(
                "support vector and coefficient counts differ".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn decision(model: &SvmModel, x: &[f64]) -> Result<f64> {
    model.decision(x)
}

pub fn predict_proba(model: &SvmModel, x: &[f64]) -> Result<f64> {
    model.predict_proba(x)
}

/// Full dual solution over the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub stats: TrainStats,
}

/// Pairwise dot products and squared distances, computed once per data set
/// and shared across kernels and folds.
#[derive(Debug, Clone)]
pub struct PairwiseCache {
    n: usize,
    dot: Vec<f64>,
    sqdist: Vec<f64>,
}

impl PairwiseCache {
    pub fn new(x: &[Vec<f64>]) -> Self {
        let n = x.len();
        let rows: Vec<(Vec<f64>, Vec<f64>)> = x
            .par_iter()
            .map(|xi| {
                let d: Vec<f64> = x.iter().map(|xj| dot(xi, xj)).collect();
                let s: Vec<f64> = x.iter().map(|xj| sqdist(xi, xj)).collect();
                (d, s)
            })
            .collect();
        let mut dot_m = Vec::with_capacity(n * n);
        let mut sq_m = Vec::with_capacity(n * n);
        for (d, s) in rows {
            dot_m.extend(d);
            sq_m.extend(s);
        }
        Self {
            n,
            dot: dot_m,
            sqdist: sq_m,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Kernel matrix restricted to `idx` (row-major, `idx.len()²`).
    pub fn kernel_matrix(&self, kernel: &KernelSpec, idx: &[usize]) -> Vec<f64> {
        let src = if kernel.uses_distance() {
            &self.sqdist
        } else {
            &self.dot
        };
        let mut k = Vec::with_capacity(idx.len() * idx.len());
        for &i in idx {
            let row = &src[i * self.n..(i + 1) * self.n];
            k.extend(idx.iter().map(|&j| {
                if kernel.uses_distance() {
                    kernel.of_sqdist(row[j])
                } else {
                    kernel.of_dot(row[j])
                }
            }));
        }
        k
    }
}

fn validate_data(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(SvmError::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(SvmError::Training(format!("need at least 2 samples, got {}", x.len())));
    }
    let dim = x[0].len();
    if dim == 0 {
        return Err(SvmError::Validation("zero-dimensional samples".into()));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != dim {
            return Err(SvmError::Shape {
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::Validation(format!("non-finite feature in sample {i}")));
        }
    }
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == y.len() {
        return Err(SvmError::Training("both classes must be present".into()));
    }
    Ok(dim)
}

/// Trains on `x`/`y` and keeps only the support vectors.
pub fn train_smo(x: &[Vec<f64>], y: &[bool], params: &SvmParams) -> Result<SvmModel> {
    let solution = solve_smo(x, y, params)?;
    Ok(solution.into_model(x, y, params))
}

/// Trains and returns the dual variables for every training sample.
pub fn solve_smo(x: &[Vec<f64>], y: &[bool], params: &SvmParams) -> Result<SmoSolution> {
    params.validate()?;
    validate_data(x, y)?;
    let cache = PairwiseCache::new(x);
    let idx: Vec<usize> = (0..x.len()).collect();
    let k = cache.kernel_matrix(&params.kernel, &idx);
    Ok(smo_on_kernel(&k, y, params))
}

impl SmoSolution {
    pub fn into_model(self, x: &[Vec<f64>], y: &[bool], params: &SvmParams) -> SvmModel {
        let mut support_vectors = Vec::new();
        let mut dual_coefs = Vec::new();
        for ((xi, &yi), &a) in x.iter().zip(y).zip(&self.alphas) {
            if a > 0.0 {
                support_vectors.push(xi.clone());
                dual_coefs.push(if yi { a } else { -a });
            }
        }
        SvmModel {
            version: MODEL_FORMAT_VERSION,
            kernel: params.kernel,
            c: params.c,
            support_vectors,
            dual_coefs,
            bias: self.bias,
            calibration: Calibration::default(),
            stats: self.stats,
        }
    }
}

/// SMO on a precomputed kernel matrix `k` (row-major `n×n`).
fn smo_on_kernel(k: &[f64], labels: &[bool], params: &SvmParams) -> SmoSolution {
    const TAU: f64 = 1e-12;
    let n = labels.len();
    let c = params.c;
    let y: Vec<f64> = labels.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
    let mut alpha = vec![0.0; n];
    // Gradient of the dual objective: Qα − e.
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let (mut m_up, mut m_low);
    loop {
        let mut i = usize::MAX;
        m_up = f64::NEG_INFINITY;
        m_low = f64::INFINITY;
        let mut j_first = usize::MAX;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > m_up {
                m_up = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < m_low {
                m_low = v;
                j_first = t;
            }
        }
        if i == usize::MAX || j_first == usize::MAX || m_up - m_low < params.tol {
            break;
        }
        if iterations >= params.max_passes {
            break;
        }
        let j = match params.working_set {
            WorkingSet::MaxViolatingPair => j_first,
            WorkingSet::SecondOrder => {
                let k_ii = k[i * n + i];
                let row_i = &k[i * n..(i + 1) * n];
                let mut best = usize::MAX;
                let mut best_gain = f64::NEG_INFINITY;
                for t in 0..n {
                    if !in_low(alpha[t], y[t]) {
                        continue;
                    }
                    let b = m_up + y[t] * grad[t];
                    if b <= 0.0 {
                        continue;
                    }
                    let a = (k_ii + k[t * n + t] - 2.0 * row_i[t]).max(TAU);
                    let gain = b * b / a;
                    if gain > best_gain {
                        best_gain = gain;
                        best = t;
                    }
                }
                best
            }
        };
        iterations += 1;

        // Move α_i by y_i·t and α_j by −y_j·t, which preserves yᵀα.
        let b = m_up + y[j] * grad[j];
        let a = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(TAU);
        let cap_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let cap_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        let step = b / a;
        let t = step.min(cap_i).min(cap_j);
        if t <= 0.0 {
            // Numerically stuck pair; further progress is impossible.
            break;
        }
        alpha[i] += y[i] * t;
        alpha[j] -= y[j] * t;
        if t == cap_i {
            alpha[i] = if y[i] > 0.0 { c } else { 0.0 };
        }
        if t == cap_j {
            alpha[j] = if y[j] > 0.0 { 0.0 } else { c };
        }
        alpha[i] = alpha[i].clamp(0.0, c);
        alpha[j] = alpha[j].clamp(0.0, c);

        let row_i = &k[i * n..(i + 1) * n];
        let row_j = &k[j * n..(j + 1) * n];
        for s in 0..n {
            grad[s] += t * y[s] * (row_i[s] - row_j[s]);
        }
    }
    let gap = if m_up.is_finite() && m_low.is_finite() {
        (m_up - m_low).max(0.0)
    } else {
        0.0
    };
    let converged = gap < params.tol;
    if !converged {
        log::warn!(
            "SMO stopped after {iterations} updates without converging (gap {gap:.3e}, tol {:.1e})",
            params.tol
        );
    }

    // Free vectors pin the bias exactly; otherwise any value in [M, m] satisfies KKT.
    let free: Vec<f64> = (0..n)
        .filter(|&t| alpha[t] > 0.0 && alpha[t] < c)
        .map(|t| -y[t] * grad[t])
        .collect();
    let bias = if free.is_empty() {
        if m_up.is_finite() && m_low.is_finite() {
            0.5 * (m_up + m_low)
        } else if m_up.is_finite() {
            m_up
        } else {
            m_low
        }
    } else {
        let mean = free.iter().sum::<f64>() / free.len() as f64;
        if m_up.is_finite() && m_low.is_finite() && m_low <= m_up {
            mean.clamp(m_low, m_up)
        } else {
            mean
        }
    };

    SmoSolution {
        alphas: alpha,
        bias,
        stats: TrainStats {
            iterations,
            converged,
            kkt_gap: gap,
        },
    }
}

/// Per-sample KKT violation of a trained model, recomputed from its decision function.
///
/// With `g = y·f(x) − 1`: `max(0, −g)` at `α = 0`, `max(0, g)` at `α = C`, `|g|` otherwise.
pub fn kkt_residuals(model: &SvmModel, x: &[Vec<f64>], y: &[bool], alphas: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.len() != alphas.len() {
        return Err(SvmError::Shape {
            expected: x.len(),
            got: alphas.len().min(y.len()),
        });
    }
    let decisions = model.decision_batch(x)?;
    Ok(decisions
        .iter()
        .zip(y)
        .zip(alphas)
        .map(|((&f, &yi), &a)| {
            let g = if yi { f } else { -f } - 1.0;
            if a <= 0.0 {
                (-g).max(0.0)
            } else if a >= model.c {
                g.max(0.0)
            } else {
                g.abs()
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            c: vec![1.0, 10.0, 30.0, 50.0, 100.0, 500.0, 1000.0],
            gamma: vec![0.1, 0.5, 1.0, 10.0, 50.0],
        }
    }
}

impl Grid {
    /// Grid points ordered by `C`, then `gamma`, both ascending.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut c = self.c.clone();
        let mut g = self.gamma.clone();
        c.sort_by(f64::total_cmp);
        g.sort_by(f64::total_cmp);
        c.dedup();
        g.dedup();
        c.iter().flat_map(|&ci| g.iter().map(move |&gi| (ci, gi))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchConfig {
    pub grid: Grid,
    pub k: usize,
    pub seed: u64,
    /// Kernel family, tolerance and iteration cap; `C` and `gamma` come from the grid.
    pub base: SvmParams,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            k: 4,
            seed: 0,
            base: SvmParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    pub gamma: f64,
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub points: Vec<GridPoint>,
    pub best: SvmParams,
    pub best_mean_f1: f64,
    pub k: usize,
    pub seed: u64,
}

/// Fold index for each sample: each class is shuffled separately and dealt round-robin.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(SvmError::Folds {
            k,
            reason: "need at least 2 folds".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; y.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if idx.len() < k {
            return Err(SvmError::Folds {
                k,
                reason: format!("class {class} has only {} samples", idx.len()),
            });
        }
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    Ok(folds)
}

fn split_fold(folds: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != fold)
}

fn fit_on_indices(cache: &PairwiseCache, x: &[Vec<f64>], y: &[bool], train: &[usize], params: &SvmParams) -> SvmModel {
    let k = cache.kernel_matrix(&params.kernel, train);
    let y_train: Vec<bool> = train.iter().map(|&i| y[i]).collect();
    let x_train: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
    smo_on_kernel(&k, &y_train, params).into_model(&x_train, &y_train, params)
}

pub fn grid_search(x: &[Vec<f64>], y: &[bool], cfg: &GridSearchConfig) -> Result<CvReport> {
    validate_data(x, y)?;
    cfg.base.validate()?;
    let points = cfg.grid.points();
    if points.is_empty() {
        return Err(SvmError::Config("empty grid".into()));
    }
    let param_sets: Vec<SvmParams> = points
        .iter()
        .map(|&(c, gamma)| {
            let p = SvmParams {
                c,
                kernel: cfg.base.kernel.with_gamma(gamma),
                ..cfg.base
            };
            p.validate().map(|_| p)
        })
        .collect::<Result<_>>()?;
    let folds = stratified_folds(y, cfg.k, cfg.seed)?;
    let cache = PairwiseCache::new(x);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..cfg.k).map(|f| split_fold(&folds, f)).collect();

    let jobs: Vec<(usize, usize)> = (0..param_sets.len())
        .flat_map(|p| (0..cfg.k).map(move |f| (p, f)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(p, f)| {
            let (train, test) = &splits[f];
            let model = fit_on_indices(&cache, x, y, train, &param_sets[p]);
            let truth: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            let pred: Vec<bool> = test
                .iter()
                .map(|&i| model.decision(&x[i]).map(|d| d > 0.0))
                .collect::<Result<_>>()?;
            Ok(positive_f1(&pred, &truth))
        })
        .collect::<Result<_>>()?;

    let grid_points: Vec<GridPoint> = points
        .iter()
        .enumerate()
        .map(|(p, &(c, gamma))| {
            let fold_f1 = scores[p * cfg.k..(p + 1) * cfg.k].to_vec();
            let mean_f1 = fold_f1.iter().sum::<f64>() / cfg.k as f64;
            GridPoint {
                c,
                gamma,
                fold_f1,
                mean_f1,
            }
        })
        .collect();
    // Points are ordered by (C, gamma), so the first maximum wins ties.
    let mut best = 0;
    for (p, gp) in grid_points.iter().enumerate() {
        if gp.mean_f1 > grid_points[best].mean_f1 {
            best = p;
        }
    }
    Ok(CvReport {
        best: param_sets[best],
        best_mean_f1: grid_points[best].mean_f1,
        points: grid_points,
        k: cfg.k,
        seed: cfg.seed,
    })
}

/// Decision value of every sample from a model that never saw it (stratified k-fold).
pub fn out_of_fold_decisions(x: &[Vec<f64>], y: &[bool], params: &SvmParams, k: usize, seed: u64) -> Result<Vec<f64>> {
    validate_data(x, y)?;
    params.validate()?;
    let folds = stratified_folds(y, k, seed)?;
    let cache = PairwiseCache::new(x);
    let per_fold: Vec<(Vec<usize>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (train, test) = split_fold(&folds, f);
            let model = fit_on_indices(&cache, x, y, &train, params);
            let d = test
                .iter()
                .map(|&i| model.decision(&x[i]))
                .collect::<Result<Vec<_>>>()?;
            Ok((test, d))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; x.len()];
    for (test, d) in per_fold {
        for (i, v) in test.into_iter().zip(d) {
            out[i] = v;
        }
    }
    Ok(out)
}
