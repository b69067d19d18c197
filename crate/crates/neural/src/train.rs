//! Mini-batch training with a stratified validation split, best-epoch snapshots and early stopping.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::layers::softmax2;
use crate::loss::LossKind;
use crate::model::{Mode, Model, ModelSpec};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::NeuralError;

/// Per-batch gradients are computed over this many contiguous chunks and summed in order,
/// so results do not depend on the thread count.
const GRAD_CHUNKS: usize = 8;

/// Random-access samples; `input` writes one flattened `slices × dim` matrix.
pub trait Dataset: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn input_len(&self) -> usize;
    fn input(&self, i: usize, out: &mut [f64]);
    fn label(&self, i: usize) -> bool;
}

#[derive(Debug, Clone, PartialEq)]
pub struct InMemoryDataset {
    input_len: usize,
    inputs: Vec<Vec<f64>>,
    labels: Vec<bool>,
}

impl InMemoryDataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Self, NeuralError> {
        if inputs.len() != labels.len() {
            return Err(NeuralError::Shape(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let input_len = inputs.first().map_or(0, Vec::len);
        if let Some(bad) = inputs.iter().position(|x| x.len() != input_len) {
            return Err(NeuralError::Shape(format!("sample {bad} has a different input length")));
        }
        Ok(Self {
            input_len,
            inputs,
            labels,
        })
    }
}

impl Dataset for InMemoryDataset {
    fn len(&self) -> usize {
        self.inputs.len()
    }
    fn input_len(&self) -> usize {
        self.input_len
    }
    fn input(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.inputs[i]);
    }
    fn label(&self, i: usize) -> bool {
        self.labels[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub adam: AdamConfig,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            patience: 5,
            batch_size: 32,
            val_fraction: 0.1,
            adam: AdamConfig::default(),
            loss: LossKind::Bce,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(NeuralError::Config("epochs and batch size must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(NeuralError::Config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        self.loss.validate().map_err(NeuralError::Config)?;
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub first_batch_loss: f64,
}

/// Holds out `fraction` of each class (at least one sample of any class with two or more).
fn stratified_split(labels: &[bool], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let n_val = if idx.len() >= 2 {
            ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn f1_at_half(probs: &[f64], labels: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p > 0.5, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Summed loss and parameter gradient over `batch`, with one dropout mask set per sample.
fn batch_gradient(
    model: &Model,
    data: &dyn Dataset,
    batch: &[usize],
    masks: &[Vec<Vec<f64>>],
    loss: &LossKind,
) -> Result<(f64, Vec<f64>), NeuralError> {
    let chunk = batch.len().div_ceil(GRAD_CHUNKS).max(1);
    let parts: Vec<Result<(f64, Vec<f64>), NeuralError>> = batch
        .par_chunks(chunk)
        .zip(masks.par_chunks(chunk))
        .map(|(ids, ms)| {
            let mut grad = vec![0.0; model.n_params()];
            let mut input = vec![0.0; data.input_len()];
            let mut total = 0.0;
            for (&i, m) in ids.iter().zip(ms) {
                data.input(i, &mut input);
                let trace = model.forward(&input, Mode::Train(m))?;
                let (l, dlogits) = loss.value_and_logit_grad(trace.logits(), data.label(i));
                total += l;
                model.backward(&trace, dlogits, &mut grad);
            }
            Ok((total, grad))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; model.n_params()];
    for part in parts {
        let (l, g) = part?;
        total += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Positive-class probabilities in evaluation mode, in dataset order.
pub fn predict_batch(model: &Model, data: &dyn Dataset) -> Result<Vec<f64>, NeuralError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    predict_indices(model, data, &idx)
}

fn predict_indices(model: &Model, data: &dyn Dataset, idx: &[usize]) -> Result<Vec<f64>, NeuralError> {
    if data.input_len() != model.spec.input_len() {
        return Err(NeuralError::Shape(format!(
            "dataset inputs have {} values, model expects {}",
            data.input_len(),
            model.spec.input_len()
        )));
    }
    idx.par_iter()
        .map_init(
            || vec![0.0; data.input_len()],
            |buf, &i| {
                data.input(i, buf);
                Ok(softmax2(model.logits(buf)?)[1])
            },
        )
        .collect()
}

fn mean_loss(probs: &[f64], labels: &[bool], loss: &LossKind) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    probs.iter().zip(labels).map(|(&p, &y)| loss.value(p, y)).sum::<f64>() / probs.len() as f64
}

/// Trains a freshly initialized model; the returned parameters are those of the epoch with the
/// best validation F1 (lower validation loss breaks ties).
pub fn train(spec: ModelSpec, data: &dyn Dataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory), NeuralError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::init(spec, rng.random())?;
    train_from(model, data, cfg, &mut rng)
}

fn train_from(
    mut model: Model,
    data: &dyn Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Model, TrainHistory), NeuralError> {
    if data.len() < 2 {
        return Err(NeuralError::Training("at least two samples are required".into()));
    }
    if data.input_len() != model.spec.input_len() {
        return Err(NeuralError::Shape(format!(
            "dataset inputs have {} values, model expects {}",
            data.input_len(),
            model.spec.input_len()
        )));
    }
    let labels: Vec<bool> = (0..data.len()).map(|i| data.label(i)).collect();
    let (train_idx, val_idx) = stratified_split(&labels, cfg.val_fraction, rng);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(NeuralError::Training("too few samples for a validation split".into()));
    }
    let val_labels: Vec<bool> = val_idx.iter().map(|&i| labels[i]).collect();
    let dropouts = model.dropout_layers();
    let mut state = AdamState::new(model.n_params());
    let mut order = train_idx.clone();
    let mut best: Option<(f64, f64, usize, Vec<f64>)> = None;
    let mut epochs = Vec::new();
    let mut first_batch_loss = f64::NAN;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let masks: Vec<Vec<Vec<f64>>> = batch
                .iter()
                .map(|_| {
                    dropouts
                        .iter()
                        .map(|&(n, p)| {
                            let keep = 1.0 / (1.0 - p);
                            (0..n)
                                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let (total, mut grad) = batch_gradient(&model, data, batch, &masks, &cfg.loss)?;
            if !total.is_finite() {
                return Err(NeuralError::Training(format!("non-finite loss at epoch {epoch}")));
            }
            if first_batch_loss.is_nan() {
                first_batch_loss = total / batch.len() as f64;
            }
            epoch_loss += total;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam_step(&mut model.params, &grad, &mut state, &cfg.adam)?;
        }
        let val_probs = predict_indices(&model, data, &val_idx)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_idx.len() as f64,
            val_loss: mean_loss(&val_probs, &val_labels, &cfg.loss),
            val_f1: f1_at_half(&val_probs, &val_labels),
        };
        log::debug!(
            "epoch {epoch}: train loss {:.5}, val loss {:.5}, val F1 {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_f1
        );
        let improved = match &best {
            None => true,
            Some((f1, loss, _, _)) => record.val_f1 > *f1 || (record.val_f1 == *f1 && record.val_loss < *loss),
        };
        if improved {
            best = Some((record.val_f1, record.val_loss, epoch, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        epochs.push(record);
        if since_best >= cfg.patience && epoch < cfg.max_epochs {
            stopped_early = true;
            break;
        }
    }
    let (_, _, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok((
        model,
        TrainHistory {
            epochs,
            best_epoch,
            stopped_early,
            train_indices: train_idx,
            val_indices: val_idx,
            first_batch_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParallelCnnSpec;

    fn toy(n: usize, seed: u64) -> InMemoryDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 3 == 0;
            let mut x: Vec<f64> = (0..4 * 6).map(|_| rng.random_range(-0.5..0.5)).collect();
            if y {
                x[4 * 2 + 1] += 2.0;
            }
            inputs.push(x);
            labels.push(y);
        }
        InMemoryDataset::new(inputs, labels).unwrap()
    }

    fn spec() -> ModelSpec {
        ModelSpec::Parallel(ParallelCnnSpec {
            max_slices: 6,
            dim: 4,
            filter_heights: vec![1, 2],
            n_filters: 4,
            dense: vec![8],
            dropout: 0.2,
        })
    }

    fn cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: 30,
            batch_size: 8,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<bool> = (0..100).map(|i| i % 4 == 0).collect();
        let (tr, va) = stratified_split(&labels, 0.1, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(tr.len() + va.len(), 100);
        assert!(tr.iter().all(|i| !va.contains(i)));
        assert_eq!(va.iter().filter(|&&i| labels[i]).count(), 3);
        assert_eq!(va.iter().filter(|&&i| !labels[i]).count(), 8);
    }

    #[test]
    fn learns_planted_signal() {
        let data = toy(120, 1);
        let c = TrainConfig { patience: 30, ..cfg(5) };
        let (model, hist) = train(spec(), &data, &c).unwrap();
        assert!(hist.first_batch_loss.is_finite());
        let best = &hist.epochs[hist.best_epoch - 1];
        assert!(best.val_f1 > 0.8, "{hist:?}");
        let test = toy(60, 2);
        let probs = predict_batch(&model, &test).unwrap();
        let labels: Vec<bool> = (0..test.len()).map(|i| test.label(i)).collect();
        assert!(f1_at_half(&probs, &labels) > 0.8);
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy(60, 4);
        let c = TrainConfig {
            max_epochs: 3,
            ..cfg(9)
        };
        let (a, ha) = train(spec(), &data, &c).unwrap();
        let (b, hb) = train(spec(), &data, &c).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(ha, hb);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let data = InMemoryDataset::new(vec![vec![0.0; 3]; 4], vec![true, false, true, false]).unwrap();
        assert!(matches!(train(spec(), &data, &cfg(0)), Err(NeuralError::Shape(_))));
        assert!(InMemoryDataset::new(vec![vec![0.0; 3]], vec![]).is_err());
    }
}
