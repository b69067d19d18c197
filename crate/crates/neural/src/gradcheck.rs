//! Central finite-difference checks of the analytic parameter gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::loss::LossKind;
use crate::model::{Mode, Model};
use crate::NeuralError;

/// Relative tolerance between analytic and numeric derivatives.
pub const REL_TOL: f64 = 1e-4;
/// Differences below this are accepted outright; both sides are then at rounding level.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub passed: usize,
    /// Draws whose perturbation flipped a ReLU or moved a max-pool winner.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub failures: Vec<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty() && self.passed == self.checked
    }
}

pub fn derivatives_agree(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < ABS_FLOOR || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

/// Compares `draws` randomly chosen parameter derivatives of the loss on one sample, with
/// dropout disabled. Draws that cross a non-differentiable point are redrawn, up to `4 × draws` tries.
pub fn check_gradients(
    model: &Model,
    input: &[f64],
    target: bool,
    loss: &LossKind,
    draws: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport, NeuralError> {
    let base = model.forward(input, Mode::Eval)?;
    let signature = base.signature(model.layers());
    let (_, dlogits) = loss.value_and_logit_grad(base.logits(), target);
    let mut grad = vec![0.0; model.n_params()];
    model.backward(&base, dlogits, &mut grad);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        checked: 0,
        passed: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        failures: Vec::new(),
    };
    let mut tries = 0;
    while report.checked < draws && tries < 4 * draws {
        tries += 1;
        let j = rng.random_range(0..model.n_params());
        let mut eval = |delta: f64| -> Result<(f64, bool), NeuralError> {
            probe.params[j] = model.params[j] + delta;
            let t = probe.forward(input, Mode::Eval)?;
            let same = t.signature(probe.layers()) == signature;
            Ok((loss.value_and_logit_grad(t.logits(), target).0, same))
        };
        let (up, same_up) = eval(step)?;
        let (dn, same_dn) = eval(-step)?;
        probe.params[j] = model.params[j];
        if !(same_up && same_dn) {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (up - dn) / (2.0 * step);
        let analytic = grad[j];
        report.checked += 1;
        let scale = analytic.abs().max(numeric.abs());
        if scale > 0.0 {
            report.max_rel_error = report.max_rel_error.max((analytic - numeric).abs() / scale);
        }
        if derivatives_agree(analytic, numeric) {
            report.passed += 1;
        } else {
            report.failures.push((j, analytic, numeric));
        }
    }
    Ok(report)
}
