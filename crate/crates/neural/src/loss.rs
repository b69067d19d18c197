//! Binary cross-entropy and focal loss on the positive-class probability.

use serde::{Deserialize, Serialize};

use crate::layers::softmax2;

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLossParams {
    /// Weight of the positive class; negatives get `1 − alpha`. `None` weights both by 1.
    pub alpha: Option<f64>,
    /// Focusing exponent.
    pub gamma: f64,
}

impl FocalLossParams {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(format!("focal alpha must lie in [0, 1], got {a}"));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(format!("focal gamma must be non-negative, got {}", self.gamma));
        }
        Ok(())
    }

    fn alpha_t(&self, target: bool) -> f64 {
        match (self.alpha, target) {
            (None, _) => 1.0,
            (Some(a), true) => a,
            (Some(a), false) => 1.0 - a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Focal(FocalLossParams),
}

impl LossKind {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            LossKind::Bce => Ok(()),
            LossKind::Focal(p) => p.validate(),
        }
    }

    pub fn value(&self, p: f64, target: bool) -> f64 {
        match self {
            LossKind::Bce => bce_loss(p, target),
            LossKind::Focal(params) => focal_loss(p, target, params),
        }
    }

    /// Loss and its gradient with respect to the two logits (index 1 positive).
    pub fn value_and_logit_grad(&self, logits: [f64; 2], target: bool) -> (f64, [f64; 2]) {
        let probs = softmax2(logits);
        let p = probs[1];
        let raw_pt = if target { p } else { 1.0 - p };
        let pt = raw_pt.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let (alpha_t, gamma) = match self {
            LossKind::Bce => (1.0, 0.0),
            LossKind::Focal(f) => (f.alpha_t(target), f.gamma),
        };
        let loss = -alpha_t * (1.0 - pt).powf(gamma) * pt.ln();
        // dL/dp_t, zero where the clamp is active.
        let dl_dpt = if raw_pt != pt {
            0.0
        } else {
            let focus = if gamma == 0.0 {
                0.0
            } else {
                gamma * (1.0 - pt).powf(gamma - 1.0) * pt.ln()
            };
            alpha_t * (focus - (1.0 - pt).powf(gamma) / pt)
        };
        // p_t is the softmax component of the target class.
        let s = raw_pt * (1.0 - raw_pt);
        let g_target = dl_dpt * s;
        let grad = if target {
            [-g_target, g_target]
        } else {
            [g_target, -g_target]
        };
        (loss, grad)
    }
}

fn clamp_pt(p: f64, target: bool) -> f64 {
    let pt = if target { p } else { 1.0 - p };
    pt.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `−α_t (1 − p_t)^γ log p_t` with `p_t` the probability of the true class.
pub fn focal_loss(p: f64, target: bool, params: &FocalLossParams) -> f64 {
    let pt = clamp_pt(p, target);
    -params.alpha_t(target) * (1.0 - pt).powf(params.gamma) * pt.ln()
}

/// `−log p_t`.
pub fn bce_loss(p: f64, target: bool) -> f64 {
    -clamp_pt(p, target).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn focal_examples() {
        let plain = FocalLossParams {
            alpha: Some(1.0),
            gamma: 0.0,
        };
        assert_eq!(focal_loss(0.8, true, &plain), -(0.8f64).ln());
        let v = focal_loss(
            0.9,
            true,
            &FocalLossParams {
                alpha: Some(0.25),
                gamma: 2.0,
            },
        );
        assert!((v - 0.25 * 0.01 * -(0.9f64).ln()).abs() < 1e-15);
        assert!((v - 2.634e-4).abs() < 1e-7);
        let v = focal_loss(
            0.5,
            true,
            &FocalLossParams {
                alpha: Some(0.5),
                gamma: 0.0,
            },
        );
        assert!((v - 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bce_examples() {
        assert!(bce_loss(1.0, true) < 1e-6);
        assert!((bce_loss(0.5, false) - 2f64.ln()).abs() < 1e-15);
        assert!(bce_loss(0.0, true).is_finite());
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let losses = [
            LossKind::Bce,
            LossKind::Focal(FocalLossParams {
                alpha: Some(0.12),
                gamma: 1.0,
            }),
            LossKind::Focal(FocalLossParams {
                alpha: Some(0.25),
                gamma: 2.0,
            }),
            LossKind::Focal(FocalLossParams {
                alpha: None,
                gamma: 0.5,
            }),
        ];
        for loss in losses {
            for target in [true, false] {
                for logits in [[0.3, -0.4], [-2.0, 1.5], [0.0, 0.0], [3.0, 2.9]] {
                    let (_, g) = loss.value_and_logit_grad(logits, target);
                    for i in 0..2 {
                        let h = 1e-6;
                        let mut up = logits;
                        let mut dn = logits;
                        up[i] += h;
                        dn[i] -= h;
                        let num = (loss.value_and_logit_grad(up, target).0 - loss.value_and_logit_grad(dn, target).0)
                            / (2.0 * h);
                        assert!(
                            (num - g[i]).abs() <= 1e-6 * num.abs().max(1e-3),
                            "{loss:?} {target} {logits:?}: {num} vs {}",
                            g[i]
                        );
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn focal_without_weighting_equals_bce(p in 0.0f64..1.0, target in any::<bool>()) {
            let f = focal_loss(p, target, &FocalLossParams { alpha: None, gamma: 0.0 });
            prop_assert!((f - bce_loss(p, target)).abs() <= 1e-12);
        }

        #[test]
        fn focal_decreasing_in_pt(alpha in 0.01f64..1.0, gamma in 0.0f64..5.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let params = FocalLossParams { alpha: Some(alpha), gamma };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(focal_loss(hi, true, &params) <= focal_loss(lo, true, &params));
        }
    }
}
