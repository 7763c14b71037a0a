//! Masked binary cross-entropy.

use super::features::FieldLabel;
use crate::coders::P_MIN;

/// Mean BCE in nats over the valid positions of `label`, with predictions
/// clamped to `[P_MIN, 1 - P_MIN]` (the same clamp the arithmetic coder uses).
pub fn bce_loss(label: &FieldLabel, probs: &[f64]) -> f64 {
    assert_eq!(label.bits.len(), probs.len(), "label/prediction length mismatch");
    if label.width == 0 {
        return 0.0;
    }
    let sum: f64 = (0..label.width)
        .map(|j| clamped_nll(label.bits[j], probs[j]))
        .sum();
    sum / label.width as f64
}

/// `-ln P(bit)` under the clamped prediction.
pub fn clamped_nll(bit: bool, p1: f64) -> f64 {
    let p = p1.clamp(P_MIN, 1.0 - P_MIN);
    if bit {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `-ln sigmoid(±z)` computed without overflow, and its derivative in `z`.
pub fn bce_with_logits(bit: bool, z: f64) -> (f64, f64) {
    let y = if bit { 1.0 } else { 0.0 };
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    (softplus - y * z, super::nn::sigmoid(z) - y)
}
