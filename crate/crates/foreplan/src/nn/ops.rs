//! Validated op surface over the tape primitives.

use crate::nn::tape::{Id, Tape};
use crate::nn::NnError;

/// Default layer-norm epsilon used across the crate.
pub const LN_EPS: f32 = 1e-5;

/// `y = x W + b` with shape validation.
pub fn linear(tape: &mut Tape, x: Id, w: Id, b: Id) -> Result<Id, NnError> {
    let (xs, ws, bs) = (
        tape.value(x).shape.clone(),
        tape.value(w).shape.clone(),
        tape.value(b).numel(),
    );
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != ws[1] {
        return Err(NnError::DimMismatch(format!(
            "linear: x {xs:?} W {ws:?} b [{bs}]"
        )));
    }
    let y = tape.matmul(x, w);
    Ok(tape.add_row(y, b))
}

/// Row-wise layer normalization with learned scale and shift.
pub fn layer_norm(tape: &mut Tape, x: Id, gamma: Id, beta: Id, eps: f32) -> Result<Id, NnError> {
    let d = tape.value(x).shape[1];
    if d < 1 {
        return Err(NnError::DimMismatch("layer_norm: empty rows".into()));
    }
    if eps <= 0.0 {
        return Err(NnError::DimMismatch("layer_norm: eps must be positive".into()));
    }
    if tape.value(gamma).numel() != d || tape.value(beta).numel() != d {
        return Err(NnError::DimMismatch(format!(
            "layer_norm: gamma/beta width vs d={d}"
        )));
    }
    Ok(tape.layer_norm(x, gamma, beta, eps))
}

/// Mean negative log-likelihood of integer targets under row softmax.
pub fn softmax_cross_entropy(
    tape: &mut Tape,
    logits: Id,
    targets: &[usize],
) -> Result<Id, NnError> {
    let shape = tape.value(logits).shape.clone();
    let classes = shape[1];
    if classes < 2 {
        return Err(NnError::DimMismatch(format!(
            "cross entropy needs >= 2 classes, got {classes}"
        )));
    }
    if targets.len() != shape[0] {
        return Err(NnError::DimMismatch(format!(
            "cross entropy: {} targets for {} rows",
            targets.len(),
            shape[0]
        )));
    }
    for &t in targets {
        if t >= classes {
            return Err(NnError::IndexError { index: t, classes });
        }
    }
    Ok(tape.cross_entropy(logits, targets))
}
