//! Evaluation metrics: relative ℓ2 error of field predictions, relative
//! error of recovered scalar coefficients, and their per-problem average.

use crate::array::Array;
use crate::error::{Error, Result};

/// ‖pred − target‖₂ / ‖target‖₂ over all entries.
pub fn relative_l2(pred: &Array<f64>, target: &Array<f64>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "relative_l2",
            lhs: pred.shape(),
            rhs: target.shape(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.as_slice().iter().zip(target.as_slice()) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    if den == 0.0 {
        return Err(Error::ZeroTargetNorm);
    }
    Ok((num / den).sqrt())
}

/// |pred − target| / |target| for a recovered scalar coefficient.
pub fn lambda_rel_error(pred: f64, target: f64) -> Result<f64> {
    if target == 0.0 {
        return Err(Error::ZeroTargetNorm);
    }
    Ok((pred - target).abs() / target.abs())
}

/// Arithmetic mean of per-quantity relative errors.
pub fn mean_relative_error(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidShape {
            op: "mean_relative_error",
            message: "need at least one per-quantity error".into(),
        });
    }
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}
