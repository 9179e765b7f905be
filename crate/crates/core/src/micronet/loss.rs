use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Predictions are clamped to `[CLAMP, 1 - CLAMP]` before the logarithms.
pub const CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct FocalLoss {
    pub loss: f64,
    /// d loss / d pred, zero where the clamp is active.
    pub grad: Tensor,
}

/// Mean binary focal loss; `alpha` weights the positive class.
pub fn focal_loss(pred: &Tensor, target: &Tensor, alpha: f64, gamma: f64) -> Result<FocalLoss> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.shape(),
            target.shape()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) || !(gamma >= 0.0) {
        return Err(Error::Parameter(format!("focal alpha {alpha} / gamma {gamma} out of range")));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p_raw, &y) in pred.data().iter().zip(target.data()) {
        let p = p_raw.clamp(CLAMP, 1.0 - CLAMP);
        let active = p == p_raw;
        let (l, d) = if y == 1.0 {
            let q = 1.0 - p;
            let l = -alpha * q.powf(gamma) * p.ln();
            let dq = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
            (l, alpha * (dq * p.ln() - q.powf(gamma) / p))
        } else if y == 0.0 {
            let q = 1.0 - p;
            let l = -(1.0 - alpha) * p.powf(gamma) * q.ln();
            let dp = if gamma == 0.0 { 0.0 } else { gamma * p.powf(gamma - 1.0) };
            (l, -(1.0 - alpha) * (dp * q.ln() - p.powf(gamma) / q))
        } else {
            return Err(Error::Parameter(format!("target value {y} is not 0 or 1")));
        };
        total += l;
        grad.push(if active { d / n } else { 0.0 });
    }
    Ok(FocalLoss {
        loss: total / n,
        grad: Tensor::from_raw(pred.shape(), grad),
    })
}
