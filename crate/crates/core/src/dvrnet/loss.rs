use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_hr: f64,
    pub w_rr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_hr: 0.75, w_rr: 0.25 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_hr > 0.0 && self.w_rr > 0.0) || ((self.w_hr + self.w_rr) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "loss weights must be positive and sum to 1, got ({}, {})",
                self.w_hr, self.w_rr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LossKind {
    /// Mean squared error over every output.
    Mse,
    /// Weighted root of the HR and RR squared errors; needs two outputs.
    Joint(LossWeights),
}

pub fn loss_single(pred: f64, label: f64) -> f64 {
    (pred - label) * (pred - label)
}

pub fn loss_joint(pred_hr: f64, pred_rr: f64, hr: f64, rr: f64, w: LossWeights) -> f64 {
    (w.w_hr * loss_single(pred_hr, hr) + w.w_rr * loss_single(pred_rr, rr)).sqrt()
}

/// Batch loss and its gradient with respect to `pred` (`[B, n_outputs]`).
pub fn batch_loss<T: Scalar>(kind: LossKind, pred: &Array2<T>, labels: &Array2<T>) -> Result<(T, Array2<T>)> {
    if pred.dim() != labels.dim() || pred.is_empty() {
        return Err(Error::shape(format!(
            "predictions {:?} and labels {:?} disagree",
            pred.shape(),
            labels.shape()
        )));
    }
    let b = T::from_usize_lossy(pred.nrows());
    match kind {
        LossKind::Mse => {
            let n = T::from_usize_lossy(pred.len());
            let diff = pred - labels;
            let loss = diff.iter().map(|&d| d * d).sum::<T>() / n;
            Ok((loss, diff.mapv(|d| T::lit(2.0) * d / n)))
        }
        LossKind::Joint(w) => {
            if pred.ncols() != 2 {
                return Err(Error::shape("joint loss needs two outputs (HR, RR)"));
            }
            let (wh, wr) = (T::lit(w.w_hr), T::lit(w.w_rr));
            let mut grad = Array2::zeros(pred.raw_dim());
            let mut total = T::zero();
            for i in 0..pred.nrows() {
                let dh = pred[[i, 0]] - labels[[i, 0]];
                let dr = pred[[i, 1]] - labels[[i, 1]];
                let l = (wh * dh * dh + wr * dr * dr).sqrt();
                total += l;
                // The root has no derivative at zero; treat it as flat.
                if l > T::zero() {
                    grad[[i, 0]] = wh * dh / (l * b);
                    grad[[i, 1]] = wr * dr / (l * b);
                }
            }
            Ok((total / b, grad))
        }
    }
}
