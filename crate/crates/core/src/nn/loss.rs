//! Paired regression loss.
//!
//! For a pair of half-batches `A`, `B`:
//! `L = (MSE(pA, yA) + MSE(pB, yB)) / 2 + lambda * MSE(pA - pB, yA - yB)`.

use ndarray::{Array2, ArrayView2};

use super::{shape_err, NnError};

pub fn mse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let n = pred.len() as f64;
    pred.iter().zip(target.iter()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n
}

/// Loss value and its gradients with respect to both predictions.
#[derive(Clone, Debug)]
pub struct PairedLoss {
    pub value: f64,
    pub pointwise: f64,
    pub pairwise: f64,
    pub grad_a: Array2<f64>,
    pub grad_b: Array2<f64>,
}

pub fn paired_loss(
    pred_a: ArrayView2<f64>,
    pred_b: ArrayView2<f64>,
    y_a: ArrayView2<f64>,
    y_b: ArrayView2<f64>,
    lambda: f64,
) -> Result<PairedLoss, NnError> {
    let dim = pred_a.dim();
    for (what, got) in [("pred_b", pred_b.dim()), ("y_a", y_a.dim()), ("y_b", y_b.dim())] {
        if got != dim {
            return Err(shape_err(what, dim, got));
        }
    }
    if dim.0 == 0 || dim.1 == 0 {
        return Err(shape_err("pair batch", "nonempty", dim));
    }
    let m = (dim.0 * dim.1) as f64;
    let ea = &pred_a - &y_a;
    let eb = &pred_b - &y_b;
    let ed = &ea - &eb;
    let sq = |e: &Array2<f64>| e.iter().map(|v| v * v).sum::<f64>() / m;
    let pointwise = 0.5 * (sq(&ea) + sq(&eb));
    let pairwise = sq(&ed);
    let value = pointwise + lambda * pairwise;
    if !value.is_finite() {
        return Err(NnError::NonFinite("loss"));
    }
    let cross = &ed * (2.0 * lambda / m);
    let grad_a = &ea / m + &cross;
    let grad_b = &eb / m - &cross;
    Ok(PairedLoss { value, pointwise, pairwise, grad_a, grad_b })
}
