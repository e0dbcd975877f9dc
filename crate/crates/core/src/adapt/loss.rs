use ndarray::{Array2, ArrayView2};

use super::AdaptError;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sum over masked rows of the Euclidean distance between prediction and
/// target, and its gradient with respect to `pred`. A zero residual has
/// zero gradient.
pub fn loss_reg(pred: ArrayView2<f64>, gt: ArrayView2<f64>, mask: &[bool]) -> Result<(f64, Array2<f64>), AdaptError> {
    if pred.dim() != gt.dim() {
        return Err(AdaptError::Shape { expected: pred.ncols(), found: gt.ncols() });
    }
    if mask.len() != pred.nrows() {
        return Err(AdaptError::Shape { expected: pred.nrows(), found: mask.len() });
    }
    let mut grad = Array2::zeros(pred.raw_dim());
    let mut loss = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let d = &pred.row(i) - &gt.row(i);
        let n = d.dot(&d).sqrt();
        loss += n;
        if n > 0.0 {
            grad.row_mut(i).assign(&(d / n));
        }
    }
    Ok((loss, grad))
}

/// Mixer loss: real samples (label 1) pushed to 1, synthetic (label 0) to 0.
/// Returns the value and `dL/dp`.
pub fn loss_domain_stage1(p: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>), AdaptError> {
    if p.len() != labels.len() {
        return Err(AdaptError::Shape { expected: p.len(), found: labels.len() });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &y) in p.iter().zip(labels) {
        let c = clamp(pi);
        match y {
            1 => {
                loss -= c.ln();
                grad.push(-1.0 / c);
            }
            0 => {
                loss -= (1.0 - c).ln();
                grad.push(1.0 / (1.0 - c));
            }
            _ => return Err(AdaptError::BadBatch(format!("domain label {y}"))),
        }
    }
    Ok((loss, grad))
}

/// Confusion loss, minimized by `p = 0.5` everywhere. Returns the value and
/// `dL/dp`.
pub fn loss_domain_stage2(p: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let grad = p
        .iter()
        .map(|&pi| {
            let c = clamp(pi);
            loss -= 0.5 * c.ln() + 0.5 * (1.0 - c).ln();
            -0.5 / c + 0.5 / (1.0 - c)
        })
        .collect();
    (loss, grad)
}

/// Gradient of the stage-1 loss with respect to the mixer logit,
/// `σ(z) − y`. Exact for the unclamped loss.
pub fn stage1_logit_grad(p: &[f64], labels: &[u8]) -> Vec<f64> {
    p.iter().zip(labels).map(|(&pi, &y)| pi - y as f64).collect()
}

/// Gradient of the stage-2 loss with respect to the mixer logit,
/// `σ(z) − 0.5`. Vanishes exactly at the confusion point.
pub fn stage2_logit_grad(p: &[f64]) -> Vec<f64> {
    p.iter().map(|&pi| pi - 0.5).collect()
}

pub fn total_loss(reg: f64, domain: f64, lambda: f64) -> f64 {
    reg + lambda * domain
}
