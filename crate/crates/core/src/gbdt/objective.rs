//! First and second derivatives of the supported losses with respect to the margin.

/// Lower bound applied to every hessian before sample weighting.
pub const HESSIAN_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradHess {
    pub g: f64,
    pub h: f64,
}

pub fn sigmoid(margin: f64) -> f64 {
    if margin >= 0.0 {
        1.0 / (1.0 + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max-subtraction.
pub fn softmax(margins: &[f64]) -> Vec<f64> {
    let max = margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = margins.iter().map(|m| (m - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Weighted binary cross-entropy derivatives. `weight` is the per-sample
/// scale: the positive-class weight for positives, 1 for negatives.
pub fn grad_hess_logistic(positive: bool, margin: f64, weight: f64) -> GradHess {
    let p = sigmoid(margin);
    let y = if positive { 1.0 } else { 0.0 };
    GradHess { g: weight * (p - y), h: weight * (p * (1.0 - p)).max(HESSIAN_FLOOR) }
}

/// Multiclass cross-entropy derivatives, diagonal hessian.
pub fn grad_hess_softmax(label: usize, margins: &[f64]) -> Vec<GradHess> {
    softmax(margins)
        .into_iter()
        .enumerate()
        .map(|(c, p)| {
            let y = if c == label { 1.0 } else { 0.0 };
            GradHess { g: p - y, h: (p * (1.0 - p)).max(HESSIAN_FLOOR) }
        })
        .collect()
}

/// Weighted binary cross-entropy at a margin; used for loss tracking.
pub fn logistic_loss(positive: bool, margin: f64, weight: f64) -> f64 {
    // log(1 + e^{-m}) for y=1, log(1 + e^{m}) for y=0, computed stably
    let z = if positive { -margin } else { margin };
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    weight * softplus
}

pub fn softmax_loss(label: usize, margins: &[f64]) -> f64 {
    let max = margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + margins.iter().map(|m| (m - max).exp()).sum::<f64>().ln();
    lse - margins[label]
}
