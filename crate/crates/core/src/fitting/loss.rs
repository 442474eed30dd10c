//! Lovász-Softmax and binary cross-entropy over probability grids, each with
//! its gradient with respect to the predicted probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{GridData, SemanticGrid};

pub const BCE_CLIP: f64 = 1e-7;
pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Which classes the Lovász average runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LovaszClasses {
    /// Classes present in the target, the empty class included.
    #[default]
    PresentWithEmpty,
    /// Semantic classes (1..=C) present in the target.
    PresentSemantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lovasz: f64,
    pub bce: f64,
    pub total: f64,
}

fn unpack<'a>(pred: &'a SemanticGrid, target: &SemanticGrid) -> Result<(&'a [f64], Vec<u8>)> {
    if pred.spec != target.spec || pred.num_classes != target.num_classes {
        return Err(Error::invalid("prediction and target grids have different specs"));
    }
    let GridData::Probabilities(p) = &pred.data else {
        return Err(Error::invalid("prediction must be a probability grid"));
    };
    let GridData::Labels(l) = &target.data else {
        return Err(Error::invalid("target must be a label grid"));
    };
    if let Some(bad) = l.iter().find(|v| **v as usize > target.num_classes) {
        return Err(Error::invalid(format!("target label {bad} out of range")));
    }
    Ok((p, l.clone()))
}

/// Mean over voxels and the `C + 1` classes of one-hot binary cross-entropy.
/// Returns the loss and `∂loss/∂p`.
pub fn bce_with_grad(probs: &[f64], labels: &[u8], stride: usize) -> (f64, Vec<f64>) {
    let n = (labels.len() * stride) as f64;
    let mut grad = vec![0.0; probs.len()];
    let mut sum = 0.0;
    for (v, &label) in labels.iter().enumerate() {
        for c in 0..stride {
            let idx = v * stride + c;
            let raw = probs[idx];
            let p = raw.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            let clipped = p != raw;
            if c == label as usize {
                sum -= p.ln();
                if !clipped {
                    grad[idx] = -1.0 / (p * n);
                }
            } else {
                sum -= (1.0 - p).ln();
                if !clipped {
                    grad[idx] = 1.0 / ((1.0 - p) * n);
                }
            }
        }
    }
    (sum / n, grad)
}

/// Gradient of the Lovász extension of the Jaccard loss for foreground
/// indicators sorted by decreasing error.
fn jaccard_gradient(sorted_fg: &[bool]) -> Vec<f64> {
    let gts = sorted_fg.iter().filter(|f| **f).count() as f64;
    let mut out = Vec::with_capacity(sorted_fg.len());
    let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
    let mut prev = 0.0;
    for &fg in sorted_fg {
        if fg {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
        out.push(jac - prev);
        prev = jac;
    }
    out
}

/// Lovász-Softmax loss and `∂loss/∂p`.
pub fn lovasz_with_grad(probs: &[f64], labels: &[u8], stride: usize, classes: LovaszClasses) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; probs.len()];
    let first = match classes {
        LovaszClasses::PresentWithEmpty => 0,
        LovaszClasses::PresentSemantic => 1,
    };
    let present: Vec<usize> = (first..stride).filter(|c| labels.iter().any(|l| *l as usize == *c)).collect();
    if present.is_empty() {
        return (0.0, grad);
    }
    let weight = 1.0 / present.len() as f64;
    let mut total = 0.0;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for &c in &present {
        let errors: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(v, l)| {
                let fg = if *l as usize == c { 1.0 } else { 0.0 };
                (fg - probs[v * stride + c]).abs()
            })
            .collect();
        order.sort_by(|a, b| errors[*b].total_cmp(&errors[*a]).then(a.cmp(b)));
        let sorted_fg: Vec<bool> = order.iter().map(|v| labels[*v] as usize == c).collect();
        let jg = jaccard_gradient(&sorted_fg);
        for (rank, &v) in order.iter().enumerate() {
            total += weight * errors[v] * jg[rank];
            // d|fg − p|/dp is −1 for foreground, +1 otherwise
            let sign = if sorted_fg[rank] { -1.0 } else { 1.0 };
            grad[v * stride + c] += weight * jg[rank] * sign;
        }
    }
    (total, grad)
}

pub fn bce_loss(pred: &SemanticGrid, target: &SemanticGrid) -> Result<f64> {
    let (p, l) = unpack(pred, target)?;
    Ok(bce_with_grad(p, &l, pred.num_classes + 1).0)
}

pub fn lovasz_softmax_loss(pred: &SemanticGrid, target: &SemanticGrid) -> Result<f64> {
    lovasz_softmax_loss_with(pred, target, LovaszClasses::default())
}

pub fn lovasz_softmax_loss_with(pred: &SemanticGrid, target: &SemanticGrid, classes: LovaszClasses) -> Result<f64> {
    let (p, l) = unpack(pred, target)?;
    Ok(lovasz_with_grad(p, &l, pred.num_classes + 1, classes).0)
}

/// `lovasz + λ·bce`.
pub fn total_loss(pred: &SemanticGrid, target: &SemanticGrid, lambda: f64) -> Result<LossBreakdown> {
    total_loss_with(pred, target, lambda, LovaszClasses::default())
}

pub fn total_loss_with(
    pred: &SemanticGrid,
    target: &SemanticGrid,
    lambda: f64,
    classes: LovaszClasses,
) -> Result<LossBreakdown> {
    let (p, l) = unpack(pred, target)?;
    Ok(total_loss_with_grad(p, &l, pred.num_classes + 1, lambda, classes).0)
}

pub(crate) fn total_loss_with_grad(
    probs: &[f64],
    labels: &[u8],
    stride: usize,
    lambda: f64,
    classes: LovaszClasses,
) -> (LossBreakdown, Vec<f64>) {
    let (lovasz, mut grad) = lovasz_with_grad(probs, labels, stride, classes);
    let (bce, bce_grad) = bce_with_grad(probs, labels, stride);
    for (g, b) in grad.iter_mut().zip(&bce_grad) {
        *g += lambda * b;
    }
    (LossBreakdown { lovasz, bce, total: lovasz + lambda * bce }, grad)
}
