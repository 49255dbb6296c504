//! Classification losses and their exact logit gradients.
//!
//! Every loss is a mean over the batch, and `logit_grad` is the gradient of
//! that mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy.
    Ce,
    /// Squared error between softmax output and one-hot target.
    Lse,
    /// Cross-entropy on clean logits plus `β ·` KL(clean ‖ adversarial).
    Trades,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub logit_grad: Matrix,
}

/// A loss over paired clean/adversarial logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLossValue {
    pub value: f64,
    pub clean_grad: Matrix,
    pub adv_grad: Matrix,
}

/// Max-subtracted softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let classes = logits.cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LossValue> {
    check_labels(logits, labels)?;
    let n = logits.rows().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        total -= log_softmax(row)[y];
        let p = softmax(row);
        let g = grad.row_mut(r);
        for (gi, pk) in g.iter_mut().zip(&p) {
            *gi = pk / n;
        }
        // p_y − 1 as −Σ_{k≠y} p_k: stays nonzero when p_y rounds to 1
        let rest: f64 = p.iter().enumerate().filter(|&(k, _)| k != y).map(|(_, pk)| pk).sum();
        g[y] = -rest / n;
    }
    Ok(LossValue {
        value: total / n,
        logit_grad: grad,
    })
}

/// Cross-entropy on adversarial logits, the inner objective of min-max training.
pub fn madry_inner_objective(adv_logits: &Matrix, labels: &[usize]) -> Result<LossValue> {
    cross_entropy(adv_logits, labels)
}

/// Per sample `Σ_k (p_k − onehot_k)²`, averaged over the batch.
pub fn lse_loss(logits: &Matrix, labels: &[usize]) -> Result<LossValue> {
    check_labels(logits, labels)?;
    let n = logits.rows().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let p = softmax(logits.row(r));
        let diff: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(k, &pk)| if k == y { pk - 1.0 } else { pk })
            .collect();
        total += diff.iter().map(|d| d * d).sum::<f64>();
        // ∂/∂z_j = 2 p_j (d_j − Σ_k d_k p_k)
        let inner: f64 = diff.iter().zip(&p).map(|(d, pk)| d * pk).sum();
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = 2.0 * p[j] * (diff[j] - inner) / n;
        }
    }
    Ok(LossValue {
        value: total / n,
        logit_grad: grad,
    })
}

/// Mean KL(softmax(p) ‖ softmax(q)) with gradients to both logit sets.
pub fn kl_divergence(p_logits: &Matrix, q_logits: &Matrix) -> Result<PairLossValue> {
    if p_logits.shape() != q_logits.shape() {
        return Err(Error::DimensionMismatch {
            op: "kl_divergence",
            left_rows: p_logits.rows(),
            left_cols: p_logits.cols(),
            right_rows: q_logits.rows(),
            right_cols: q_logits.cols(),
        });
    }
    let n = p_logits.rows().max(1) as f64;
    let (rows, cols) = p_logits.shape();
    let mut gp = Matrix::zeros(rows, cols);
    let mut gq = Matrix::zeros(rows, cols);
    let mut total = 0.0;
    for r in 0..rows {
        let lp = log_softmax(p_logits.row(r));
        let lq = log_softmax(q_logits.row(r));
        let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        let q: Vec<f64> = lq.iter().map(|v| v.exp()).collect();
        let kl: f64 = p.iter().zip(lp.iter().zip(&lq)).map(|(pi, (a, b))| pi * (a - b)).sum();
        // rounding can leave a tiny negative value when p ≈ q
        total += kl.max(0.0);
        for j in 0..cols {
            gp.set(r, j, p[j] * (lp[j] - lq[j] - kl) / n);
            gq.set(r, j, (q[j] - p[j]) / n);
        }
    }
    Ok(PairLossValue {
        value: total / n,
        clean_grad: gp,
        adv_grad: gq,
    })
}

/// `CE(clean) + β · KL(clean ‖ adv)`.
pub fn trades_loss(
    clean_logits: &Matrix,
    adv_logits: &Matrix,
    labels: &[usize],
    beta: f64,
) -> Result<PairLossValue> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("β must be nonnegative, got {beta}")));
    }
    let ce = cross_entropy(clean_logits, labels)?;
    let kl = kl_divergence(clean_logits, adv_logits)?;
    let mut clean_grad = ce.logit_grad;
    clean_grad.add_scaled(&kl.clean_grad, beta)?;
    Ok(PairLossValue {
        value: ce.value + beta * kl.value,
        clean_grad,
        adv_grad: kl.adv_grad.scale(beta),
    })
}

/// Single-logit-set loss for `Ce` or `Lse`.
pub fn classification_loss(kind: LossKind, logits: &Matrix, labels: &[usize]) -> Result<LossValue> {
    match kind {
        LossKind::Ce => cross_entropy(logits, labels),
        LossKind::Lse => lse_loss(logits, labels),
        LossKind::Trades => Err(Error::InvalidArgument(
            "the TRADES loss needs paired clean/adversarial logits".into(),
        )),
    }
}
