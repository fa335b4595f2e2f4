//! Reference loss estimators as pure scalar functions. Training uses the
//! autodiff tape; these implementations are the reported/logged quantities
//! and the anchor points for tests.

use ndarray::Array4;

use crate::error::{Error, Result};

/// Discriminator scores are clamped into this open interval before logs.
pub const SCORE_EPS: f64 = 1e-7;

fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

/// Empirical adversarial objective:
/// `mean(log D(y)) + mean(log(1 - D(G(x))))`.
///
/// The discriminator ascends this, the generator descends the second term
/// (training itself uses the non-saturating surrogate; this estimator is
/// what gets logged).
pub fn adversarial_loss(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::validation("empty score collection"));
    }
    let real: f64 = real_scores.iter().map(|&s| clamp_score(s).ln()).sum::<f64>()
        / real_scores.len() as f64;
    let fake: f64 = fake_scores
        .iter()
        .map(|&s| (1.0 - clamp_score(s)).ln())
        .sum::<f64>()
        / fake_scores.len() as f64;
    Ok(real + fake)
}

/// Cycle-consistency loss: mean-per-element L1 of both reconstruction
/// directions, summed. Zero iff both reconstructions are exact.
pub fn cycle_loss(
    x: &Array4<f32>,
    x_reconstructed: &Array4<f32>,
    y: &Array4<f32>,
    y_reconstructed: &Array4<f32>,
) -> Result<f64> {
    if x.shape() != x_reconstructed.shape() || y.shape() != y_reconstructed.shape() {
        return Err(Error::Shape(format!(
            "cycle loss shape mismatch: x {:?} vs {:?}, y {:?} vs {:?}",
            x.shape(),
            x_reconstructed.shape(),
            y.shape(),
            y_reconstructed.shape()
        )));
    }
    let term = |a: &Array4<f32>, b: &Array4<f32>| -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(&u, &v)| (u as f64 - v as f64).abs())
            .sum::<f64>()
            / a.len() as f64
    };
    Ok(term(x_reconstructed, x) + term(y_reconstructed, y))
}

/// One anchor with its co-located positive and its negatives.
#[derive(Debug, Clone)]
pub struct PatchFeatureSet {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::validation("zero-norm feature vector"));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Patch-contrastive loss for a single anchor:
/// `-log( exp(s+/tau) / (exp(s+/tau) + sum exp(s-/tau)) )` with cosine
/// similarities on L2-normalized vectors. Computed via log-sum-exp.
pub fn patch_nce_loss(pfs: &PatchFeatureSet, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::validation(format!("tau must be > 0, got {tau}")));
    }
    if pfs.negatives.is_empty() {
        return Err(Error::validation("need at least one negative sample"));
    }
    let dim = pfs.anchor.len();
    if pfs.positive.len() != dim || pfs.negatives.iter().any(|n| n.len() != dim) {
        return Err(Error::Shape("patch feature dimensions differ".into()));
    }
    let anchor = l2_normalize(&pfs.anchor)?;
    let positive = l2_normalize(&pfs.positive)?;
    let pos_logit = cosine(&anchor, &positive) / tau;
    let mut logits = vec![pos_logit];
    for neg in &pfs.negatives {
        let nn = l2_normalize(neg)?;
        logits.push(cosine(&anchor, &nn) / tau);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - pos_logit)
}

/// Aggregate used during training: summed over anchors, averaged over the
/// batch (usually one image's anchors per set list).
pub fn patch_nce_total(sets: &[PatchFeatureSet], tau: f64, batch: usize) -> Result<f64> {
    if batch == 0 {
        return Err(Error::validation("batch must be positive"));
    }
    let mut total = 0.0;
    for s in sets {
        total += patch_nce_loss(s, tau)?;
    }
    Ok(total / batch as f64)
}
