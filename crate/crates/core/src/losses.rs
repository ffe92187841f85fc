//! Training losses: image-text cross-entropy with group-wise scaling, the
//! paired-view image contrastive loss, classifier cross-entropy, the IRM
//! gradient-norm penalty baseline, and their weighted total.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::contrastive::supervised_contrastive;
use crate::error::{Error, Result};
use crate::fod::TextAnchors;
use crate::groups::{ClassLabel, GroupKey, GroupedBatch};
use crate::gsrm::{group_loss, gsrm_aggregate, GroupLossTable, GsParams};
use crate::linalg::{cosine_sim, Affine};

pub const DEFAULT_LAMBDA_FOD: f64 = 0.8;
pub const DEFAULT_LAMBDA_II: f64 = 0.1;
pub const DEFAULT_LOGIT_SCALE: f64 = 10.0;

/// Numerically stable two-class softmax.
pub fn softmax2(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// `-log softmax(logits)[label]` for two logits.
pub fn cross_entropy(logits: &[f64], label: ClassLabel) -> Result<f64> {
    Error::check_dim(2, logits.len())?;
    if !logits.iter().all(|x| x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite logits {logits:?}")));
    }
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    Ok(lse - logits[label.index()])
}

/// Gradient of [`cross_entropy`] with respect to the logits: `softmax - onehot`.
pub fn cross_entropy_grad(logits: &[f64], label: ClassLabel) -> [f64; 2] {
    let mut p = softmax2(logits);
    p[label.index()] -= 1.0;
    p
}

/// Per-class logits `scale · cos(w, anchor_c)`.
pub fn it_logits(w: &[f64], anchors: &TextAnchors, scale: f64) -> Result<Vec<f64>> {
    if !(scale > 0.0) {
        return Err(Error::Parameter(format!(
            "logit scale must be > 0, got {scale}"
        )));
    }
    Ok(vec![
        scale * cosine_sim(w, anchors.get(0))?,
        scale * cosine_sim(w, anchors.get(1))?,
    ])
}

/// Group-scaled image-text loss over a partitioned batch of embeddings.
pub fn it_gs_loss(
    batch: &GroupedBatch<'_>,
    anchors: &TextAnchors,
    scale: f64,
    params: &GsParams,
) -> Result<(f64, GroupLossTable)> {
    let mut buckets: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for (key, samples) in batch {
        let losses = samples
            .iter()
            .map(|s| cross_entropy(&it_logits(&s.embedding, anchors, scale)?, s.label))
            .collect::<Result<Vec<_>>>()?;
        buckets.insert(*key, losses);
    }
    let table = group_loss(&buckets)?;
    let (total, _) = gsrm_aggregate(&table, params);
    Ok((total, table))
}

/// Paired-view InfoNCE; views `2k` and `2k + 1` come from the same image.
pub fn ii_sim_loss(features: &[Vec<f64>], tau: f64) -> Result<f64> {
    Ok(ii_sim_with_grads(features, tau)?.0)
}

pub(crate) fn ii_sim_with_grads(features: &[Vec<f64>], tau: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    if !features.len().is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "paired views need an even count, got {}",
            features.len()
        )));
    }
    if features.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: features.len(),
        });
    }
    let keys: Vec<u64> = (0..features.len() as u64).map(|i| i / 2).collect();
    let out = supervised_contrastive(features, &keys, tau, true)?;
    Ok((out.loss, out.grads))
}

/// Mean cross-entropy of an affine two-class classifier.
pub fn class_loss(z_batch: &[Vec<f64>], labels: &[ClassLabel], classifier: &Affine) -> Result<f64> {
    Error::check_dim(z_batch.len(), labels.len())?;
    if z_batch.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Error::check_dim(2, classifier.out_dim())?;
    let mut total = 0.0;
    for (z, y) in z_batch.iter().zip(labels) {
        total += cross_entropy(&classifier.apply(z)?, *y)?;
    }
    Ok(total / z_batch.len() as f64)
}

/// Loss components of one step, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub it_gs: f64,
    pub fod: f64,
    pub ii_sim: f64,
    pub class_ce: f64,
    /// IRM penalty; zero unless the baseline objective uses it.
    pub irm: f64,
    pub total: f64,
}

/// Weights applied to the loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub fod: f64,
    pub ii_sim: f64,
    pub irm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            fod: DEFAULT_LAMBDA_FOD,
            ii_sim: DEFAULT_LAMBDA_II,
            irm: 0.0,
        }
    }
}

/// `total = it_gs + λ1·fod + λ2·ii_sim + class_ce`.
pub fn total_loss(
    it_gs: f64,
    fod: f64,
    ii_sim: f64,
    class_ce: f64,
    lambda1: f64,
    lambda2: f64,
) -> LossBreakdown {
    compose(
        LossBreakdown {
            it_gs,
            fod,
            ii_sim,
            class_ce,
            irm: 0.0,
            total: 0.0,
        },
        &LossWeights {
            fod: lambda1,
            ii_sim: lambda2,
            irm: 0.0,
        },
    )
}

/// Fills in `total` from the components, adding `λ_irm·irm` for the baseline.
pub fn compose(parts: LossBreakdown, w: &LossWeights) -> LossBreakdown {
    let mut total = parts.it_gs + w.fod * parts.fod + w.ii_sim * parts.ii_sim + parts.class_ce;
    if w.irm != 0.0 {
        total += w.irm * parts.irm;
    }
    LossBreakdown { total, ..parts }
}

/// Squared derivative of the environment risk `R(s) = mean_i ce(s·l_i, y_i)`
/// with respect to the scalar multiplier `s`, taken at `s = 1`.
pub fn irm_penalty(logits: &[Vec<f64>], labels: &[ClassLabel]) -> Result<f64> {
    Ok(irm_penalty_with_grads(logits, labels)?.0)
}

/// Penalty and its gradient with respect to every logit pair.
pub fn irm_penalty_with_grads(
    logits: &[Vec<f64>],
    labels: &[ClassLabel],
) -> Result<(f64, Vec<[f64; 2]>)> {
    Error::check_dim(logits.len(), labels.len())?;
    if logits.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let n = logits.len() as f64;
    // dR/ds at s = 1 is mean_i Σ_c (p_ic - y_ic) l_ic.
    let mut slope = 0.0;
    for (l, y) in logits.iter().zip(labels) {
        Error::check_dim(2, l.len())?;
        let g = cross_entropy_grad(l, *y);
        slope += g[0] * l[0] + g[1] * l[1];
    }
    slope /= n;

    let grads = logits
        .iter()
        .zip(labels)
        .map(|(l, y)| {
            let p = softmax2(l);
            let g = cross_entropy_grad(l, *y);
            let mean_l = p[0] * l[0] + p[1] * l[1];
            let dg = [g[0] + p[0] * (l[0] - mean_l), g[1] + p[1] * (l[1] - mean_l)];
            [2.0 * slope * dg[0] / n, 2.0 * slope * dg[1] / n]
        })
        .collect();
    Ok((slope * slope, grads))
}
