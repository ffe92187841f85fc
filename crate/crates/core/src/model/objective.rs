//! Loss evaluation and hand-derived gradients for every objective.
//!
//! Samples are processed in ascending `sample_id` order so that every sum
//! has a fixed order and results do not depend on how the batch was built.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::{forward, Forward, ModelParams, Weights};
use crate::contrastive::supervised_contrastive;
use crate::error::{Error, Result};
use crate::fod::invariant_basis;
use crate::groups::{ClassLabel, DomainId, GroupKey, Sample};
use crate::gsrm::{group_loss, gsrm_aggregate, GroupLossTable};
use crate::linalg::{axpy, dot, norm};
use crate::losses::{
    compose, cross_entropy, cross_entropy_grad, ii_sim_with_grads, irm_penalty_with_grads,
    LossBreakdown, LossWeights,
};
use crate::rng::Rng;

/// A batch plus, when the objective needs it, a second noisy view of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    samples: Vec<Sample>,
    views: Option<Vec<Vec<f64>>>,
}

impl TrainBatch {
    pub fn new(samples: Vec<Sample>, views: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if let Some(v) = &views {
            Error::check_dim(samples.len(), v.len())?;
            for (s, x) in samples.iter().zip(v) {
                Error::check_dim(s.embedding.len(), x.len())?;
            }
        }
        Ok(TrainBatch { samples, views })
    }

    /// Second view = embedding + `sigma` · standard Gaussian, drawn in sample order.
    pub fn augmented(samples: Vec<Sample>, sigma: f64, rng: &mut Rng) -> Self {
        let views = samples
            .iter()
            .map(|s| {
                s.embedding
                    .iter()
                    .map(|x| x + sigma * rng.gaussian())
                    .collect()
            })
            .collect();
        TrainBatch {
            samples,
            views: Some(views),
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn views(&self) -> Option<&[Vec<f64>]> {
        self.views.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-group scale factors used in one step. Held fixed when differentiating.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupScales {
    pub image_text: BTreeMap<GroupKey, f64>,
    pub class: Option<BTreeMap<GroupKey, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub loss: LossBreakdown,
    pub grads: Weights,
    /// Mean image-text cross-entropy per group.
    pub groups: GroupLossTable,
    pub scales: GroupScales,
}

/// Loss and its gradient for one batch.
pub fn backward(
    params: &ModelParams,
    batch: &TrainBatch,
    config: &TrainConfig,
) -> Result<StepOutput> {
    evaluate(params, batch, config, None, true)
}

/// Total loss with the group scale factors pinned to `scales`.
///
/// This is the function whose exact gradient [`backward`] returns.
pub fn loss_with_frozen_scales(
    params: &ModelParams,
    batch: &TrainBatch,
    config: &TrainConfig,
    scales: &GroupScales,
) -> Result<f64> {
    Ok(evaluate(params, batch, config, Some(scales), false)?
        .loss
        .total)
}

/// Group-weighted mean: `(1/|G|) Σ_g s_g · mean_{i∈g} loss_i`, and `∂/∂loss_i`.
fn scaled_mean(
    groups: &BTreeMap<GroupKey, Vec<usize>>,
    table: &GroupLossTable,
    scales: &BTreeMap<GroupKey, f64>,
    n: usize,
) -> Result<(f64, Vec<f64>)> {
    let g = table.len() as f64;
    let mut total = 0.0;
    let mut coef = vec![0.0; n];
    for (key, mean) in table.entries() {
        let s = *scales
            .get(key)
            .ok_or_else(|| Error::Parameter(format!("no scale for group {key}")))?;
        total += s * mean;
        let members = &groups[key];
        for &i in members {
            coef[i] = s / (g * members.len() as f64);
        }
    }
    Ok((total / g, coef))
}

fn plain_mean(losses: &[f64]) -> (f64, Vec<f64>) {
    let n = losses.len() as f64;
    (losses.iter().sum::<f64>() / n, vec![1.0 / n; losses.len()])
}

fn table_of(groups: &BTreeMap<GroupKey, Vec<usize>>, losses: &[f64]) -> Result<GroupLossTable> {
    let buckets = groups
        .iter()
        .map(|(k, idx)| (*k, idx.iter().map(|&i| losses[i]).collect()))
        .collect();
    group_loss(&buckets)
}

/// Group-scaled or plain mean of per-sample losses, with per-sample coefficients.
fn reduce(
    config: &TrainConfig,
    scaled: bool,
    groups: &BTreeMap<GroupKey, Vec<usize>>,
    table: &GroupLossTable,
    losses: &[f64],
    frozen: Option<&BTreeMap<GroupKey, f64>>,
) -> Result<(f64, Vec<f64>, BTreeMap<GroupKey, f64>)> {
    if !scaled {
        let (loss, coef) = plain_mean(losses);
        let unit = table.entries().keys().map(|k| (*k, 1.0)).collect();
        return Ok((loss, coef, unit));
    }
    let scales = match frozen {
        Some(s) => s.clone(),
        None => gsrm_aggregate(table, &config.gs_params(table.len())?).1,
    };
    let (loss, coef) = scaled_mean(groups, table, &scales, losses.len())?;
    Ok((loss, coef, scales))
}

/// `∂ cos(h, a) / ∂h` for a unit vector `a`.
fn cosine_grad(h: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    let nh = norm(h);
    if nh < crate::linalg::ZERO_NORM {
        return Err(Error::DegenerateDirection);
    }
    let c = dot(h, a) / nh;
    Ok(h.iter()
        .zip(a)
        .map(|(hi, ai)| ai / nh - c * hi / (nh * nh))
        .collect())
}

/// Accumulates the gradient through `z = H tanh(w) + h` and `w = E x + e`.
fn backprop_extractor(
    params: &ModelParams,
    grads: &mut Weights,
    fwd: &Forward,
    input: &[f64],
    dz: &[f64],
    mut dw: Vec<f64>,
) -> Result<()> {
    let hidden = &params.weights.hidden;
    grads.hidden.weight.add_outer(1.0, dz, &fwd.activation);
    axpy(&mut grads.hidden.bias, 1.0, dz);
    let da = hidden.weight.matvec_t(dz)?;
    for ((d, a), g) in dw.iter_mut().zip(&fwd.activation).zip(&da) {
        *d += g * (1.0 - a * a);
    }
    grads.embed.weight.add_outer(1.0, &dw, input);
    axpy(&mut grads.embed.bias, 1.0, &dw);
    Ok(())
}

fn evaluate(
    params: &ModelParams,
    batch: &TrainBatch,
    config: &TrainConfig,
    frozen: Option<&GroupScales>,
    with_grads: bool,
) -> Result<StepOutput> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let k = params.embed_dim();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by_key(|&i| batch.samples[i].sample_id);
    let samples: Vec<&Sample> = order.iter().map(|&i| &batch.samples[i]).collect();
    let n = samples.len();
    let labels: Vec<ClassLabel> = samples.iter().map(|s| s.label).collect();

    let fwd = samples
        .iter()
        .map(|s| forward(params, &s.embedding))
        .collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(GroupKey::of(s)).or_default().push(i);
    }

    let mut grads = Weights::zeros(params.input_dim(), k);
    let mut dw = vec![vec![0.0; k]; n];
    let mut dz = vec![vec![0.0; k]; n];

    // Image-text head.
    let it_ce = fwd
        .iter()
        .zip(&labels)
        .map(|(f, y)| cross_entropy(&f.it_logits, *y))
        .collect::<Result<Vec<_>>>()?;
    let it_table = table_of(&groups, &it_ce)?;
    let (it_loss, it_coef, it_scales) = reduce(
        config,
        config.uses_gs(),
        &groups,
        &it_table,
        &it_ce,
        frozen.map(|f| &f.image_text),
    )?;
    let mut d_it: Vec<[f64; 2]> = fwd
        .iter()
        .zip(&labels)
        .zip(&it_coef)
        .map(|((f, y), c)| {
            let g = cross_entropy_grad(&f.it_logits, *y);
            [c * g[0], c * g[1]]
        })
        .collect();

    let mut irm = 0.0;
    if config.uses_irm() {
        let mut domains: BTreeMap<DomainId, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            domains.entry(s.domain).or_default().push(i);
        }
        let weight = config.lambda_irm / domains.len() as f64;
        for idx in domains.values() {
            let logits: Vec<Vec<f64>> = idx.iter().map(|&i| fwd[i].it_logits.clone()).collect();
            let ys: Vec<ClassLabel> = idx.iter().map(|&i| labels[i]).collect();
            let (penalty, g) = irm_penalty_with_grads(&logits, &ys)?;
            irm += penalty;
            for (&i, gi) in idx.iter().zip(&g) {
                d_it[i][0] += weight * gi[0];
                d_it[i][1] += weight * gi[1];
            }
        }
        irm /= domains.len() as f64;
    }

    for i in 0..n {
        for (c, d) in d_it[i].iter().enumerate() {
            let g = cosine_grad(&fwd[i].embedding, params.anchors.get(c))?;
            axpy(&mut dw[i], params.logit_scale * d, &g);
        }
    }

    // Decomposition loss on the anchor-orthogonal part of the embedding.
    let mut fod = 0.0;
    if config.uses_fod() {
        let basis = invariant_basis(&params.anchors)?;
        let mut specifics = Vec::with_capacity(n);
        for f in &fwd {
            let inv = basis.project(&f.embedding)?;
            specifics.push(crate::linalg::sub(&f.embedding, &inv));
        }
        let keys: Vec<u64> = samples.iter().map(|s| s.domain.0 as u64).collect();
        let out = supervised_contrastive(&specifics, &keys, config.tau_fod, config.fod_normalize)?;
        fod = out.loss;
        for (d, g) in dw.iter_mut().zip(&out.grads) {
            let inv = basis.project(g)?;
            axpy(d, config.lambda_fod, g);
            axpy(d, -config.lambda_fod, &inv);
        }
    }

    // Classifier head.
    let class_ce = fwd
        .iter()
        .zip(&labels)
        .map(|(f, y)| cross_entropy(&f.class_logits, *y))
        .collect::<Result<Vec<_>>>()?;
    let class_scaled = config.uses_gs() && config.gs_apply_to_class;
    let class_table = table_of(&groups, &class_ce)?;
    let (class_loss, class_coef, class_scales) = reduce(
        config,
        class_scaled,
        &groups,
        &class_table,
        &class_ce,
        frozen.and_then(|f| f.class.as_ref()),
    )?;
    let classifier = &params.weights.classifier;
    for i in 0..n {
        let g = cross_entropy_grad(&fwd[i].class_logits, labels[i]);
        let dl = [class_coef[i] * g[0], class_coef[i] * g[1]];
        grads.classifier.weight.add_outer(1.0, &dl, &fwd[i].z);
        axpy(&mut grads.classifier.bias, 1.0, &dl);
        let back = classifier.weight.matvec_t(&dl)?;
        axpy(&mut dz[i], 1.0, &back);
    }

    // Paired-view contrastive loss on z.
    let mut ii = 0.0;
    let mut view_pass: Vec<(Forward, Vec<f64>)> = Vec::new();
    if config.uses_views() {
        let views = batch.views().ok_or_else(|| {
            Error::Parameter("objective needs augmented views but the batch has none".into())
        })?;
        let vfwd = order
            .iter()
            .map(|&i| forward(params, &views[i]))
            .collect::<Result<Vec<_>>>()?;
        let mut features = Vec::with_capacity(2 * n);
        for i in 0..n {
            features.push(fwd[i].z.clone());
            features.push(vfwd[i].z.clone());
        }
        let (loss, g) = ii_sim_with_grads(&features, config.tau_ii)?;
        ii = loss;
        for i in 0..n {
            axpy(&mut dz[i], config.lambda_ii, &g[2 * i]);
        }
        view_pass = vfwd
            .into_iter()
            .enumerate()
            .map(|(i, f)| (f, crate::linalg::scale(&g[2 * i + 1], config.lambda_ii)))
            .collect();
    }

    if with_grads {
        for i in 0..n {
            let d = std::mem::take(&mut dw[i]);
            backprop_extractor(
                params,
                &mut grads,
                &fwd[i],
                &samples[i].embedding,
                &dz[i],
                d,
            )?;
        }
        if let Some(views) = batch.views() {
            for (j, (f, dzv)) in view_pass.iter().enumerate() {
                backprop_extractor(params, &mut grads, f, &views[order[j]], dzv, vec![0.0; k])?;
            }
        }
    }

    let weights = LossWeights {
        fod: if config.uses_fod() {
            config.lambda_fod
        } else {
            0.0
        },
        ii_sim: if config.uses_views() {
            config.lambda_ii
        } else {
            0.0
        },
        irm: if config.uses_irm() {
            config.lambda_irm
        } else {
            0.0
        },
    };
    let loss = compose(
        LossBreakdown {
            it_gs: it_loss,
            fod,
            ii_sim: ii,
            class_ce: class_loss,
            irm,
            total: 0.0,
        },
        &weights,
    );
    if !loss.total.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss or gradient: {loss:?}"
        )));
    }
    Ok(StepOutput {
        loss,
        grads,
        groups: it_table,
        scales: GroupScales {
            image_text: it_scales,
            class: class_scaled.then_some(class_scales),
        },
    })
}
