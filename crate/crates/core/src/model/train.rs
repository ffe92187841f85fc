//! Deterministic group-balanced SGD.
//!
//! Each epoch shuffles every `(domain, label)` group with a stream derived
//! from `(seed, epoch)`; iteration `t` takes `quota` consecutive entries from
//! each shuffled group. The noise for the second views comes from one running
//! stream whose state is saved in the checkpoint, so a resumed run replays
//! the uninterrupted one bit for bit.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::objective::{backward, StepOutput, TrainBatch};
use super::{ModelParams, Weights};
use crate::error::{Error, Result};
use crate::fod::TextAnchors;
use crate::groups::{ClassLabel, DomainId, GroupKey, Sample};
use crate::losses::LossBreakdown;
use crate::rng::{tag, Rng};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Fixed group-balanced batch plan over a dataset.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    groups: Vec<(GroupKey, Vec<usize>)>,
    quota: usize,
    seed: u64,
}

impl BatchSchedule {
    /// Every domain present must have both a live and a spoof sample.
    pub fn new(samples: &[Sample], quota: usize, seed: u64) -> Result<Self> {
        if quota == 0 {
            return Err(Error::Config("quota must be >= 1".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by_key(|&i| samples[i].sample_id);
        let mut map: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
        for i in order {
            map.entry(GroupKey::of(&samples[i])).or_default().push(i);
        }
        let domains: BTreeSet<DomainId> = samples.iter().map(|s| s.domain).collect();
        if domains.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        for d in &domains {
            for label in ClassLabel::ALL {
                let key = GroupKey { domain: *d, label };
                if !map.contains_key(&key) {
                    return Err(Error::Config(format!("group {key} has no samples")));
                }
            }
        }
        Ok(BatchSchedule {
            groups: map.into_iter().collect(),
            quota,
            seed,
        })
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn iterations_per_epoch(&self) -> usize {
        let smallest = self.groups.iter().map(|(_, v)| v.len()).min().unwrap_or(0);
        (smallest / self.quota).max(1)
    }

    /// Sample indices of every batch in `epoch`.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = Rng::stream(self.seed, tag::SCHEDULE, epoch);
        let perms: Vec<Vec<usize>> = self
            .groups
            .iter()
            .map(|(_, idx)| {
                let mut p = idx.clone();
                rng.shuffle(&mut p);
                p
            })
            .collect();
        (0..self.iterations_per_epoch())
            .map(|t| {
                let mut batch = Vec::with_capacity(self.quota * perms.len());
                for p in &perms {
                    for j in 0..self.quota {
                        batch.push(p[(t * self.quota + j) % p.len()]);
                    }
                }
                batch
            })
            .collect()
    }
}

/// Loss and scale factor of one group in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLogEntry {
    pub domain: DomainId,
    pub label: ClassLabel,
    pub loss: f64,
    pub weight: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: u64,
    pub epoch: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub groups: Vec<GroupLogEntry>,
}

impl LogRecord {
    fn from_step(iteration: u64, epoch: u64, out: &StepOutput) -> Self {
        let groups = out
            .groups
            .entries()
            .iter()
            .map(|(k, loss)| GroupLogEntry {
                domain: k.domain,
                label: k.label,
                loss: *loss,
                weight: out.scales.image_text.get(k).copied().unwrap_or(1.0),
            })
            .collect();
        LogRecord {
            iteration,
            epoch,
            loss: out.loss,
            groups,
        }
    }
}

fn check_samples(samples: &[Sample], dim: usize) -> Result<()> {
    for s in samples {
        Error::check_dim(dim, s.embedding.len())?;
        if !s.embedding.iter().all(|x| x.is_finite()) {
            return Err(Error::Parameter(format!(
                "sample {} has a non-finite embedding",
                s.sample_id
            )));
        }
    }
    Ok(())
}

/// Trains from a fresh initialization for `config.epochs` epochs.
pub fn train(
    samples: &[Sample],
    anchors: TextAnchors,
    config: &TrainConfig,
) -> Result<(Checkpoint, Vec<LogRecord>)> {
    config.validate()?;
    let dim = samples
        .first()
        .map(|s| s.embedding.len())
        .ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let params = ModelParams::init(dim, anchors, config.logit_scale, config.seed)?;
    let start = Checkpoint {
        params,
        config: config.clone(),
        iteration: 0,
        epoch: 0,
        rng_state: Rng::stream(config.seed, tag::AUGMENT, 0).state(),
        velocity: None,
    };
    run(start, samples, config.epochs as u64)
}

/// Continues a run for `extra_epochs` more epochs.
pub fn resume(
    checkpoint: Checkpoint,
    samples: &[Sample],
    extra_epochs: usize,
) -> Result<(Checkpoint, Vec<LogRecord>)> {
    let until = checkpoint.epoch + extra_epochs as u64;
    run(checkpoint, samples, until)
}

fn run(
    mut state: Checkpoint,
    samples: &[Sample],
    until_epoch: u64,
) -> Result<(Checkpoint, Vec<LogRecord>)> {
    let config = state.config.clone();
    config.validate()?;
    check_samples(samples, state.params.input_dim())?;
    let schedule = BatchSchedule::new(samples, config.quota, config.seed)?;
    let mut rng = Rng::new(state.rng_state);
    let mut log = Vec::new();

    while state.epoch < until_epoch {
        for batch_idx in schedule.epoch(state.epoch) {
            let batch_samples: Vec<Sample> =
                batch_idx.iter().map(|&i| samples[i].clone()).collect();
            let batch = if config.uses_views() {
                TrainBatch::augmented(batch_samples, config.sigma_aug, &mut rng)
            } else {
                TrainBatch::new(batch_samples, None)?
            };
            let out = backward(&state.params, &batch, &config)?;
            if out.loss.total > DIVERGENCE_LIMIT {
                return Err(Error::Numerical(format!(
                    "training diverged at iteration {}: total loss {}",
                    state.iteration, out.loss.total
                )));
            }
            log.push(LogRecord::from_step(state.iteration, state.epoch, &out));
            apply_update(&mut state, out.grads, &config)?;
            state.iteration += 1;
        }
        state.epoch += 1;
    }
    state.rng_state = rng.state();
    Ok((state, log))
}

fn apply_update(state: &mut Checkpoint, grads: Weights, config: &TrainConfig) -> Result<()> {
    let step = if config.momentum > 0.0 {
        let v = state
            .velocity
            .get_or_insert_with(|| Weights::zeros(grads.input_dim(), grads.embed_dim()));
        v.scale(config.momentum);
        v.axpy(1.0, &grads);
        v.clone()
    } else {
        grads
    };
    state.params.weights.axpy(-config.learning_rate, &step);
    if !state.params.weights.is_finite() {
        return Err(Error::Numerical(format!(
            "parameters became non-finite at iteration {}",
            state.iteration
        )));
    }
    Ok(())
}
