//! Synthetic multi-domain embeddings with a known invariant direction.
//!
//! ```text
//! x = y·c + m_e·d_e + σ·g        y = +1 live, −1 spoof
//! ```
//!
//! `c` is a scaled coordinate axis. The domain offsets `d_e` are seeded
//! random unit vectors supported on disjoint blocks of the remaining
//! coordinates, so every inner product between `c` and the offsets is
//! exactly zero. The held-out domain gets its own block and a larger
//! magnitude. When a coordinate is left over it carries the small tilt that
//! keeps the spoof anchor independent of the live anchor; otherwise the
//! tilt uses the held-out offset direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fod::{decompose, invariant_basis, TextAnchors};
use crate::groups::{ClassLabel, DomainId, Sample};
use crate::linalg::{dot, norm, scale};
use crate::metrics::{bias_alignment_stat, ScoredSample};
use crate::model::{forward, predict_scores, Head, ModelParams};
use crate::rng::{tag, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    /// Seen domains; one more is generated as the held-out domain.
    pub domains: usize,
    pub per_group: usize,
    /// Coordinate axis carrying the class direction.
    pub class_index: usize,
    /// `‖c‖`.
    pub class_norm: f64,
    /// Offset magnitude for seen domains.
    pub offset: f64,
    /// Held-out offset magnitude as a multiple of `offset`.
    pub unseen_offset_factor: f64,
    pub noise: f64,
    /// Weight of the tilt added to the spoof anchor.
    pub anchor_tilt: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 32,
            domains: 3,
            per_group: 200,
            class_index: 0,
            class_norm: 1.0,
            offset: 1.5,
            unseen_offset_factor: 1.5,
            noise: 0.5,
            anchor_tilt: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.domains == 0 {
            return Err(Error::Config("synth.domains must be >= 1".into()));
        }
        if self.dim < self.domains + 2 {
            return Err(Error::Config(format!(
                "synth.dim must be >= domains + 2 = {}, got {}",
                self.domains + 2,
                self.dim
            )));
        }
        if self.per_group == 0 {
            return Err(Error::Config("synth.per_group must be >= 1".into()));
        }
        if self.class_index >= self.dim {
            return Err(Error::Config(format!(
                "synth.class_index {} out of range for dim {}",
                self.class_index, self.dim
            )));
        }
        for (name, v) in [
            ("synth.class_norm", self.class_norm),
            ("synth.offset", self.offset),
            ("synth.noise", self.noise),
            ("synth.unseen_offset_factor", self.unseen_offset_factor),
            ("synth.anchor_tilt", self.anchor_tilt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Ground truth of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// `c`, with norm `class_norm`.
    pub class_direction: Vec<f64>,
    /// Unit offset per domain id; the last entry belongs to the held-out domain.
    pub offsets: Vec<Vec<f64>>,
    pub unseen_domain: DomainId,
    /// Unit direction of the spoof-anchor tilt.
    pub tilt_direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: Vec<Sample>,
    pub unseen: Vec<Sample>,
    pub truth: SynthTruth,
    pub anchors: TextAnchors,
}

/// Splits `coords` into `parts` contiguous blocks, earlier blocks one longer.
fn blocks(coords: &[usize], parts: usize) -> Vec<&[usize]> {
    let base = coords.len() / parts;
    let extra = coords.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(&coords[start..start + len]);
        start += len;
    }
    out
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let d = config.dim;
    let e = config.domains;
    let mut c = vec![0.0; d];
    c[config.class_index] = config.class_norm;

    let rest: Vec<usize> = (0..d).filter(|&i| i != config.class_index).collect();
    let spare = rest.len() >= e + 2;
    let offset_coords = if spare {
        &rest[..rest.len() - 1]
    } else {
        &rest[..]
    };
    let mut offsets = Vec::with_capacity(e + 1);
    for (j, block) in blocks(offset_coords, e + 1).into_iter().enumerate() {
        let mut rng = Rng::stream(config.seed, tag::SYNTH_TRUTH, j as u64);
        let mut v = vec![0.0; d];
        loop {
            for &i in block {
                v[i] = rng.gaussian();
            }
            if norm(&v) > 1e-6 {
                break;
            }
        }
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        offsets.push(v);
    }
    let tilt_direction = if spare {
        let mut t = vec![0.0; d];
        t[rest[rest.len() - 1]] = 1.0;
        t
    } else {
        offsets[e].clone()
    };

    let make = |domain: usize, magnitude: f64, first_id: u64| -> Vec<Sample> {
        let mut rng = Rng::stream(config.seed, tag::SYNTH_NOISE, domain as u64);
        let mut out = Vec::with_capacity(2 * config.per_group);
        for label in ClassLabel::ALL {
            for _ in 0..config.per_group {
                let y = label.signed();
                let embedding = (0..d)
                    .map(|i| {
                        y * c[i] + magnitude * offsets[domain][i] + config.noise * rng.gaussian()
                    })
                    .collect();
                out.push(Sample {
                    sample_id: first_id + out.len() as u64,
                    domain: DomainId(domain as u32),
                    label,
                    embedding,
                });
            }
        }
        out
    };

    let per_domain = 2 * config.per_group as u64;
    let mut train = Vec::with_capacity(e * per_domain as usize);
    for j in 0..e {
        train.extend(make(j, config.offset, j as u64 * per_domain));
    }
    let unseen = make(
        e,
        config.unseen_offset_factor * config.offset,
        e as u64 * per_domain,
    );

    let unit_c = scale(&c, 1.0 / config.class_norm);
    let mut spoof = scale(&unit_c, -1.0);
    crate::linalg::axpy(&mut spoof, config.anchor_tilt, &tilt_direction);
    let anchors = TextAnchors::new(unit_c, spoof)?;

    Ok(SynthData {
        train,
        unseen,
        truth: SynthTruth {
            class_direction: c,
            offsets,
            unseen_domain: DomainId(e as u32),
            tilt_direction,
        },
        anchors,
    })
}

/// Resubstitution accuracy of a nearest-centroid domain classifier.
pub fn nearest_centroid_accuracy(features: &[Vec<f64>], domains: &[DomainId]) -> Result<f64> {
    Error::check_dim(features.len(), domains.len())?;
    if features.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let dim = features[0].len();
    let mut ids: Vec<DomainId> = domains.to_vec();
    ids.sort();
    ids.dedup();
    let mut centroids = vec![vec![0.0; dim]; ids.len()];
    let mut counts = vec![0usize; ids.len()];
    for (f, d) in features.iter().zip(domains) {
        Error::check_dim(dim, f.len())?;
        let k = ids.binary_search(d).expect("domain listed");
        crate::linalg::axpy(&mut centroids[k], 1.0, f);
        counts[k] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|x| *x /= *n as f64);
    }
    let mut correct = 0usize;
    for (f, d) in features.iter().zip(domains) {
        let best = centroids
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let dist: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                (k, dist)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one centroid")
            .0;
        if ids[best] == *d {
            correct += 1;
        }
    }
    Ok(correct as f64 / features.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub domains: usize,
    /// `1 / domains`.
    pub chance: f64,
    pub invariant_probe_accuracy: f64,
    pub specific_probe_accuracy: f64,
    /// Angle in degrees between the embedded class direction and the anchor span.
    pub class_direction_angle_deg: f64,
    /// Threshold spread of the chosen head over the given samples, if defined.
    pub bias_alignment: Option<f64>,
}

/// Probes a model against the generator's ground truth on `samples`.
pub fn oracle_checks(
    samples: &[Sample],
    truth: &SynthTruth,
    params: &ModelParams,
    head: Head,
) -> Result<OracleReport> {
    let basis = invariant_basis(&params.anchors)?;
    let mut inv = Vec::with_capacity(samples.len());
    let mut specific_parts = Vec::with_capacity(samples.len());
    for s in samples {
        let w = forward(params, &s.embedding)?.embedding;
        let parts = decompose(&w, &basis)?;
        inv.push(parts.invariant);
        specific_parts.push(parts.specific);
    }
    let domains: Vec<DomainId> = samples.iter().map(|s| s.domain).collect();
    let n_domains = crate::groups::distinct_domains(samples);

    let embedded_c = params.weights.embed.weight.matvec(&truth.class_direction)?;
    let len = norm(&embedded_c);
    let angle = if len < crate::linalg::ZERO_NORM {
        90.0
    } else {
        let inside = norm(&basis.project(&embedded_c)?);
        (inside / len).clamp(0.0, 1.0).acos().to_degrees()
    };

    let scores = predict_scores(params, samples, head)?;
    let scored: Vec<ScoredSample> = samples
        .iter()
        .zip(&scores)
        .map(|(s, &score)| ScoredSample {
            sample_id: s.sample_id,
            domain: s.domain,
            label: s.label,
            score,
        })
        .collect();
    let bias = match bias_alignment_stat(&scored) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };

    Ok(OracleReport {
        domains: n_domains,
        chance: 1.0 / n_domains as f64,
        invariant_probe_accuracy: nearest_centroid_accuracy(&inv, &domains)?,
        specific_probe_accuracy: nearest_centroid_accuracy(&specific_parts, &domains)?,
        class_direction_angle_deg: angle,
        bias_alignment: bias,
    })
}

/// Checks the truth's orthogonality invariants; returns the largest |inner product|.
pub fn max_truth_overlap(truth: &SynthTruth) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in truth.offsets.iter().enumerate() {
        worst = worst.max(dot(a, &truth.class_direction).abs());
        for b in &truth.offsets[i + 1..] {
            worst = worst.max(dot(a, b).abs());
        }
    }
    worst
}
