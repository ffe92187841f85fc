//! WebAssembly bindings for the browser demo.
//!
//! Results come back as flat `f64` vectors (a `Float64Array` on the JS side)
//! with a fixed stride, so the page draws without any parsing. Errors are
//! plain strings, thrown as exceptions in JS.

use std::collections::BTreeMap;

use bias_align::fod::{decompose, invariant_basis};
use bias_align::groups::{ClassLabel, DomainId, GroupKey, Sample};
use bias_align::gsrm::{gs_estimator, gsrm_aggregate, normalize, GroupLossTable, GsParams};
use bias_align::linalg::Pca;
use bias_align::metrics::{
    apply_temperature, ece, roc_auc, split_indices, temperature_scale, ScoredSample,
    DEFAULT_VAL_FRACTION,
};
use bias_align::model::{
    forward, predict_logits, train, Head, ModelParams, Objective, TrainConfig,
};
use bias_align::synth::{generate, SynthConfig, SynthData};
use wasm_bindgen::prelude::*;

/// Values per bin in [`Demo::reliability`]: low, high, count, confidence, accuracy.
pub const BIN_STRIDE: usize = 5;
/// Values per point in [`Demo::scatter`]: pc1, pc2, domain, label.
pub const POINT_STRIDE: usize = 4;

fn err(e: bias_align::Error) -> String {
    e.to_string()
}

/// Interleaved `(x, σ(x))` pairs of the group-scaling curve over `[-half_width, half_width]`.
#[wasm_bindgen]
pub fn gs_curve(
    groups: usize,
    beta: f64,
    half_width: f64,
    points: usize,
) -> Result<Vec<f64>, String> {
    if groups < 2 {
        return Err(format!("need at least 2 groups, got {groups}"));
    }
    if points < 2 || !(half_width > 0.0) {
        return Err("need at least 2 points over a positive range".into());
    }
    let p = GsParams::for_group_count(groups)
        .and_then(|p| GsParams::new(p.alpha, beta))
        .map_err(err)?;
    let mut out = Vec::with_capacity(2 * points);
    for i in 0..points {
        let x = -half_width + 2.0 * half_width * i as f64 / (points - 1) as f64;
        out.push(x);
        out.push(gs_estimator(x, &p));
    }
    Ok(out)
}

/// Interleaved `(normalized loss, scale factor)` for each entered group loss,
/// with the sigmoid width set from `groups` as in [`gs_curve`].
#[wasm_bindgen]
pub fn gs_weights(losses: &[f64], groups: usize, beta: f64) -> Result<Vec<f64>, String> {
    if losses.len() < 2 {
        return Err("enter at least two group losses".into());
    }
    let entries: BTreeMap<GroupKey, f64> = losses
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let key = GroupKey {
                domain: DomainId(i as u32 / 2),
                label: ClassLabel::from_index(i as u64 % 2).expect("index below 2"),
            };
            (key, l)
        })
        .collect();
    let table = GroupLossTable::from_entries(entries).map_err(err)?;
    if groups < 2 {
        return Err(format!("need at least 2 groups, got {groups}"));
    }
    let base = GsParams::for_group_count(groups).map_err(err)?;
    let p = GsParams::new(base.alpha, beta).map_err(err)?;
    let (_, weights) = gsrm_aggregate(&table, &p);
    let z = normalize(&table);
    Ok(z.iter().flat_map(|(k, v)| [*v, weights[k]]).collect())
}

/// Synthetic data for the page: smaller than the reference set so training
/// finishes in the browser in about a second, and noisier so the classes
/// overlap and a fitted temperature stays inside its search range.
pub fn demo_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        dim: 16,
        per_group: 60,
        noise: 1.0,
        seed,
        ..SynthConfig::default()
    }
}

pub fn demo_train(objective: Objective, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        objective,
        learning_rate: 0.01,
        epochs,
        seed,
        ..TrainConfig::default()
    }
}

/// An erm and a gdfas model trained on the same synthetic data.
#[wasm_bindgen]
pub struct Demo {
    data: SynthData,
    models: Vec<(Objective, ModelParams)>,
}

type Split<'a> = (Vec<[f64; 2]>, Vec<&'a Sample>);

impl Demo {
    fn model(&self, objective: &str) -> Result<&ModelParams, String> {
        let wanted: Objective = objective.parse().map_err(err)?;
        self.models
            .iter()
            .find(|(o, _)| *o == wanted)
            .map(|(_, p)| p)
            .ok_or_else(|| format!("the demo trains erm and gdfas only, not {objective}"))
    }

    /// Held-out logits split into a validation part and a test part.
    fn held_out(&self, objective: &str) -> Result<(Split<'_>, Split<'_>), String> {
        let params = self.model(objective)?;
        let logits = predict_logits(params, &self.data.unseen, Head::Embedding).map_err(err)?;
        let labels: Vec<ClassLabel> = self.data.unseen.iter().map(|s| s.label).collect();
        let (val, test) = split_indices(&labels, DEFAULT_VAL_FRACTION, 0).map_err(err)?;
        let pick = |idx: &[usize]| -> Split<'_> {
            (
                idx.iter().map(|&i| logits[i]).collect(),
                idx.iter().map(|&i| &self.data.unseen[i]).collect(),
            )
        };
        Ok((pick(&val), pick(&test)))
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, epochs: usize) -> Result<Demo, String> {
        let data = generate(&demo_synth(seed as u64)).map_err(err)?;
        let mut models = Vec::new();
        for objective in [Objective::Erm, Objective::Gdfas] {
            let config = demo_train(objective, epochs, seed as u64);
            let (ck, _) = train(&data.train, data.anchors.clone(), &config).map_err(err)?;
            models.push((objective, ck.params));
        }
        Ok(Demo { data, models })
    }

    #[wasm_bindgen(getter)]
    pub fn unseen_domain(&self) -> u32 {
        self.data.truth.unseen_domain.0
    }

    /// Temperature fitted on the validation part of the held-out domain.
    pub fn fitted_temperature(&self, objective: &str) -> Result<f64, String> {
        let ((vl, vs), _) = self.held_out(objective)?;
        let labels: Vec<ClassLabel> = vs.iter().map(|s| s.label).collect();
        temperature_scale(&vl, &labels).map_err(err)
    }

    /// `[ece, auc, bins × (low, high, count, confidence, accuracy)]` on the
    /// test part of the held-out domain at the given temperature.
    pub fn reliability(
        &self,
        objective: &str,
        temperature: f64,
        bins: usize,
    ) -> Result<Vec<f64>, String> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(format!("temperature must be positive, got {temperature}"));
        }
        let (_, (tl, ts)) = self.held_out(objective)?;
        let scored: Vec<ScoredSample> = apply_temperature(&tl, temperature)
            .into_iter()
            .zip(&ts)
            .map(|(score, s)| ScoredSample {
                sample_id: s.sample_id,
                domain: s.domain,
                label: s.label,
                score,
            })
            .collect();
        let (value, table) = ece(&scored, bins).map_err(err)?;
        let auc = roc_auc(&scored).map_err(err)?;
        let mut out = vec![value, auc];
        for b in &table.bins {
            out.extend([b.low, b.high, b.count as f64, b.confidence, b.accuracy]);
        }
        Ok(out)
    }

    /// `[pc1, pc2, domain, label]` per sample, seen samples first, in the
    /// first two principal components of `space` (embedding, invariant or
    /// specific), fitted on the seen samples.
    pub fn scatter(&self, objective: &str, space: &str) -> Result<Vec<f64>, String> {
        let params = self.model(objective)?;
        let basis = invariant_basis(&params.anchors).map_err(err)?;
        let samples: Vec<&Sample> = self.data.train.iter().chain(&self.data.unseen).collect();
        let mut rows = Vec::with_capacity(samples.len());
        for s in &samples {
            let w = forward(params, &s.embedding).map_err(err)?.embedding;
            let row = match space {
                "embedding" => w,
                "invariant" => decompose(&w, &basis).map_err(err)?.invariant,
                "specific" => decompose(&w, &basis).map_err(err)?.specific,
                other => {
                    return Err(format!(
                        "unknown space '{other}', expected embedding, invariant or specific"
                    ))
                }
            };
            rows.push(row);
        }
        let pca = Pca::fit(&rows[..self.data.train.len()], 2).map_err(err)?;
        let mut out = Vec::with_capacity(POINT_STRIDE * rows.len());
        for (row, s) in rows.iter().zip(&samples) {
            let pc = pca.project(row).map_err(err)?;
            out.extend([pc[0], pc[1], s.domain.0 as f64, s.label.index() as f64]);
        }
        Ok(out)
    }
}
