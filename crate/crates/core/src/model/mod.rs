//! Toy trainable network around the fixed text anchors.
//!
//! ```text
//! w = E x + e          embedding (d -> k), compared with the anchors
//! z = H tanh(w) + h    feature (k -> k)
//! c = C z + c0         classifier logits (k -> 2)
//! t = s · cos(w, a_y)  image-text logits against the frozen anchors
//! ```
//!
//! The embedding layer stands in for the image encoder so that the
//! decomposition loss has something to train. Anchors live in the
//! embedding space and never receive gradients.

mod checkpoint;
mod config;
mod gradcheck;
mod objective;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{Objective, TrainConfig};
pub use gradcheck::{check_gradients, BlockCheck};
pub use objective::{backward, loss_with_frozen_scales, GroupScales, StepOutput, TrainBatch};
pub use train::{resume, train, BatchSchedule, GroupLogEntry, LogRecord, DIVERGENCE_LIMIT};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fod::TextAnchors;
use crate::groups::Sample;
use crate::linalg::Affine;
use crate::losses::{it_logits, softmax2};
use crate::rng::{tag, Rng};

/// Trainable parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub embed: Affine,
    pub hidden: Affine,
    pub classifier: Affine,
}

impl Weights {
    pub const BLOCK_NAMES: [&'static str; 6] = [
        "embed.weight",
        "embed.bias",
        "hidden.weight",
        "hidden.bias",
        "classifier.weight",
        "classifier.bias",
    ];

    pub fn zeros(input_dim: usize, embed_dim: usize) -> Self {
        Weights {
            embed: Affine::zeros(embed_dim, input_dim),
            hidden: Affine::zeros(embed_dim, embed_dim),
            classifier: Affine::zeros(2, embed_dim),
        }
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]`, filled block by block in storage order.
    pub fn init(input_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut w = Weights::zeros(input_dim, embed_dim);
        let mut rng = Rng::stream(seed, tag::INIT, 0);
        for layer in [&mut w.embed, &mut w.hidden, &mut w.classifier] {
            let bound = 1.0 / (layer.in_dim() as f64).sqrt();
            for x in layer.weight.as_mut_slice() {
                *x = rng.uniform_in(-bound, bound);
            }
            for x in layer.bias.iter_mut() {
                *x = rng.uniform_in(-bound, bound);
            }
        }
        w
    }

    pub fn input_dim(&self) -> usize {
        self.embed.in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.out_dim()
    }

    pub fn blocks(&self) -> [&[f64]; 6] {
        [
            self.embed.weight.as_slice(),
            &self.embed.bias,
            self.hidden.weight.as_slice(),
            &self.hidden.bias,
            self.classifier.weight.as_slice(),
            &self.classifier.bias,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.embed.weight.as_mut_slice(),
            &mut self.embed.bias,
            self.hidden.weight.as_mut_slice(),
            &mut self.hidden.bias,
            self.classifier.weight.as_mut_slice(),
            &mut self.classifier.bias,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Weights) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            crate::linalg::axpy(dst, s, src);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn shapes_match(&self, other: &Weights) -> bool {
        self.blocks()
            .iter()
            .zip(other.blocks())
            .all(|(a, b)| a.len() == b.len())
    }
}

/// Everything needed to score a sample: trainable weights plus frozen anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Weights,
    pub anchors: TextAnchors,
    pub logit_scale: f64,
}

impl ModelParams {
    pub fn new(weights: Weights, anchors: TextAnchors, logit_scale: f64) -> Result<Self> {
        Error::check_dim(weights.embed_dim(), anchors.dim())?;
        if !(logit_scale > 0.0) {
            return Err(Error::Parameter(format!(
                "logit scale must be > 0, got {logit_scale}"
            )));
        }
        Ok(ModelParams {
            weights,
            anchors,
            logit_scale,
        })
    }

    pub fn init(
        input_dim: usize,
        anchors: TextAnchors,
        logit_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let k = anchors.dim();
        Self::new(Weights::init(input_dim, k, seed), anchors, logit_scale)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.weights.embed_dim()
    }
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Embedding compared against the anchors.
    pub embedding: Vec<f64>,
    /// `tanh(embedding)`, kept for the backward pass.
    pub activation: Vec<f64>,
    pub z: Vec<f64>,
    pub class_logits: Vec<f64>,
    pub it_logits: Vec<f64>,
}

pub fn forward(params: &ModelParams, input: &[f64]) -> Result<Forward> {
    let w = &params.weights;
    let embedding = w.embed.apply(input)?;
    let activation: Vec<f64> = embedding.iter().map(|x| x.tanh()).collect();
    let z = w.hidden.apply(&activation)?;
    let class_logits = w.classifier.apply(&z)?;
    let it_logits = it_logits(&embedding, &params.anchors, params.logit_scale)?;
    Ok(Forward {
        embedding,
        activation,
        z,
        class_logits,
        it_logits,
    })
}

/// Which logits produce the spoof score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Cosine similarity against the text anchors.
    #[default]
    Embedding,
    /// The affine classifier on `z`.
    Classifier,
}

impl std::str::FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(Head::Embedding),
            "classifier" => Ok(Head::Classifier),
            other => Err(Error::Config(format!(
                "unknown head '{other}', expected embedding or classifier"
            ))),
        }
    }
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Head::Embedding => "embedding",
            Head::Classifier => "classifier",
        })
    }
}

/// Two-class logits of the chosen head for each sample.
pub fn predict_logits(
    params: &ModelParams,
    samples: &[Sample],
    head: Head,
) -> Result<Vec<[f64; 2]>> {
    samples
        .iter()
        .map(|s| {
            let out = forward(params, &s.embedding)?;
            let l = match head {
                Head::Embedding => out.it_logits,
                Head::Classifier => out.class_logits,
            };
            Ok([l[0], l[1]])
        })
        .collect()
}

/// Spoof probability under the chosen head.
pub fn predict_scores(params: &ModelParams, samples: &[Sample], head: Head) -> Result<Vec<f64>> {
    Ok(predict_logits(params, samples, head)?
        .iter()
        .map(|l| softmax2(l)[1])
        .collect())
}
