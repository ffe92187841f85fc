use serde::Serialize;

use super::config::TrainConfig;
use super::objective::{backward, loss_with_frozen_scales, TrainBatch};
use super::{ModelParams, Weights};
use crate::error::Result;

/// Agreement between analytic and central-difference gradients for one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheck {
    pub name: &'static str,
    pub max_abs_error: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, or the absolute
    /// error when both norms are below `1e-10`.
    pub relative_error: f64,
}

/// Compares [`backward`] against central differences of the loss with the
/// group scale factors held at their values at `params`.
pub fn check_gradients(
    params: &ModelParams,
    batch: &TrainBatch,
    config: &TrainConfig,
    step: f64,
) -> Result<Vec<BlockCheck>> {
    let base = backward(params, batch, config)?;
    let mut numeric = Weights::zeros(params.input_dim(), params.embed_dim());
    let mut probe = params.clone();
    for block in 0..Weights::BLOCK_NAMES.len() {
        let len = params.weights.blocks()[block].len();
        for j in 0..len {
            let orig = params.weights.blocks()[block][j];
            probe.weights.blocks_mut()[block][j] = orig + step;
            let up = loss_with_frozen_scales(&probe, batch, config, &base.scales)?;
            probe.weights.blocks_mut()[block][j] = orig - step;
            let down = loss_with_frozen_scales(&probe, batch, config, &base.scales)?;
            probe.weights.blocks_mut()[block][j] = orig;
            numeric.blocks_mut()[block][j] = (up - down) / (2.0 * step);
        }
    }
    let out = Weights::BLOCK_NAMES
        .iter()
        .zip(base.grads.blocks().iter().zip(numeric.blocks()))
        .map(|(name, (an, num))| {
            let mut diff2 = 0.0;
            let mut an2 = 0.0;
            let mut num2 = 0.0;
            let mut max_abs: f64 = 0.0;
            for (a, b) in an.iter().zip(num) {
                diff2 += (a - b) * (a - b);
                an2 += a * a;
                num2 += b * b;
                max_abs = max_abs.max((a - b).abs());
            }
            let scale = an2.sqrt().max(num2.sqrt());
            let relative_error = if scale < 1e-10 {
                diff2.sqrt()
            } else {
                diff2.sqrt() / scale
            };
            BlockCheck {
                name,
                max_abs_error: max_abs,
                relative_error,
            }
        })
        .collect();
    Ok(out)
}
