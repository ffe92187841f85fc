//! Supervised contrastive (InfoNCE-style) loss with analytic gradients.
//!
//! For anchors `i` with a nonempty positive set `P(i) = {j ≠ i : key_j = key_i}`:
//!
//! ```text
//! loss = Σ_i  -1/|P(i)| Σ_{p ∈ P(i)} log( exp(s_ip) / Σ_{j ≠ i} exp(s_ij) ),   s_ij = u_i·u_j / τ
//! ```
//!
//! Anchors without positives contribute nothing. Both the domain-supervised
//! loss on specific features and the paired-view image loss are instances.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, scale};

/// Features with a norm below this are dropped when normalizing.
pub const MIN_FEATURE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutput {
    pub loss: f64,
    /// Gradient of `loss` with respect to each raw input feature.
    pub grads: Vec<Vec<f64>>,
    /// Indices dropped for having (near) zero norm.
    pub skipped: Vec<usize>,
}

pub fn supervised_contrastive(
    features: &[Vec<f64>],
    keys: &[u64],
    tau: f64,
    normalize: bool,
) -> Result<ContrastiveOutput> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Parameter(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    Error::check_dim(features.len(), keys.len())?;
    let dim = features.first().map_or(0, Vec::len);
    for f in features {
        Error::check_dim(dim, f.len())?;
    }

    let mut skipped = Vec::new();
    let mut active = Vec::with_capacity(features.len());
    let mut norms = vec![1.0; features.len()];
    let mut units: Vec<Vec<f64>> = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        if normalize {
            let n = norm(f);
            norms[i] = n;
            if n < MIN_FEATURE_NORM {
                skipped.push(i);
                units.push(vec![0.0; dim]);
                continue;
            }
            units.push(scale(f, 1.0 / n));
        } else {
            units.push(f.clone());
        }
        active.push(i);
    }
    if !skipped.is_empty() {
        log::warn!(
            "contrastive loss: {} feature(s) with near-zero norm skipped",
            skipped.len()
        );
    }

    let mut grad_u = vec![vec![0.0; dim]; features.len()];
    let mut loss = 0.0;
    let mut logits = Vec::with_capacity(active.len());
    for &i in &active {
        let positives = active
            .iter()
            .filter(|&&j| j != i && keys[j] == keys[i])
            .count();
        if positives == 0 {
            continue;
        }
        logits.clear();
        for &j in &active {
            if j != i {
                logits.push((j, dot(&units[i], &units[j]) / tau));
            }
        }
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &(_, s)| m.max(s));
        let mut denom = 0.0;
        for &(_, s) in &logits {
            denom += (s - max).exp();
        }
        let lse = max + denom.ln();
        let inv_p = 1.0 / positives as f64;
        let mut pos_sum = 0.0;
        for &(j, s) in &logits {
            if keys[j] == keys[i] {
                pos_sum += s;
            }
        }
        loss += lse - inv_p * pos_sum;

        let ui = units[i].clone();
        for &(j, s) in &logits {
            let q = (s - max).exp() / denom;
            let target = if keys[j] == keys[i] { inv_p } else { 0.0 };
            let g = (q - target) / tau;
            axpy(&mut grad_u[i], g, &units[j]);
            axpy(&mut grad_u[j], g, &ui);
        }
    }

    let grads = grad_u
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            if !normalize {
                return g;
            }
            if skipped.contains(&i) {
                return vec![0.0; dim];
            }
            let u = &units[i];
            let radial = dot(u, &g);
            let mut out = g;
            axpy(&mut out, -radial, u);
            out.iter_mut().for_each(|x| *x /= norms[i]);
            out
        })
        .collect();

    Ok(ContrastiveOutput {
        loss,
        grads,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_features_one_key() {
        let f = vec![vec![0.3, -0.2, 0.9]; 3];
        let out = supervised_contrastive(&f, &[5, 5, 5], 0.1, true).unwrap();
        assert!((out.loss - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn no_positives_is_zero() {
        let f = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let out = supervised_contrastive(&f, &[0, 1], 0.1, true).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_norm_feature_is_skipped() {
        let f = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.1]];
        let out = supervised_contrastive(&f, &[0, 0, 0], 0.5, true).unwrap();
        assert_eq!(out.skipped, vec![1]);
        assert!(out.loss.is_finite());
    }

    #[test]
    fn bad_temperature() {
        let f = vec![vec![1.0], vec![1.0]];
        assert!(matches!(
            supervised_contrastive(&f, &[0, 0], 0.0, true),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let f = vec![
            vec![0.5, -0.1, 0.3],
            vec![0.2, 0.4, -0.6],
            vec![-0.3, 0.8, 0.1],
            vec![0.9, 0.05, -0.2],
            vec![-0.4, -0.4, 0.7],
        ];
        let keys = [0, 1, 0, 1, 0];
        for normalize in [true, false] {
            let out = supervised_contrastive(&f, &keys, 0.3, normalize).unwrap();
            for i in 0..f.len() {
                for k in 0..3 {
                    let h = 1e-6;
                    let mut fp = f.clone();
                    fp[i][k] += h;
                    let mut fm = f.clone();
                    fm[i][k] -= h;
                    let lp = supervised_contrastive(&fp, &keys, 0.3, normalize)
                        .unwrap()
                        .loss;
                    let lm = supervised_contrastive(&fm, &keys, 0.3, normalize)
                        .unwrap()
                        .loss;
                    let fd = (lp - lm) / (2.0 * h);
                    assert!(
                        (fd - out.grads[i][k]).abs() < 1e-6,
                        "i={i} k={k} fd={fd} an={}",
                        out.grads[i][k]
                    );
                }
            }
        }
    }
}
