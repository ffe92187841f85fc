//! Orthogonal decomposition of embeddings against the span of the class text
//! anchors, and the domain-supervised contrastive loss on the residual.
//!
//! The anchors are orthonormalized in class-index order (live, then spoof).
//! The projection onto their span is the invariant part `f_I`; the residual
//! `f_S = w - f_I` is the domain-specific part. Any linear score built from
//! vectors inside the span ignores `f_S` entirely.

use serde::{Deserialize, Serialize};

use crate::contrastive::supervised_contrastive;
use crate::error::{Error, Result};
use crate::groups::DomainId;
use crate::linalg::{gram_schmidt, l2_normalize, sub, OrthoBasis};

/// Minimum Gram-Schmidt residual for the anchors to count as independent.
pub const ANCHOR_INDEPENDENCE_TOL: f64 = 1e-8;

/// Default temperature for the decomposition loss.
pub const DEFAULT_TAU: f64 = 0.1;

/// Fixed per-class text anchors, unit-normalized, indexed by class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextAnchors {
    anchors: [Vec<f64>; 2],
}

impl TextAnchors {
    pub fn new(live: Vec<f64>, spoof: Vec<f64>) -> Result<Self> {
        Error::check_dim(live.len(), spoof.len())?;
        let anchors = [l2_normalize(&live)?, l2_normalize(&spoof)?];
        let basis = gram_schmidt(&anchors, ANCHOR_INDEPENDENCE_TOL)
            .map_err(|_| Error::Config("text anchors are degenerate".into()))?;
        if basis.len() != 2 {
            return Err(Error::Config("text anchors are linearly dependent".into()));
        }
        Ok(TextAnchors { anchors })
    }

    /// Rebuilds anchors that are already unit length, keeping their exact bits.
    pub(crate) fn from_unit(live: Vec<f64>, spoof: Vec<f64>) -> Result<Self> {
        Error::check_dim(live.len(), spoof.len())?;
        let anchors = TextAnchors {
            anchors: [live, spoof],
        };
        invariant_basis(&anchors)?;
        Ok(anchors)
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].len()
    }

    pub fn get(&self, class: usize) -> &[f64] {
        &self.anchors[class]
    }

    pub fn as_array(&self) -> &[Vec<f64>; 2] {
        &self.anchors
    }
}

/// Orthonormal basis of the anchor span.
pub fn invariant_basis(anchors: &TextAnchors) -> Result<OrthoBasis> {
    let basis = gram_schmidt(anchors.as_array(), ANCHOR_INDEPENDENCE_TOL)
        .map_err(|_| Error::Config("text anchors are degenerate".into()))?;
    if basis.len() != 2 {
        return Err(Error::Config("text anchors are linearly dependent".into()));
    }
    Ok(basis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub invariant: Vec<f64>,
    pub specific: Vec<f64>,
}

pub fn decompose(w: &[f64], basis: &OrthoBasis) -> Result<Decomposition> {
    let invariant = basis.project(w)?;
    let specific = sub(w, &invariant);
    Ok(Decomposition {
        invariant,
        specific,
    })
}

/// Domain-supervised contrastive loss on specific features, summed over anchors.
///
/// Specific features are L2-normalized before the dot products unless
/// `normalize` is false. Samples sharing a domain are positives.
pub fn fod_loss_with(specifics: &[(Vec<f64>, DomainId)], tau: f64, normalize: bool) -> Result<f64> {
    let (features, keys): (Vec<Vec<f64>>, Vec<u64>) = specifics
        .iter()
        .map(|(f, d)| (f.clone(), d.0 as u64))
        .unzip();
    if features.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: features.len(),
        });
    }
    Ok(supervised_contrastive(&features, &keys, tau, normalize)?.loss)
}

pub fn fod_loss(specifics: &[(Vec<f64>, DomainId)], tau: f64) -> Result<f64> {
    fod_loss_with(specifics, tau, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn basis_examples() {
        let a = TextAnchors::new(vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]).unwrap();
        let b = invariant_basis(&a).unwrap();
        assert_eq!(b.vectors(), &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = TextAnchors::new(vec![1.0, 0.0], vec![s, s]).unwrap();
        let b = invariant_basis(&a).unwrap();
        assert!(close(&b.vectors()[0], &[1.0, 0.0], 1e-15));
        assert!(close(&b.vectors()[1], &[0.0, 1.0], 1e-15));

        let err = TextAnchors::new(vec![2.0, 0.0, 0.0], vec![2.0, 2e-12, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn anchors_are_normalized() {
        let a = TextAnchors::new(vec![3.0, 4.0], vec![0.0, -2.0]).unwrap();
        assert!(close(a.get(0), &[0.6, 0.8], 1e-15));
        assert_eq!(a.get(1), &[0.0, -1.0]);
    }

    #[test]
    fn decompose_examples() {
        let b = OrthoBasis::from_orthonormal(vec![vec![1.0, 0.0, 0.0]]).unwrap();
        let d = decompose(&[3.0, 4.0, 0.0], &b).unwrap();
        assert_eq!(d.invariant, vec![3.0, 0.0, 0.0]);
        assert_eq!(d.specific, vec![0.0, 4.0, 0.0]);

        let b2 =
            OrthoBasis::from_orthonormal(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let d = decompose(&[0.5, -2.0, 0.0], &b2).unwrap();
        assert_eq!(d.specific, vec![0.0, 0.0, 0.0]);

        let d = decompose(&[1.0, 2.0, 3.0], &b2).unwrap();
        assert_eq!(d.invariant, vec![1.0, 2.0, 0.0]);
        assert_eq!(d.specific, vec![0.0, 0.0, 3.0]);

        assert!(matches!(
            decompose(&[1.0, 2.0], &b2),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn fod_three_identical_same_domain() {
        let s = vec![(vec![0.2, 0.7, -0.1], DomainId(0)); 3];
        let l = fod_loss(&s, 0.1).unwrap();
        assert!((l - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 2.079442).abs() < 1e-6);
    }

    #[test]
    fn fod_two_domains_no_positives() {
        let s = vec![(vec![1.0, 0.0], DomainId(0)), (vec![0.0, 1.0], DomainId(1))];
        assert_eq!(fod_loss(&s, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn fod_rejects_bad_tau() {
        let s = vec![(vec![1.0], DomainId(0)); 2];
        assert!(matches!(fod_loss(&s, -1.0), Err(Error::Parameter(_))));
    }
}
