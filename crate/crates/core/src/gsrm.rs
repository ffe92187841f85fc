//! Group-wise scaling risk minimization.
//!
//! Each group's mean loss is standardized across groups and passed through a
//! shifted sigmoid, `σ(x) = β / (1 + e^{-x/α}) - β/2 + 1`, which boosts groups
//! that are harder than average and damps the easy ones. The aggregate is
//! `(1/|G|) Σ_g σ(L̄_g) L_g` over the groups present in the batch.
//!
//! The scale factors are returned as plain numbers and are treated as
//! constants by the gradient code in [`crate::model`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::GroupKey;

/// Below this population standard deviation all groups count as equally hard.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsParams {
    pub alpha: f64,
    pub beta: f64,
}

impl GsParams {
    pub const DEFAULT_BETA: f64 = 1.5;

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Parameter(format!(
                "gs alpha must be > 0, got {alpha}"
            )));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Parameter(format!(
                "gs beta must be >= 0, got {beta}"
            )));
        }
        Ok(GsParams { alpha, beta })
    }

    /// `alpha = ln(|G|) / 2`, `beta = 1.5`.
    pub fn for_group_count(groups: usize) -> Result<Self> {
        Self::new((groups as f64).ln() / 2.0, Self::DEFAULT_BETA)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLossTable {
    entries: BTreeMap<GroupKey, f64>,
    mean: f64,
    popstd: f64,
}

impl GroupLossTable {
    pub fn from_entries(entries: BTreeMap<GroupKey, f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if let Some((k, v)) = entries.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "group {k} has non-finite loss {v}"
            )));
        }
        let n = entries.len() as f64;
        let mean = entries.values().sum::<f64>() / n;
        // Two-pass form of E[L²] - E[L]².
        let var = entries
            .values()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        Ok(GroupLossTable {
            entries,
            mean,
            popstd: var.sqrt(),
        })
    }

    pub fn entries(&self) -> &BTreeMap<GroupKey, f64> {
        &self.entries
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn popstd(&self) -> f64 {
        self.popstd
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mean per-sample loss of every nonempty bucket. Empty buckets are left out.
pub fn group_loss(buckets: &BTreeMap<GroupKey, Vec<f64>>) -> Result<GroupLossTable> {
    let entries = buckets
        .iter()
        .filter(|(_, losses)| !losses.is_empty())
        .map(|(k, losses)| (*k, losses.iter().sum::<f64>() / losses.len() as f64))
        .collect();
    GroupLossTable::from_entries(entries)
}

/// Standardized group losses; all zeros when the spread is degenerate.
pub fn normalize(table: &GroupLossTable) -> BTreeMap<GroupKey, f64> {
    table
        .entries
        .iter()
        .map(|(k, v)| {
            let z = if table.popstd < DEGENERATE_STD {
                0.0
            } else {
                (v - table.mean) / table.popstd
            };
            (*k, z)
        })
        .collect()
}

pub fn gs_estimator(normalized: f64, params: &GsParams) -> f64 {
    let b = params.beta;
    b / (1.0 + (-normalized / params.alpha).exp()) - b / 2.0 + 1.0
}

/// Scaled aggregate and the per-group scale factors.
pub fn gsrm_aggregate(table: &GroupLossTable, params: &GsParams) -> (f64, BTreeMap<GroupKey, f64>) {
    let weights: BTreeMap<GroupKey, f64> = normalize(table)
        .into_iter()
        .map(|(k, z)| (k, gs_estimator(z, params)))
        .collect();
    let mut total = 0.0;
    for (k, loss) in &table.entries {
        total += weights[k] * loss;
    }
    (total / table.entries.len() as f64, weights)
}
