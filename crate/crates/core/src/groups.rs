//! Label × domain group structure and batch partitioning.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainId(pub u32);

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Live = 0,
    Spoof = 1,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Live, ClassLabel::Spoof];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u64) -> Result<Self> {
        match i {
            0 => Ok(ClassLabel::Live),
            1 => Ok(ClassLabel::Spoof),
            other => Err(Error::Parameter(format!(
                "class label must be 0 or 1, got {other}"
            ))),
        }
    }

    /// +1 for live, -1 for spoof.
    pub fn signed(self) -> f64 {
        match self {
            ClassLabel::Live => 1.0,
            ClassLabel::Spoof => -1.0,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassLabel::Live => "live",
            ClassLabel::Spoof => "spoof",
        })
    }
}

/// One embedding with its class label and source domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: u64,
    pub domain: DomainId,
    pub label: ClassLabel,
    pub embedding: Vec<f64>,
}

/// Orders by domain first, then label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub domain: DomainId,
    pub label: ClassLabel,
}

impl GroupKey {
    pub fn of(sample: &Sample) -> Self {
        GroupKey {
            domain: sample.domain,
            label: sample.label,
        }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}/{}", self.domain, self.label)
    }
}

pub type GroupedBatch<'a> = BTreeMap<GroupKey, Vec<&'a Sample>>;

/// Buckets samples by `(domain, label)`, keeping input order within a bucket.
pub fn partition(batch: &[Sample]) -> GroupedBatch<'_> {
    let mut out: GroupedBatch<'_> = BTreeMap::new();
    for s in batch {
        out.entry(GroupKey::of(s)).or_default().push(s);
    }
    out
}

/// `|G| = 2 · domains`.
pub fn group_count(domains: usize) -> usize {
    2 * domains
}

/// Number of distinct domains present in `samples`.
pub fn distinct_domains(samples: &[Sample]) -> usize {
    let mut ids: Vec<DomainId> = samples.iter().map(|s| s.domain).collect();
    ids.sort();
    ids.dedup();
    ids.len()
}
