//! Group-wise scaled risk minimization and orthogonal feature decomposition
//! for domain-generalized liveness detection, on embedding vectors.
//!
//! The crate covers the numerical core (vector algebra, Gram-Schmidt, PCA),
//! the training losses with hand-derived gradients, a small trainable model,
//! biometric and calibration metrics, and a synthetic multi-domain generator
//! whose ground truth makes the alignment claims checkable.

pub mod contrastive;
pub mod error;
pub mod fod;
pub mod groups;
pub mod gsrm;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
