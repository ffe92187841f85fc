use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fod::DEFAULT_TAU;
use crate::gsrm::GsParams;
use crate::losses::{DEFAULT_LAMBDA_FOD, DEFAULT_LAMBDA_II, DEFAULT_LOGIT_SCALE};

/// Which training objective to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Objective {
    /// Mean image-text cross-entropy plus classifier cross-entropy.
    #[serde(rename = "erm")]
    Erm,
    /// `Erm` plus the per-domain IRM penalty on the image-text logits.
    #[serde(rename = "erm+irm")]
    ErmIrm,
    /// Group-scaled image-text loss, decomposition loss, paired-view loss and classifier loss.
    #[default]
    #[serde(rename = "gdfas")]
    Gdfas,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Erm, Objective::ErmIrm, Objective::Gdfas];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Erm => "erm",
            Objective::ErmIrm => "erm+irm",
            Objective::Gdfas => "gdfas",
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown objective '{s}', expected erm, erm+irm or gdfas"
                ))
            })
    }
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 gives plain SGD.
    pub momentum: f64,
    pub epochs: usize,
    /// Samples drawn from every (domain, label) group per iteration.
    pub quota: usize,
    pub seed: u64,
    pub lambda_fod: f64,
    pub lambda_ii: f64,
    pub lambda_irm: f64,
    pub tau_fod: f64,
    pub tau_ii: f64,
    /// Standard deviation of the Gaussian noise that makes the second view.
    pub sigma_aug: f64,
    /// Overrides `ln(|G|) / 2` when set.
    pub gs_alpha: Option<f64>,
    pub gs_beta: f64,
    /// Group scaling on the image-text loss; off gives the plain mean.
    pub gs_enabled: bool,
    /// Also apply group scaling to the classifier loss.
    pub gs_apply_to_class: bool,
    pub fod_enabled: bool,
    pub fod_normalize: bool,
    pub logit_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Gdfas,
            learning_rate: 3e-3,
            momentum: 0.0,
            epochs: 50,
            quota: 8,
            seed: 0,
            lambda_fod: DEFAULT_LAMBDA_FOD,
            lambda_ii: DEFAULT_LAMBDA_II,
            lambda_irm: 1.0,
            tau_fod: DEFAULT_TAU,
            tau_ii: 0.1,
            sigma_aug: 0.05,
            gs_alpha: None,
            gs_beta: GsParams::DEFAULT_BETA,
            gs_enabled: true,
            gs_apply_to_class: false,
            fod_enabled: true,
            fod_normalize: true,
            logit_scale: DEFAULT_LOGIT_SCALE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be > 0, got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be >= 0, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.quota == 0 {
            return Err(Error::Config("quota must be >= 1".into()));
        }
        nonneg("lambda_fod", self.lambda_fod)?;
        nonneg("lambda_ii", self.lambda_ii)?;
        nonneg("lambda_irm", self.lambda_irm)?;
        positive("tau_fod", self.tau_fod)?;
        positive("tau_ii", self.tau_ii)?;
        nonneg("sigma_aug", self.sigma_aug)?;
        if let Some(a) = self.gs_alpha {
            positive("gs_alpha", a)?;
        }
        nonneg("gs_beta", self.gs_beta)?;
        positive("logit_scale", self.logit_scale)?;
        Ok(())
    }

    /// Scaling parameters for a batch with `groups` present groups.
    pub fn gs_params(&self, groups: usize) -> Result<GsParams> {
        let alpha = match self.gs_alpha {
            Some(a) => a,
            // With one group the normalized loss is 0 and alpha has no effect.
            None if groups < 2 => 1.0,
            None => (groups as f64).ln() / 2.0,
        };
        GsParams::new(alpha, self.gs_beta)
    }

    pub(crate) fn uses_views(&self) -> bool {
        self.objective == Objective::Gdfas && self.lambda_ii > 0.0
    }

    pub(crate) fn uses_fod(&self) -> bool {
        self.objective == Objective::Gdfas && self.fod_enabled && self.lambda_fod > 0.0
    }

    pub(crate) fn uses_gs(&self) -> bool {
        self.objective == Objective::Gdfas && self.gs_enabled
    }

    pub(crate) fn uses_irm(&self) -> bool {
        self.objective == Objective::ErmIrm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_round_trip() {
        for o in Objective::ALL {
            assert_eq!(o.as_str().parse::<Objective>().unwrap(), o);
            let json = serde_json::to_string(&o).unwrap();
            assert_eq!(json, format!("\"{}\"", o.as_str()));
        }
        assert!("sgd".parse::<Objective>().is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_alpha_follows_group_count() {
        let c = TrainConfig::default();
        let p = c.gs_params(6).unwrap();
        assert!((p.alpha - 6f64.ln() / 2.0).abs() < 1e-15);
        assert_eq!(p.beta, 1.5);
    }
}
