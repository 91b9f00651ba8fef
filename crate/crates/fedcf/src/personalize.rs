//! Post-federation per-vehicle fine-tuning under a proximal penalty.
//!
//! The effective objective is the vehicle's scaled NLML plus
//! `omega * ||theta - anchor||^2` in log space, whose gradient adds
//! `2 * omega * (theta - anchor)` to the data gradient. The penalty is
//! ADDED: a subtracted proximal term would be unbounded below and would
//! push the solution away from the global parameters instead of keeping
//! it close, contradicting the personalization intent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::FederationConfig;
use crate::gp::{Dataset, HyperParams};
use crate::trainer::{sgd_local, TrainingConfig};

/// Personalization settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PersonalizationConfig {
    /// Proximal coefficient omega >= 0; larger keeps the result closer to
    /// the anchor.
    pub omega: f64,
    /// Update count; zero returns the anchor unchanged.
    pub steps: usize,
    /// Learning rate, decay, batch size and seed for the fine-tuning loop
    /// (`local_updates` is ignored; `steps` governs).
    pub training: TrainingConfig,
}

impl PersonalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "omega must be finite and >= 0, got {}",
                self.omega
            )));
        }
        if self.steps > 0 {
            TrainingConfig {
                local_updates: self.steps,
                ..self.training
            }
            .validate()?;
        }
        Ok(())
    }

    /// Default budget: a quarter of the federation's total S * U updates.
    pub fn default_steps(federation: &FederationConfig) -> usize {
        federation.rounds * federation.training.local_updates / 4
    }
}

/// Fine-tunes from `anchor` on the vehicle's own data against the proximal
/// objective; `steps = 0` is the anchor itself.
pub fn personalize(
    anchor: &HyperParams,
    data: &Dataset,
    cfg: &PersonalizationConfig,
) -> Result<HyperParams> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok(*anchor);
    }
    let tcfg = TrainingConfig {
        local_updates: cfg.steps,
        ..cfg.training
    };
    sgd_local(anchor, data, &tcfg, Some((cfg.omega, anchor)))
}
