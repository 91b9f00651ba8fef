//! Declarative run configuration: one TOML file describes the fleet, the
//! training schedule, and both experiments; flags select only the subcommand,
//! paths, and an optional seed override.
//!
//! All randomness flows from the single top-level `seed`: per-vehicle and
//! per-stage streams are derived from it, so a config file fully determines
//! every output byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use fedcf::cf_sim::ControllerConfig;
use fedcf::error::{Error, Result};
use fedcf::eval::{Experiment1Config, Experiment2Config, ProfileSpec, ScenarioSpec};
use fedcf::federation::FederationConfig;
use fedcf::gp::HyperParams;
use fedcf::personalize::PersonalizationConfig;
use fedcf::trainer::TrainingConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; every derived stream (per vehicle, per round, per stage)
    /// comes from this value.
    pub seed: u64,
    /// Default output directory, overridable with --out.
    pub output_dir: PathBuf,
    pub federation: FederationSection,
    pub training: TrainingSection,
    pub personalization: PersonalizationSection,
    #[serde(default)]
    pub controllers: BTreeMap<String, ControllerConfig>,
    #[serde(default)]
    pub experiment1: Option<Experiment1Section>,
    #[serde(default)]
    pub experiment2: Option<Experiment2Section>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    pub rounds: usize,
    pub initial: InitialParams,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialParams {
    pub sigma0: f64,
    pub length_scale: f64,
    pub sigma_eps: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub local_updates: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonalizationSection {
    pub omega: f64,
    /// Fine-tuning steps; defaults to a quarter of the federated update
    /// budget (rounds x local_updates / 4).
    #[serde(default)]
    pub steps: Option<usize>,
    /// Optional schedule override; falls back to [training].
    #[serde(default)]
    pub training: Option<TrainingSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment1Section {
    pub dt: f64,
    /// Controller name from [controllers].
    pub controller: String,
    pub local_steps: usize,
    pub scenarios: Vec<ScenarioSpec>,
    pub test_profile: ProfileSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment2Section {
    pub dt: f64,
    pub leader: ProfileSpec,
    /// Controller names from [controllers].
    pub aggressive: String,
    pub passive: String,
    pub pooled_steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub dt: f64,
    pub controller: String,
    pub leader: ProfileSpec,
}

impl TrainingSection {
    fn to_config(self, seed: u64) -> TrainingConfig {
        TrainingConfig {
            local_updates: self.local_updates,
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            batch_size: self.batch_size,
            seed,
        }
    }
}

impl RunConfig {
    /// Reads and parses the file; embedded invariants are validated when the
    /// specific sub-configs are built.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| {
            Error::InvalidArgument(format!("cannot parse config {}: {e}", path.display()))
        })
    }

    pub fn initial_params(&self) -> Result<HyperParams> {
        let i = self.federation.initial;
        HyperParams::new(i.sigma0, i.length_scale, i.sigma_eps)
    }

    pub fn training_config(&self) -> TrainingConfig {
        self.training.to_config(self.seed)
    }

    pub fn federation_config(&self) -> Result<FederationConfig> {
        let cfg = FederationConfig {
            rounds: self.federation.rounds,
            training: self.training_config(),
            initial_params: self.initial_params()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn personalization_config(&self) -> Result<PersonalizationConfig> {
        let schedule = self.personalization.training.unwrap_or(self.training);
        let steps = match self.personalization.steps {
            Some(s) => s,
            None => PersonalizationConfig::default_steps(&self.federation_config()?),
        };
        let cfg = PersonalizationConfig {
            omega: self.personalization.omega,
            steps,
            training: schedule.to_config(self.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn controller(&self, name: &str) -> Result<ControllerConfig> {
        let cfg = self.controllers.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.controllers.keys().map(|k| k.as_str()).collect();
            Error::InvalidArgument(format!(
                "unknown controller {name:?}; configured controllers: {}",
                known.join(", ")
            ))
        })?;
        cfg.validate()?;
        Ok(*cfg)
    }

    pub fn experiment1_config(&self) -> Result<Experiment1Config> {
        let section = self
            .experiment1
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("config has no [experiment1] section".into()))?;
        if section.scenarios.len() != 3 {
            let present: Vec<&str> = section.scenarios.iter().map(|s| s.id.as_str()).collect();
            return Err(Error::InvalidArgument(format!(
                "experiment 1 requires 3 scenarios, found {} ({}); scenario {} is missing",
                section.scenarios.len(),
                present.join(", "),
                section.scenarios.len() + 1
            )));
        }
        for s in &section.scenarios {
            if let Some(path) = &s.csv {
                if !path.exists() {
                    return Err(Error::InvalidArgument(format!(
                        "scenario {}: csv file {} does not exist",
                        s.id,
                        path.display()
                    )));
                }
            }
        }
        Ok(Experiment1Config {
            dt: section.dt,
            controller: self.controller(&section.controller)?,
            local_steps: section.local_steps,
            scenarios: section.scenarios.clone(),
            test_profile: section.test_profile.clone(),
        })
    }

    pub fn experiment2_config(&self) -> Result<Experiment2Config> {
        let section = self
            .experiment2
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("config has no [experiment2] section".into()))?;
        Ok(Experiment2Config {
            dt: section.dt,
            leader: section.leader.clone(),
            aggressive: self.controller(&section.aggressive)?,
            passive: self.controller(&section.passive)?,
            pooled_steps: section.pooled_steps,
        })
    }

    /// Resolved [simulate] section: (controller name, controller, dt, leader
    /// profile). `override_name` replaces the configured controller.
    pub fn simulate_config(
        &self,
        override_name: Option<&str>,
    ) -> Result<(String, ControllerConfig, f64, ProfileSpec)> {
        let section = self
            .simulate
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("config has no [simulate] section".into()))?;
        let name = override_name.unwrap_or(&section.controller).to_string();
        let ctrl = self.controller(&name)?;
        Ok((name, ctrl, section.dt, section.leader.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
output_dir = "out"

[federation]
rounds = 4

[federation.initial]
sigma0 = 50.0
length_scale = 30.0
sigma_eps = 1.0

[training]
local_updates = 5
learning_rate = 0.08
lr_decay = 0.998
batch_size = 8

[personalization]
omega = 1.0

[controllers.aggressive]
gains = [0.01, 10.0, -0.01]
time_gap = 0.5
standstill = 5.0
"#;

    fn parse(text: &str) -> RunConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn minimal_config_parses() {
        let cfg = parse(MINIMAL);
        assert_eq!(cfg.seed, 7);
        let fed = cfg.federation_config().unwrap();
        assert_eq!(fed.rounds, 4);
        assert_eq!(fed.training.seed, 7);
        assert!((fed.initial_params.sigma0() - 50.0).abs() < 1e-15);
    }

    #[test]
    fn personalization_steps_default_to_quarter_budget() {
        let cfg = parse(MINIMAL);
        let pers = cfg.personalization_config().unwrap();
        assert_eq!(pers.steps, 4 * 5 / 4);
    }

    #[test]
    fn unknown_controller_is_named() {
        let cfg = parse(MINIMAL);
        let err = cfg.controller("sporty").unwrap_err();
        assert!(err.to_string().contains("sporty"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("turbo = true\n{MINIMAL}");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn missing_experiment_sections_are_reported() {
        let cfg = parse(MINIMAL);
        assert!(cfg
            .experiment1_config()
            .unwrap_err()
            .to_string()
            .contains("[experiment1]"));
        assert!(cfg
            .experiment2_config()
            .unwrap_err()
            .to_string()
            .contains("[experiment2]"));
        assert!(cfg
            .simulate_config(None)
            .unwrap_err()
            .to_string()
            .contains("[simulate]"));
    }
}
