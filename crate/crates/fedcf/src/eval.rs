//! Metrics, the pooled-data baseline, and the two experiment drivers.
//!
//! Experiment 1: three vehicles with partial-maneuver training data
//! (constant / deceleration / acceleration windows) are trained locally,
//! then federated and personalized; both arms predict the full-oscillation
//! test profile and the report captures range-coverage before and after
//! sharing.
//!
//! Experiment 2: an aggressive and a passive follower respond to the same
//! leader; a single pooled model and per-vehicle personalized models are
//! compared by RMSE against each vehicle's true response.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cf_sim::{
    equilibrium_state, generate_oscillation, simulate_follower, ControllerConfig, SpeedProfile,
};
use crate::data::{load_trajectory_csv, to_dataset};
use crate::error::{Error, Result};
use crate::federation::{derive_round_seed, run_federation, FederationConfig, FederationHistory};
use crate::gp::{posterior_predict, Dataset, HyperParams};
use crate::personalize::{personalize, PersonalizationConfig};
use crate::trainer::{sgd_local, TrainingConfig};

/// Root mean squared error between two equal-length series, m/s.
pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::InvalidArgument(format!(
            "series length mismatch: {} vs {}",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    let ss: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Ratio of the prediction's speed range to the true response's speed range.
/// A model blind to the maneuver predicts a nearly flat series and scores
/// near zero.
pub fn oscillation_coverage(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() || truth.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    let range = |v: &[f64]| {
        v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
    };
    let tr = range(truth);
    if tr <= 0.0 {
        return Err(Error::InvalidArgument(
            "true response has zero speed range".into(),
        ));
    }
    Ok(range(pred) / tr)
}

/// One-size-fits-all baseline: concatenates the datasets in order and runs
/// sgd_local on the union from `start`.
pub fn train_pooled(
    start: &HyperParams,
    datasets: &[Dataset],
    cfg: &TrainingConfig,
) -> Result<HyperParams> {
    let union = pool_datasets(datasets)?;
    sgd_local(start, &union, cfg, None)
}

/// Concatenation of all datasets in order, under the id "pooled".
pub fn pool_datasets(datasets: &[Dataset]) -> Result<Dataset> {
    if datasets.is_empty() {
        return Err(Error::InvalidArgument("no datasets to pool".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for d in datasets {
        xs.extend_from_slice(d.inputs());
        ys.extend_from_slice(d.outputs());
    }
    Dataset::new(xs, ys, "pooled")
}

/// Declarative oscillation profile: base/dip speeds, the four phase
/// durations, and an optional half-open sample window applied after
/// generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub base_speed: f64,
    pub dip_speed: f64,
    pub durations: [f64; 4],
    #[serde(default)]
    pub slice: Option<[usize; 2]>,
}

impl ProfileSpec {
    pub fn generate(&self, dt: f64) -> Result<SpeedProfile> {
        let full = generate_oscillation(self.base_speed, self.dip_speed, self.durations, dt)?;
        match self.slice {
            Some([s, e]) => full.window(s, e),
            None => Ok(full),
        }
    }
}

/// A named training scenario: either a recorded trajectory CSV or a leader
/// profile to simulate against. Exactly one source must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub profile: Option<ProfileSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Experiment1Config {
    /// Sample period for generated profiles, s.
    pub dt: f64,
    /// Controller simulated for profile-backed scenarios and the test truth.
    pub controller: ControllerConfig,
    /// SGD steps for the no-sharing local arm.
    pub local_steps: usize,
    /// Exactly three training scenarios.
    pub scenarios: Vec<ScenarioSpec>,
    /// Full-oscillation evaluation profile.
    pub test_profile: ProfileSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Experiment2Config {
    pub dt: f64,
    /// Shared leader profile both vehicles respond to.
    pub leader: ProfileSpec,
    pub aggressive: ControllerConfig,
    pub passive: ControllerConfig,
    /// SGD steps for the pooled baseline.
    pub pooled_steps: usize,
}

/// Predicted speed series for one model stage on the test profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSeries {
    pub stage: String,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleReport {
    pub vehicle_id: String,
    pub predictions: Vec<PredictionSeries>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmseEntry {
    pub stage: String,
    pub vehicle_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub vehicle_id: String,
    pub before: f64,
    pub after: f64,
}

/// Parameter values at a named stage; `vehicle_id` is None for fleet-level
/// parameters (initial, federated global, pooled).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub stage: String,
    pub vehicle_id: Option<String>,
    pub params: HyperParams,
}

/// True simulated follower response on the test profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSeries {
    pub vehicle_id: String,
    pub speeds: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Full experiment output. Wall-clock timings are carried in memory for
/// stdout display but excluded from serialization so identical configs
/// produce byte-identical JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub test_leader: SpeedProfile,
    pub truth: Vec<TruthSeries>,
    pub vehicles: Vec<VehicleReport>,
    pub rmse: Vec<RmseEntry>,
    pub coverage: Vec<CoverageEntry>,
    pub params: Vec<ParamEntry>,
    pub history: Option<FederationHistory>,
    #[serde(skip)]
    pub timings: Vec<Timing>,
}

/// Writes a prediction series as trajectory CSV plus a `predicted_speed_mps`
/// column; series must be equal-length.
pub fn save_prediction_csv(
    path: &Path,
    dt: f64,
    leader: &[f64],
    follower: &[f64],
    predicted: &[f64],
) -> Result<()> {
    if leader.len() != follower.len() || leader.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "series length mismatch: {} / {} / {}",
            leader.len(),
            follower.len(),
            predicted.len()
        )));
    }
    let mut out = String::from("time_s,leader_speed_mps,follower_speed_mps,predicted_speed_mps\n");
    for i in 0..leader.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            i as f64 * dt,
            leader[i],
            follower[i],
            predicted[i]
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn resolve_scenario(
    spec: &ScenarioSpec,
    dt: f64,
    controller: &ControllerConfig,
) -> Result<Dataset> {
    match (&spec.csv, &spec.profile) {
        (Some(path), None) => {
            let traj = load_trajectory_csv(path)?;
            if (traj.dt() - dt).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "scenario {}: trajectory dt {} does not match configured dt {}",
                    spec.id,
                    traj.dt(),
                    dt
                )));
            }
            to_dataset(&traj, spec.id.clone())
        }
        (None, Some(profile)) => {
            let leader = profile.generate(dt)?;
            let sim = simulate_follower(
                &leader,
                controller,
                equilibrium_state(leader.speeds[0], controller),
            )?;
            Dataset::new(leader.speeds, sim.follower.speeds, spec.id.clone())
        }
        _ => Err(Error::InvalidArgument(format!(
            "scenario {} must set exactly one of csv or profile",
            spec.id
        ))),
    }
}

/// Materializes the experiment-1 training fleet: one dataset per scenario,
/// simulated with `controller` when profile-backed.
pub fn resolve_scenarios(cfg: &Experiment1Config) -> Result<Vec<Dataset>> {
    cfg.controller.validate()?;
    cfg.scenarios
        .iter()
        .map(|s| resolve_scenario(s, cfg.dt, &cfg.controller))
        .collect()
}

fn predict_series(
    stage: &str,
    params: &HyperParams,
    data: &Dataset,
    test_inputs: &[f64],
) -> Result<PredictionSeries> {
    let pred = posterior_predict(params, data, test_inputs)?;
    Ok(PredictionSeries {
        stage: stage.to_string(),
        mean: pred.mean,
        variance: pred.variance,
    })
}

fn push_timing(timings: &mut Vec<Timing>, stage: &str, start: Instant) {
    timings.push(Timing {
        stage: stage.to_string(),
        seconds: start.elapsed().as_secs_f64(),
    });
}

/// Partial-data fleet: local-only vs federated + personalized prediction of
/// the full oscillation. Requires exactly three scenarios.
pub fn run_experiment1(
    cfg: &Experiment1Config,
    fed: &FederationConfig,
    pers: &PersonalizationConfig,
) -> Result<ExperimentReport> {
    fed.validate()?;
    pers.validate()?;
    cfg.controller.validate()?;
    if cfg.scenarios.len() != 3 {
        let present: Vec<&str> = cfg.scenarios.iter().map(|s| s.id.as_str()).collect();
        return Err(Error::InvalidArgument(format!(
            "experiment 1 requires 3 scenarios, found {} ({}); scenario {} is missing",
            cfg.scenarios.len(),
            present.join(", "),
            cfg.scenarios.len() + 1
        )));
    }
    if cfg.local_steps == 0 {
        return Err(Error::InvalidParameter("local_steps must be >= 1".into()));
    }
    let base_seed = fed.training.seed;
    let mut timings = Vec::new();

    let t0 = Instant::now();
    let datasets = resolve_scenarios(cfg)?;
    let test_leader = cfg.test_profile.generate(cfg.dt)?;
    let truth_sim = simulate_follower(
        &test_leader,
        &cfg.controller,
        equilibrium_state(test_leader.speeds[0], &cfg.controller),
    )?;
    let truth = truth_sim.follower.speeds;
    push_timing(&mut timings, "setup", t0);

    let mut params = vec![ParamEntry {
        stage: "initial".into(),
        vehicle_id: None,
        params: fed.initial_params,
    }];
    let mut vehicles: Vec<VehicleReport> = datasets
        .iter()
        .map(|d| VehicleReport {
            vehicle_id: d.vehicle_id().to_string(),
            predictions: Vec::new(),
        })
        .collect();
    let mut rmse_table = Vec::new();
    let mut coverage = Vec::new();

    // No-sharing arm: fixed-step local training from the shared start.
    let t0 = Instant::now();
    let mut before_cov = Vec::new();
    for (d, report) in datasets.iter().zip(&mut vehicles) {
        let tcfg = TrainingConfig {
            local_updates: cfg.local_steps,
            seed: derive_round_seed(base_seed, &format!("{}-local", d.vehicle_id()), 0),
            ..fed.training
        };
        let local = sgd_local(&fed.initial_params, d, &tcfg, None)?;
        params.push(ParamEntry {
            stage: "local".into(),
            vehicle_id: Some(d.vehicle_id().to_string()),
            params: local,
        });
        let series = predict_series("local", &local, d, &test_leader.speeds)?;
        before_cov.push(oscillation_coverage(&series.mean, &truth)?);
        rmse_table.push(RmseEntry {
            stage: "local".into(),
            vehicle_id: d.vehicle_id().to_string(),
            value: rmse(&series.mean, &truth)?,
        });
        report.predictions.push(series);
    }
    push_timing(&mut timings, "local-arm", t0);

    let t0 = Instant::now();
    let (global, history) = run_federation(&datasets, fed)?;
    params.push(ParamEntry {
        stage: "federated".into(),
        vehicle_id: None,
        params: global,
    });
    push_timing(&mut timings, "federation", t0);

    let t0 = Instant::now();
    for ((d, report), before) in datasets.iter().zip(&mut vehicles).zip(before_cov) {
        let pcfg = PersonalizationConfig {
            training: TrainingConfig {
                seed: derive_round_seed(base_seed, &format!("{}-pers", d.vehicle_id()), 0),
                ..pers.training
            },
            ..*pers
        };
        let personal = personalize(&global, d, &pcfg)?;
        params.push(ParamEntry {
            stage: "personalized".into(),
            vehicle_id: Some(d.vehicle_id().to_string()),
            params: personal,
        });
        let series = predict_series("personalized", &personal, d, &test_leader.speeds)?;
        let after = oscillation_coverage(&series.mean, &truth)?;
        coverage.push(CoverageEntry {
            vehicle_id: d.vehicle_id().to_string(),
            before,
            after,
        });
        rmse_table.push(RmseEntry {
            stage: "personalized".into(),
            vehicle_id: d.vehicle_id().to_string(),
            value: rmse(&series.mean, &truth)?,
        });
        report.predictions.push(series);
    }
    push_timing(&mut timings, "personalization", t0);

    for r in &rmse_table {
        debug_assert!(r.value.is_finite() && r.value >= 0.0);
    }
    let truth_rows = datasets
        .iter()
        .map(|d| TruthSeries {
            vehicle_id: d.vehicle_id().to_string(),
            speeds: truth.clone(),
        })
        .collect();
    Ok(ExperimentReport {
        experiment: "experiment1".into(),
        seed: base_seed,
        config: serde_json::json!({
            "experiment1": cfg,
            "federation": fed,
            "personalization": pers,
        }),
        test_leader,
        truth: truth_rows,
        vehicles,
        rmse: rmse_table,
        coverage,
        params,
        history: Some(history),
        timings,
    })
}

/// Heterogeneous pair: pooled baseline vs federation + personalization,
/// scored by RMSE against each vehicle's true response on the leader
/// oscillation.
pub fn run_experiment2(
    cfg: &Experiment2Config,
    fed: &FederationConfig,
    pers: &PersonalizationConfig,
) -> Result<ExperimentReport> {
    fed.validate()?;
    pers.validate()?;
    cfg.aggressive.validate()?;
    cfg.passive.validate()?;
    if cfg.pooled_steps == 0 {
        return Err(Error::InvalidParameter("pooled_steps must be >= 1".into()));
    }
    let base_seed = fed.training.seed;
    let mut timings = Vec::new();

    let t0 = Instant::now();
    let leader = cfg.leader.generate(cfg.dt)?;
    let mut datasets = Vec::new();
    for (vid, ctrl) in [("aggressive", &cfg.aggressive), ("passive", &cfg.passive)] {
        let sim = simulate_follower(&leader, ctrl, equilibrium_state(leader.speeds[0], ctrl))?;
        datasets.push(Dataset::new(
            leader.speeds.clone(),
            sim.follower.speeds,
            vid,
        )?);
    }
    push_timing(&mut timings, "simulation", t0);

    let mut params = vec![ParamEntry {
        stage: "initial".into(),
        vehicle_id: None,
        params: fed.initial_params,
    }];
    let mut vehicles: Vec<VehicleReport> = datasets
        .iter()
        .map(|d| VehicleReport {
            vehicle_id: d.vehicle_id().to_string(),
            predictions: Vec::new(),
        })
        .collect();
    let mut rmse_table = Vec::new();

    // Pooled baseline: one model on the concatenated data, evaluated against
    // both vehicles conditioned on the union.
    let t0 = Instant::now();
    let pooled_cfg = TrainingConfig {
        local_updates: cfg.pooled_steps,
        seed: derive_round_seed(base_seed, "pooled", 0),
        ..fed.training
    };
    let pooled = train_pooled(&fed.initial_params, &datasets, &pooled_cfg)?;
    params.push(ParamEntry {
        stage: "pooled".into(),
        vehicle_id: None,
        params: pooled,
    });
    let union = pool_datasets(&datasets)?;
    let pooled_series = predict_series("pooled", &pooled, &union, &leader.speeds)?;
    push_timing(&mut timings, "pooled", t0);

    let t0 = Instant::now();
    let (global, history) = run_federation(&datasets, fed)?;
    params.push(ParamEntry {
        stage: "federated".into(),
        vehicle_id: None,
        params: global,
    });
    push_timing(&mut timings, "federation", t0);

    let t0 = Instant::now();
    let mut personal_params = Vec::new();
    for (d, report) in datasets.iter().zip(&mut vehicles) {
        let pcfg = PersonalizationConfig {
            training: TrainingConfig {
                seed: derive_round_seed(base_seed, &format!("{}-pers", d.vehicle_id()), 0),
                ..pers.training
            },
            ..*pers
        };
        let personal = personalize(&global, d, &pcfg)?;
        personal_params.push(personal);
        params.push(ParamEntry {
            stage: "personalized".into(),
            vehicle_id: Some(d.vehicle_id().to_string()),
            params: personal,
        });
        let series = predict_series("personalized", &personal, d, &leader.speeds)?;
        rmse_table.push(RmseEntry {
            stage: "personalized".into(),
            vehicle_id: d.vehicle_id().to_string(),
            value: rmse(&series.mean, d.outputs())?,
        });
        rmse_table.push(RmseEntry {
            stage: "pooled".into(),
            vehicle_id: d.vehicle_id().to_string(),
            value: rmse(&pooled_series.mean, d.outputs())?,
        });
        report.predictions.push(pooled_series.clone());
        report.predictions.push(series);
    }
    push_timing(&mut timings, "personalization", t0);
    assert!(
        personal_params[0] != personal_params[1],
        "personalization collapsed to identical parameters for distinct vehicles"
    );

    let truth_rows = datasets
        .iter()
        .map(|d| TruthSeries {
            vehicle_id: d.vehicle_id().to_string(),
            speeds: d.outputs().to_vec(),
        })
        .collect();
    Ok(ExperimentReport {
        experiment: "experiment2".into(),
        seed: base_seed,
        config: serde_json::json!({
            "experiment2": cfg,
            "federation": fed,
            "personalization": pers,
        }),
        test_leader: leader,
        truth: truth_rows,
        vehicles,
        rmse: rmse_table,
        coverage: Vec::new(),
        params,
        history: Some(history),
        timings,
    })
}
