//! Subcommand implementations and their exit-code discipline.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 pipeline or
//! numerical error (message names the failing stage), 1 internal error.
//! Classification is by phase: everything up to and including config
//! resolution maps to 2; the run itself maps to 3.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedcf::data::{save_trajectory_csv, Trajectory};
use fedcf::error::Result;
use fedcf::eval::{
    resolve_scenarios, run_experiment1, run_experiment2, save_prediction_csv, ExperimentReport,
};
use fedcf::federation::{derive_round_seed, run_federation, FederationHistory};
use fedcf::gp::{Dataset, HyperParams};
use fedcf::personalize::personalize;
use fedcf::trainer::{sgd_local, TrainingConfig};

use crate::config::RunConfig;

/// A command failure carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub type CmdResult = std::result::Result<(), CliError>;

fn config_phase<T>(r: Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(|e| CliError {
        code: 2,
        message: e.to_string(),
    })
}

fn run_phase<T>(stage: &str, r: Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(|e| CliError {
        code: 3,
        message: format!("stage {stage}: {e}"),
    })
}

fn io_phase<T>(stage: &str, r: std::io::Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(|e| CliError {
        code: 3,
        message: format!("stage {stage}: {e}"),
    })
}

fn internal<T>(r: serde_json::Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(|e| CliError {
        code: 1,
        message: format!("internal serialization error: {e}"),
    })
}

fn load_config(path: &Path, seed: Option<u64>) -> std::result::Result<RunConfig, CliError> {
    let mut cfg = config_phase(RunConfig::load(path))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn ensure_out_dir(cfg: &RunConfig, out: Option<PathBuf>) -> std::result::Result<PathBuf, CliError> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    io_phase("output", fs::create_dir_all(&dir))?;
    Ok(dir)
}

pub fn cmd_simulate(
    config: &Path,
    controller: Option<&str>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> CmdResult {
    let cfg = load_config(config, seed)?;
    let (name, ctrl, dt, profile) = config_phase(cfg.simulate_config(controller))?;
    let leader = config_phase(profile.generate(dt))?;

    let init = fedcf::cf_sim::equilibrium_state(leader.speeds[0], &ctrl);
    let sim = run_phase(
        "simulate",
        fedcf::cf_sim::simulate_follower(&leader, &ctrl, init),
    )?;

    let dir = ensure_out_dir(&cfg, out)?;
    let path = dir.join(format!("sim_{name}.csv"));
    let traj = run_phase(
        "simulate",
        Trajectory::new(dt, leader.speeds, sim.follower.speeds, name.as_str()),
    )?;
    run_phase("output", save_trajectory_csv(&traj, &path))?;

    println!("wrote {}", path.display());
    println!("collision events: {}", sim.collisions.len());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainMode {
    Local,
    Federated,
    Pooled,
    Personalize,
}

/// Per-vehicle named parameters, the JSON row format of `train` outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct VehicleParams {
    pub vehicle_id: String,
    pub params: HyperParams,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FederatedOutput {
    pub global: HyperParams,
    pub history: FederationHistory,
}

fn fleet(cfg: &RunConfig) -> std::result::Result<Vec<Dataset>, CliError> {
    let exp1 = config_phase(cfg.experiment1_config())?;
    run_phase("scenario-setup", resolve_scenarios(&exp1))
}

fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    value: &T,
) -> std::result::Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut text = internal(serde_json::to_string_pretty(value))?;
    text.push('\n');
    io_phase("output", fs::write(&path, text))?;
    Ok(path)
}

pub fn cmd_train(
    config: &Path,
    mode: TrainMode,
    anchor: Option<&Path>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> CmdResult {
    let cfg = load_config(config, seed)?;
    let fed = config_phase(cfg.federation_config())?;
    let datasets = fleet(&cfg)?;
    let dir = ensure_out_dir(&cfg, out)?;

    let path = match mode {
        TrainMode::Local => {
            let exp1 = config_phase(cfg.experiment1_config())?;
            let mut rows = Vec::new();
            for d in &datasets {
                let tcfg = TrainingConfig {
                    local_updates: exp1.local_steps,
                    seed: derive_round_seed(cfg.seed, &format!("{}-local", d.vehicle_id()), 0),
                    ..fed.training
                };
                let params = run_phase(
                    "train-local",
                    sgd_local(&fed.initial_params, d, &tcfg, None),
                )?;
                rows.push(VehicleParams {
                    vehicle_id: d.vehicle_id().to_string(),
                    params,
                });
            }
            write_json(&dir, "params_local.json", &rows)?
        }
        TrainMode::Federated => {
            let (global, history) = run_phase("train-federated", run_federation(&datasets, &fed))?;
            write_json(
                &dir,
                "params_federated.json",
                &FederatedOutput { global, history },
            )?
        }
        TrainMode::Pooled => {
            // Same total update budget as the federated run.
            let tcfg = TrainingConfig {
                local_updates: fed.rounds * fed.training.local_updates,
                seed: derive_round_seed(cfg.seed, "pooled", 0),
                ..fed.training
            };
            let params = run_phase(
                "train-pooled",
                fedcf::eval::train_pooled(&fed.initial_params, &datasets, &tcfg),
            )?;
            write_json(&dir, "params_pooled.json", &params)?
        }
        TrainMode::Personalize => {
            let anchor_path = anchor.ok_or_else(|| CliError {
                code: 2,
                message: "personalize mode requires --anchor <params.json>".into(),
            })?;
            let text = fs::read_to_string(anchor_path).map_err(|e| CliError {
                code: 2,
                message: format!("cannot read anchor {}: {e}", anchor_path.display()),
            })?;
            let anchor_params: HyperParams = serde_json::from_str(&text).map_err(|e| CliError {
                code: 2,
                message: format!("cannot parse anchor {}: {e}", anchor_path.display()),
            })?;
            let base = config_phase(cfg.personalization_config())?;
            let mut rows = Vec::new();
            for d in &datasets {
                let pcfg = fedcf::personalize::PersonalizationConfig {
                    training: TrainingConfig {
                        seed: derive_round_seed(cfg.seed, &format!("{}-pers", d.vehicle_id()), 0),
                        ..base.training
                    },
                    ..base
                };
                let params = run_phase("personalize", personalize(&anchor_params, d, &pcfg))?;
                rows.push(VehicleParams {
                    vehicle_id: d.vehicle_id().to_string(),
                    params,
                });
            }
            write_json(&dir, "params_personalize.json", &rows)?
        }
    };
    println!("wrote {}", path.display());
    Ok(())
}

fn print_rmse_table(report: &ExperimentReport) {
    let mut stages: Vec<&str> = Vec::new();
    let mut vehicles: Vec<&str> = Vec::new();
    for r in &report.rmse {
        if !stages.contains(&r.stage.as_str()) {
            stages.push(&r.stage);
        }
        if !vehicles.contains(&r.vehicle_id.as_str()) {
            vehicles.push(&r.vehicle_id);
        }
    }
    println!("RMSE (m/s) against each vehicle's true response:");
    print!("{:<14}", "model");
    for v in &vehicles {
        print!("{v:>14}");
    }
    println!();
    for s in &stages {
        print!("{s:<14}");
        for v in &vehicles {
            let cell = report
                .rmse
                .iter()
                .find(|r| r.stage == *s && r.vehicle_id == *v)
                .map(|r| format!("{:.3}", r.value))
                .unwrap_or_else(|| "-".into());
            print!("{cell:>14}");
        }
        println!();
    }
}

fn print_coverage_table(report: &ExperimentReport) {
    if report.coverage.is_empty() {
        return;
    }
    println!("Oscillation coverage (predicted range / true range):");
    println!("{:<14}{:>10}{:>10}", "vehicle", "before", "after");
    for c in &report.coverage {
        println!("{:<14}{:>10.3}{:>10.3}", c.vehicle_id, c.before, c.after);
    }
}

fn print_timings(report: &ExperimentReport) {
    for t in &report.timings {
        println!("timing {}: {:.2} s", t.stage, t.seconds);
    }
}

pub fn cmd_experiment(
    config: &Path,
    which: u8,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> CmdResult {
    let cfg = load_config(config, seed)?;
    let fed = config_phase(cfg.federation_config())?;
    let pers = config_phase(cfg.personalization_config())?;

    let report = match which {
        1 => {
            let exp1 = config_phase(cfg.experiment1_config())?;
            run_phase("experiment1", run_experiment1(&exp1, &fed, &pers))?
        }
        2 => {
            let exp2 = config_phase(cfg.experiment2_config())?;
            run_phase("experiment2", run_experiment2(&exp2, &fed, &pers))?
        }
        other => {
            return Err(CliError {
                code: 2,
                message: format!("--which must be 1 or 2, got {other}"),
            })
        }
    };

    let dir = ensure_out_dir(&cfg, out)?;
    let report_path = write_json(&dir, &format!("report_experiment{which}.json"), &report)?;

    // One CSV per (vehicle, stage) prediction, alongside the true response.
    for (v, t) in report.vehicles.iter().zip(&report.truth) {
        for p in &v.predictions {
            let csv_path = dir.join(format!(
                "pred_experiment{which}_{}_{}.csv",
                v.vehicle_id, p.stage
            ));
            run_phase(
                "output",
                save_prediction_csv(
                    &csv_path,
                    report.test_leader.dt,
                    &report.test_leader.speeds,
                    &t.speeds,
                    &p.mean,
                ),
            )?;
        }
    }

    print_coverage_table(&report);
    print_rmse_table(&report);
    print_timings(&report);
    println!("wrote {}", report_path.display());
    Ok(())
}
