//! Round-based federated training: broadcast, local updates, weighted
//! aggregation over S sharing rounds.
//!
//! The coordinator only ever touches `LocalUpdater` handles, which expose a
//! vehicle id, a dataset cardinality, and parameter-valued operations. Raw
//! training data stays on the vehicle side by interface shape, not by
//! convention.
//!
//! Determinism: each (vehicle, round) pair gets its own RNG stream derived
//! from the config seed, the vehicle id string, and the round index, so
//! results cannot depend on execution order. Updates run sequentially here;
//! the per-round independence means parallel execution would be legal but at
//! this problem scale it buys nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{nlml, Dataset, HyperParams};
use crate::trainer::{sgd_local, TrainingConfig};

/// Federation settings: S rounds of the training config applied per vehicle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationConfig {
    /// Sharing rounds S >= 1.
    pub rounds: usize,
    /// Local update settings applied to every vehicle each round; the seed
    /// is the base of the per-(vehicle, round) stream derivation.
    pub training: TrainingConfig,
    /// Global parameters broadcast at round 0.
    pub initial_params: HyperParams,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be at least 1".into()));
        }
        self.training.validate()
    }
}

/// Per-vehicle aggregation weights alpha_v = N_v / sum(N).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationWeights {
    alphas: Vec<f64>,
}

impl FederationWeights {
    /// Each weight must lie in (0, 1] and the sum must be 1 within 1e-12.
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidArgument("no aggregation weights".into()));
        }
        if alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "weights must lie in (0, 1], got {alphas:?}"
            )));
        }
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights must sum to 1, got {sum}"
            )));
        }
        Ok(FederationWeights { alphas })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// One vehicle's record within a round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleRound {
    pub vehicle_id: String,
    /// Local parameters after this round's U updates.
    pub params: HyperParams,
    /// Vehicle-side full-batch NLML at those local parameters.
    pub nlml: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Aggregated global parameters at the end of the round.
    pub global: HyperParams,
    pub vehicles: Vec<VehicleRound>,
}

/// Full parameter history: one record per round, V vehicle entries each.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationHistory {
    pub rounds: Vec<RoundRecord>,
}

/// A vehicle as the coordinator sees it: parameters in, parameters out.
pub trait LocalUpdater {
    fn vehicle_id(&self) -> &str;
    fn num_samples(&self) -> usize;
    /// Runs the local update loop from `start` under `cfg` (seed already
    /// derived for this round) on the vehicle's own data.
    fn local_update(&self, start: &HyperParams, cfg: &TrainingConfig) -> Result<HyperParams>;
    /// Full-batch NLML of the vehicle's own data at `params`.
    fn full_batch_nlml(&self, params: &HyperParams) -> Result<f64>;
}

/// The library's standard vehicle: a dataset trained with `sgd_local`.
pub struct DatasetUpdater<'a> {
    data: &'a Dataset,
}

impl<'a> DatasetUpdater<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        DatasetUpdater { data }
    }
}

impl LocalUpdater for DatasetUpdater<'_> {
    fn vehicle_id(&self) -> &str {
        self.data.vehicle_id()
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn local_update(&self, start: &HyperParams, cfg: &TrainingConfig) -> Result<HyperParams> {
        sgd_local(start, self.data, cfg, None)
    }

    fn full_batch_nlml(&self, params: &HyperParams) -> Result<f64> {
        nlml(params, self.data)
    }
}

/// Dataset-size-proportional weights, exactly normalized.
pub fn compute_weights(sizes: &[usize]) -> Result<FederationWeights> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no vehicles".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument(
            "every vehicle needs at least one sample".into(),
        ));
    }
    let total: usize = sizes.iter().sum();
    FederationWeights::new(sizes.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Weighted average of local parameters, computed in log space.
///
/// When every local parameter set is identical the input is returned as-is:
/// the aggregate of agreeing vehicles must be a bitwise fixed point, which a
/// floating-point weighted sum does not guarantee.
pub fn aggregate(locals: &[HyperParams], weights: &FederationWeights) -> Result<HyperParams> {
    if locals.len() != weights.alphas().len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter sets but {} weights",
            locals.len(),
            weights.alphas().len()
        )));
    }
    let first = locals[0];
    if locals.iter().all(|p| *p == first) {
        return Ok(first);
    }
    let mut acc = [0.0f64; 3];
    for (p, &a) in locals.iter().zip(weights.alphas()) {
        let lg = p.to_log();
        for j in 0..3 {
            acc[j] += a * lg[j];
        }
    }
    HyperParams::from_log(acc)
}

/// Deterministic per-(vehicle, round) seed: FNV-1a over (base seed, id bytes,
/// round index), finalized with a splitmix64 mix.
pub fn derive_round_seed(base_seed: u64, vehicle_id: &str, round: usize) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf29ce484222325;
    const FNV_PRIME: u64 = 0x100000001b3;
    let mut h = FNV_OFFSET;
    for b in base_seed
        .to_le_bytes()
        .iter()
        .chain(vehicle_id.as_bytes())
        .chain((round as u64).to_le_bytes().iter())
    {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mut z = h.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Runs federation over vehicles exposed only as `LocalUpdater` handles.
///
/// Every round broadcasts the current global parameters, has each vehicle
/// run its local updates from that broadcast (warm start from global, not
/// from the vehicle's previous local result), aggregates with size weights,
/// and records the round. Returns the final global parameters and the
/// history.
pub fn run_federation_with(
    vehicles: &[&dyn LocalUpdater],
    cfg: &FederationConfig,
) -> Result<(HyperParams, FederationHistory)> {
    cfg.validate()?;
    if vehicles.is_empty() {
        return Err(Error::InvalidArgument("no vehicles".into()));
    }
    let weights = compute_weights(&vehicles.iter().map(|v| v.num_samples()).collect::<Vec<_>>())?;

    let mut global = cfg.initial_params;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let mut locals = Vec::with_capacity(vehicles.len());
        for v in vehicles.iter() {
            let round_cfg = TrainingConfig {
                seed: derive_round_seed(cfg.training.seed, v.vehicle_id(), round),
                ..cfg.training
            };
            let params = v
                .local_update(&global, &round_cfg)
                .map_err(|e| Error::Vehicle {
                    vehicle_id: v.vehicle_id().to_string(),
                    round,
                    source: Box::new(e),
                })?;
            locals.push(params);
        }
        global = aggregate(&locals, &weights)?;
        let mut records = Vec::with_capacity(vehicles.len());
        for (v, params) in vehicles.iter().zip(&locals) {
            let loss = v.full_batch_nlml(params).map_err(|e| Error::Vehicle {
                vehicle_id: v.vehicle_id().to_string(),
                round,
                source: Box::new(e),
            })?;
            records.push(VehicleRound {
                vehicle_id: v.vehicle_id().to_string(),
                params: *params,
                nlml: loss,
            });
        }
        rounds.push(RoundRecord {
            global,
            vehicles: records,
        });
    }
    Ok((global, FederationHistory { rounds }))
}

/// Convenience front-end: wraps each dataset in a `DatasetUpdater`.
pub fn run_federation(
    datasets: &[Dataset],
    cfg: &FederationConfig,
) -> Result<(HyperParams, FederationHistory)> {
    let updaters: Vec<DatasetUpdater> = datasets.iter().map(DatasetUpdater::new).collect();
    let handles: Vec<&dyn LocalUpdater> = updaters.iter().map(|u| u as &dyn LocalUpdater).collect();
    run_federation_with(&handles, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn params(s0: f64, l: f64, se: f64) -> HyperParams {
        HyperParams::new(s0, l, se).unwrap()
    }

    fn sine_dataset(n: usize, id: &str) -> Dataset {
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 10.0 / n as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        Dataset::new(x, y, id).unwrap()
    }

    fn base_cfg(rounds: usize, seed: u64) -> FederationConfig {
        FederationConfig {
            rounds,
            training: TrainingConfig {
                local_updates: 10,
                learning_rate: 0.05,
                lr_decay: 0.99,
                batch_size: 8,
                seed,
            },
            initial_params: params(2.0, 3.0, 0.5),
        }
    }

    #[test]
    fn weights_examples() {
        let w = compute_weights(&[197, 197, 197]).unwrap();
        for &a in w.alphas() {
            assert_eq!(a, 1.0 / 3.0);
        }
        assert_eq!(compute_weights(&[100]).unwrap().alphas(), &[1.0]);
        assert_eq!(compute_weights(&[1, 3]).unwrap().alphas(), &[0.25, 0.75]);
        assert!(compute_weights(&[]).is_err());
        assert!(compute_weights(&[5, 0]).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        let w = compute_weights(&[13, 7, 197, 41, 1]).unwrap();
        let sum: f64 = w.alphas().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn aggregate_fixed_point_on_identical_params() {
        let p = params(5.0, 2.0, 0.7);
        let w = FederationWeights::new(vec![0.2, 0.5, 0.3]).unwrap();
        let out = aggregate(&[p, p, p], &w).unwrap();
        assert_eq!(out.to_log(), p.to_log());
    }

    #[test]
    fn aggregate_midpoint_in_log_space() {
        let a = HyperParams::from_log([0.0, 0.0, 0.0]).unwrap();
        let b = HyperParams::from_log([2.0, 2.0, 2.0]).unwrap();
        let w = FederationWeights::new(vec![0.5, 0.5]).unwrap();
        let out = aggregate(&[a, b], &w).unwrap();
        assert_eq!(out.to_log(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn aggregate_equal_weights_is_mean() {
        let ps = [
            HyperParams::from_log([0.3, -1.2, 0.9]).unwrap(),
            HyperParams::from_log([1.1, 0.4, -0.5]).unwrap(),
            HyperParams::from_log([-0.7, 2.2, 0.1]).unwrap(),
        ];
        let w = compute_weights(&[5, 5, 5]).unwrap();
        let out = aggregate(&ps, &w).unwrap().to_log();
        for (j, v) in out.iter().enumerate() {
            let mean = ps.iter().map(|p| p.to_log()[j]).sum::<f64>() / 3.0;
            assert!((v - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn aggregate_rejects_length_mismatch() {
        let p = params(1.0, 1.0, 1.0);
        let w = FederationWeights::new(vec![1.0]).unwrap();
        assert!(aggregate(&[p, p], &w).is_err());
    }

    #[test]
    fn round_seeds_distinct_and_stable() {
        let a = derive_round_seed(42, "vehicle-1", 0);
        assert_eq!(a, derive_round_seed(42, "vehicle-1", 0));
        assert_ne!(a, derive_round_seed(42, "vehicle-1", 1));
        assert_ne!(a, derive_round_seed(42, "vehicle-2", 0));
        assert_ne!(a, derive_round_seed(43, "vehicle-1", 0));
    }

    #[test]
    fn single_vehicle_equals_chained_local_updates() {
        let d = sine_dataset(40, "solo");
        let cfg = base_cfg(4, 11);
        let (theta, hist) = run_federation(std::slice::from_ref(&d), &cfg).unwrap();
        assert_eq!(hist.rounds.len(), 4);

        let mut chained = cfg.initial_params;
        for round in 0..4 {
            let round_cfg = TrainingConfig {
                seed: derive_round_seed(11, "solo", round),
                ..cfg.training
            };
            chained = sgd_local(&chained, &d, &round_cfg, None).unwrap();
        }
        assert_eq!(theta.to_log(), chained.to_log());
    }

    #[test]
    fn identical_vehicles_stay_in_lockstep() {
        // Same data and same id: derived streams coincide, so every round's
        // aggregate must equal every local parameter set bitwise.
        let d = sine_dataset(25, "veh");
        let datasets = vec![d.clone(), d.clone(), d];
        let cfg = base_cfg(3, 5);
        let (_, hist) = run_federation(&datasets, &cfg).unwrap();
        for rec in &hist.rounds {
            assert_eq!(rec.vehicles.len(), 3);
            for v in &rec.vehicles {
                assert_eq!(v.params.to_log(), rec.global.to_log());
            }
        }
    }

    #[test]
    fn zero_learning_rate_fixed_point() {
        let datasets = vec![sine_dataset(20, "a"), sine_dataset(30, "b")];
        let mut cfg = base_cfg(3, 2);
        cfg.training.learning_rate = 0.0;
        let (theta, hist) = run_federation(&datasets, &cfg).unwrap();
        assert_eq!(theta.to_log(), cfg.initial_params.to_log());
        for rec in &hist.rounds {
            assert_eq!(rec.global.to_log(), cfg.initial_params.to_log());
        }
    }

    /// Audit double: counts every coordinator access; the trait's shape means
    /// the coordinator can only ever see id, cardinality, and parameters.
    struct AuditUpdater {
        inner: Dataset,
        updates: Cell<usize>,
        losses: Cell<usize>,
    }

    impl LocalUpdater for AuditUpdater {
        fn vehicle_id(&self) -> &str {
            self.inner.vehicle_id()
        }
        fn num_samples(&self) -> usize {
            self.inner.len()
        }
        fn local_update(&self, start: &HyperParams, cfg: &TrainingConfig) -> Result<HyperParams> {
            self.updates.set(self.updates.get() + 1);
            sgd_local(start, &self.inner, cfg, None)
        }
        fn full_batch_nlml(&self, p: &HyperParams) -> Result<f64> {
            self.losses.set(self.losses.get() + 1);
            nlml(p, &self.inner)
        }
    }

    #[test]
    fn coordinator_touches_only_the_updater_interface() {
        let cfg = base_cfg(5, 33);
        let doubles: Vec<AuditUpdater> = ["a", "b"]
            .iter()
            .map(|id| AuditUpdater {
                inner: sine_dataset(22, id),
                updates: Cell::new(0),
                losses: Cell::new(0),
            })
            .collect();
        let handles: Vec<&dyn LocalUpdater> =
            doubles.iter().map(|d| d as &dyn LocalUpdater).collect();
        let (theta, _) = run_federation_with(&handles, &cfg).unwrap();

        // One local update and one loss evaluation per vehicle per round.
        for d in &doubles {
            assert_eq!(d.updates.get(), 5);
            assert_eq!(d.losses.get(), 5);
        }
        // Identical result through the plain dataset front-end.
        let datasets = vec![sine_dataset(22, "a"), sine_dataset(22, "b")];
        let (theta2, _) = run_federation(&datasets, &cfg).unwrap();
        assert_eq!(theta.to_log(), theta2.to_log());
    }

    struct FailingUpdater;

    impl LocalUpdater for FailingUpdater {
        fn vehicle_id(&self) -> &str {
            "doomed"
        }
        fn num_samples(&self) -> usize {
            10
        }
        fn local_update(&self, _: &HyperParams, _: &TrainingConfig) -> Result<HyperParams> {
            Err(Error::Numerical {
                attempted_jitter: 1e-2,
            })
        }
        fn full_batch_nlml(&self, _: &HyperParams) -> Result<f64> {
            unreachable!()
        }
    }

    #[test]
    fn vehicle_failure_carries_id_and_round() {
        let failing = FailingUpdater;
        let handles: Vec<&dyn LocalUpdater> = vec![&failing];
        let err = run_federation_with(&handles, &base_cfg(2, 0)).unwrap_err();
        match err {
            Error::Vehicle {
                vehicle_id, round, ..
            } => {
                assert_eq!(vehicle_id, "doomed");
                assert_eq!(round, 0);
            }
            other => panic!("expected Vehicle error, got {other}"),
        }
    }

    #[test]
    fn history_shape_matches_config() {
        let datasets = vec![sine_dataset(15, "a"), sine_dataset(18, "b")];
        let (_, hist) = run_federation(&datasets, &base_cfg(6, 3)).unwrap();
        assert_eq!(hist.rounds.len(), 6);
        for rec in &hist.rounds {
            assert_eq!(rec.vehicles.len(), 2);
            assert!(rec.vehicles.iter().all(|v| v.nlml.is_finite()));
        }
    }
}
