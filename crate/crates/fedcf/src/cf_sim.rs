//! Linear car-following controller simulation and the synthetic oscillation
//! generator.
//!
//! The controller is u = k_s * (spacing - desired) + k_v * (leader - speed) +
//! k_a * accel with desired spacing = speed * time_gap + standstill.
//! Commanded acceleration is clamped to +/- 3 m/s^2 (comfort bound: spacing
//! gains like k_s = 10 on multi-meter errors would otherwise command
//! physically absurd accelerations). The plant closure is forward Euler:
//! the clamped command becomes the next step's acceleration, speed floors
//! at zero, and spacing integrates the speed difference. The fed-back
//! acceleration state is the realized (clamped) one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Comfort bound on commanded acceleration, m/s^2.
pub const ACCEL_LIMIT: f64 = 3.0;

/// Linear controller design: gains K = [k_s, k_v, k_a], time gap, standstill.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Feedback gains on spacing deviation (1/s^2), speed difference (1/s),
    /// and acceleration (dimensionless).
    pub gains: [f64; 3],
    /// Time gap tau* in seconds; > 0.
    pub time_gap: f64,
    /// Standstill distance delta* in meters; >= 0.
    pub standstill: f64,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_gap > 0.0) || !self.time_gap.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time_gap must be positive, got {}",
                self.time_gap
            )));
        }
        if !(self.standstill >= 0.0) || !self.standstill.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "standstill must be >= 0, got {}",
                self.standstill
            )));
        }
        if self.gains.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidParameter("gains must be finite".into()));
        }
        Ok(())
    }
}

/// Follower state: gap to leader (m), speed (m/s), acceleration (m/s^2).
#[derive(Debug, Clone, Copy)]
pub struct CFState {
    pub spacing: f64,
    pub speed: f64,
    pub accel: f64,
}

/// A speed time series at fixed rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    /// Timestep in seconds; > 0.
    pub dt: f64,
    /// Speeds in m/s; finite and >= 0.
    pub speeds: Vec<f64>,
}

impl SpeedProfile {
    pub fn new(dt: f64, speeds: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if speeds.is_empty() {
            return Err(Error::InvalidArgument("empty speed profile".into()));
        }
        if speeds.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "speeds must be finite and >= 0".into(),
            ));
        }
        Ok(SpeedProfile { dt, speeds })
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// Index window [start, end) as a new profile at the same rate.
    pub fn window(&self, start: usize, end: usize) -> Result<SpeedProfile> {
        if start >= end || end > self.speeds.len() {
            return Err(Error::InvalidArgument(format!(
                "window [{start}, {end}) out of range for length {}",
                self.speeds.len()
            )));
        }
        Ok(SpeedProfile {
            dt: self.dt,
            speeds: self.speeds[start..end].to_vec(),
        })
    }
}

/// Constant-time-gap policy: desired spacing = speed * tau* + delta*.
pub fn desired_spacing(speed: f64, cfg: &ControllerConfig) -> f64 {
    speed * cfg.time_gap + cfg.standstill
}

/// Commanded acceleration, clamped to +/- ACCEL_LIMIT.
pub fn control_input(state: &CFState, leader_speed: f64, cfg: &ControllerConfig) -> f64 {
    let dd = state.spacing - desired_spacing(state.speed, cfg);
    let dv = leader_speed - state.speed;
    let u = cfg.gains[0] * dd + cfg.gains[1] * dv + cfg.gains[2] * state.accel;
    u.clamp(-ACCEL_LIMIT, ACCEL_LIMIT)
}

/// Equilibrium state for a given leader speed: exact desired spacing,
/// matched speed, zero acceleration. Control input is exactly zero there.
pub fn equilibrium_state(leader_speed: f64, cfg: &ControllerConfig) -> CFState {
    CFState {
        spacing: desired_spacing(leader_speed, cfg),
        speed: leader_speed,
        accel: 0.0,
    }
}

/// Simulation output: follower speeds, spacing and acceleration traces, and
/// the steps at which the spacing became non-positive (collision events,
/// recorded but not fatal).
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub follower: SpeedProfile,
    pub spacing: Vec<f64>,
    pub accel: Vec<f64>,
    pub collisions: Vec<usize>,
}

/// Forward-Euler follower simulation over a leader profile.
///
/// accel[t+1] = clamp(u(t)), speed[t+1] = max(0, speed[t] + accel[t+1] * dt),
/// spacing[t+1] = spacing[t] + (leader[t] - speed[t]) * dt. Output length
/// equals the leader length.
pub fn simulate_follower(
    leader: &SpeedProfile,
    cfg: &ControllerConfig,
    init: CFState,
) -> Result<SimulationResult> {
    cfg.validate()?;
    let n = leader.len();
    let dt = leader.dt;
    let mut speeds = Vec::with_capacity(n);
    let mut spacing = Vec::with_capacity(n);
    let mut accel = Vec::with_capacity(n);
    let mut collisions = Vec::new();
    let mut state = init;
    speeds.push(state.speed);
    spacing.push(state.spacing);
    accel.push(state.accel);
    if state.spacing <= 0.0 {
        collisions.push(0);
    }
    for t in 0..n - 1 {
        let u = control_input(&state, leader.speeds[t], cfg);
        let next_speed = (state.speed + u * dt).max(0.0);
        let next_spacing = state.spacing + (leader.speeds[t] - state.speed) * dt;
        state = CFState {
            spacing: next_spacing,
            speed: next_speed,
            accel: u,
        };
        speeds.push(next_speed);
        spacing.push(next_spacing);
        accel.push(u);
        if next_spacing <= 0.0 {
            collisions.push(t + 1);
        }
    }
    Ok(SimulationResult {
        follower: SpeedProfile { dt, speeds },
        spacing,
        accel,
        collisions,
    })
}

/// Synthetic leader oscillation: constant speed, linear deceleration to the
/// dip, linear acceleration back, constant again; the four `durations` give
/// the phase lengths in seconds. A 3-point centered moving average smooths
/// the phase-boundary kinks (linear interiors are unchanged by it).
/// Total samples = round(total duration / dt).
pub fn generate_oscillation(
    base_speed: f64,
    dip_speed: f64,
    durations: [f64; 4],
    dt: f64,
) -> Result<SpeedProfile> {
    if !(dip_speed >= 0.0 && base_speed >= dip_speed) || !base_speed.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need base_speed >= dip_speed >= 0, got base {base_speed}, dip {dip_speed}"
        )));
    }
    if durations.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "phase durations must all be positive, got {durations:?}"
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let total: f64 = durations.iter().sum();
    let n = (total / dt).round() as usize;
    if n < 2 {
        return Err(Error::InvalidArgument(
            "profile too short for the requested dt".into(),
        ));
    }
    let t1 = durations[0];
    let t2 = t1 + durations[1];
    let t3 = t2 + durations[2];
    // Boundary epsilon keeps samples landing exactly on a phase edge in the
    // later phase regardless of accumulated rounding in i * dt.
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            if t < t1 - 1e-12 {
                base_speed
            } else if t < t2 - 1e-12 {
                base_speed + (dip_speed - base_speed) * (t - t1) / durations[1]
            } else if t < t3 - 1e-12 {
                dip_speed + (base_speed - dip_speed) * (t - t2) / durations[2]
            } else {
                base_speed
            }
        })
        .collect();
    let mut speeds = raw.clone();
    for i in 1..n - 1 {
        speeds[i] = (raw[i - 1] + raw[i] + raw[i + 1]) / 3.0;
    }
    SpeedProfile::new(dt, speeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn aggressive() -> ControllerConfig {
        ControllerConfig {
            gains: [0.01, 10.0, -0.01],
            time_gap: 0.5,
            standstill: 5.0,
        }
    }

    pub(crate) fn passive() -> ControllerConfig {
        ControllerConfig {
            gains: [10.0, 0.01, -0.01],
            time_gap: 2.5,
            standstill: 7.0,
        }
    }

    fn rmse(a: &[f64], b: &[f64]) -> f64 {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (s / a.len() as f64).sqrt()
    }

    #[test]
    fn desired_spacing_examples() {
        assert_eq!(desired_spacing(0.0, &aggressive()), 5.0);
        assert_eq!(desired_spacing(20.0, &aggressive()), 15.0);
        assert_eq!(desired_spacing(20.0, &passive()), 57.0);
    }

    #[test]
    fn control_input_examples() {
        let eq = equilibrium_state(17.0, &aggressive());
        assert_eq!(control_input(&eq, 17.0, &aggressive()), 0.0);

        // Passive gains on a 2 m spacing error: 20 before clamping.
        let st = CFState {
            spacing: desired_spacing(10.0, &passive()) + 2.0,
            speed: 10.0,
            accel: 0.0,
        };
        assert_eq!(control_input(&st, 10.0, &passive()), 3.0);

        // Aggressive gains on a 1 m/s speed difference: 10 before clamping.
        let st = CFState {
            spacing: desired_spacing(10.0, &aggressive()),
            speed: 10.0,
            accel: 0.0,
        };
        assert_eq!(control_input(&st, 11.0, &aggressive()), 3.0);
    }

    #[test]
    fn equilibrium_holds_under_constant_leader() {
        let leader = SpeedProfile::new(0.1, vec![20.0; 500]).unwrap();
        for cfg in [aggressive(), passive()] {
            let init = equilibrium_state(20.0, &cfg);
            let res = simulate_follower(&leader, &cfg, init).unwrap();
            for (v, d) in res.follower.speeds.iter().zip(&res.spacing) {
                assert!((v - 20.0).abs() < 1e-9);
                assert!((d - init.spacing).abs() < 1e-9);
            }
            assert!(res.collisions.is_empty());
        }
    }

    #[test]
    fn aggressive_follower_nearly_masks_leader() {
        let leader = generate_oscillation(15.0, 10.0, [5.0, 5.0, 5.0, 4.7], 0.1).unwrap();
        let cfg = aggressive();
        let res =
            simulate_follower(&leader, &cfg, equilibrium_state(leader.speeds[0], &cfg)).unwrap();
        let err = rmse(&res.follower.speeds, &leader.speeds);
        assert!(err < 0.5, "aggressive RMSE {err}");
    }

    #[test]
    fn passive_follower_damps_and_lags() {
        let leader = generate_oscillation(15.0, 10.0, [5.0, 5.0, 5.0, 4.7], 0.1).unwrap();
        let acfg = aggressive();
        let pcfg = passive();
        let ares =
            simulate_follower(&leader, &acfg, equilibrium_state(leader.speeds[0], &acfg)).unwrap();
        let pres =
            simulate_follower(&leader, &pcfg, equilibrium_state(leader.speeds[0], &pcfg)).unwrap();

        let range = |v: &[f64]| {
            v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
        };
        assert!(range(&pres.follower.speeds) < range(&leader.speeds));
        assert!(
            rmse(&pres.follower.speeds, &leader.speeds)
                > rmse(&ares.follower.speeds, &leader.speeds)
        );
    }

    #[test]
    fn oscillation_sample_count() {
        let p = generate_oscillation(15.0, 5.0, [5.0, 4.0, 4.0, 6.7], 0.1).unwrap();
        assert_eq!(p.len(), 197);
    }

    #[test]
    fn degenerate_oscillation_is_constant() {
        let p = generate_oscillation(12.0, 12.0, [1.0, 2.0, 2.0, 1.0], 0.1).unwrap();
        assert!(p.speeds.iter().all(|&v| v == 12.0));
    }

    #[test]
    fn oscillation_min_reaches_dip() {
        let p = generate_oscillation(15.0, 5.0, [5.0, 4.0, 4.0, 6.7], 0.1).unwrap();
        let min = p.speeds.iter().cloned().fold(f64::MAX, f64::min);
        assert!((min - 5.0).abs() < 0.2, "min {min}");
    }

    #[test]
    fn oscillation_rejects_inverted_speeds() {
        assert!(generate_oscillation(5.0, 15.0, [1.0, 1.0, 1.0, 1.0], 0.1).is_err());
        assert!(generate_oscillation(15.0, -1.0, [1.0, 1.0, 1.0, 1.0], 0.1).is_err());
        assert!(generate_oscillation(15.0, 5.0, [1.0, 0.0, 1.0, 1.0], 0.1).is_err());
    }

    #[test]
    fn phase_slices_reconcatenate_exactly() {
        let p = generate_oscillation(15.0, 5.0, [5.0, 4.0, 4.0, 6.7], 0.1).unwrap();
        let (a, b) = (50, 90); // phase boundaries at 5.0 s and 9.0 s
        let s1 = p.window(0, a).unwrap();
        let s2 = p.window(a, b).unwrap();
        let s3 = p.window(b, p.len()).unwrap();
        let rejoined: Vec<f64> = s1
            .speeds
            .iter()
            .chain(s2.speeds.iter())
            .chain(s3.speeds.iter())
            .copied()
            .collect();
        assert_eq!(rejoined, p.speeds);
    }

    #[test]
    fn halving_dt_is_consistent_on_experiment_oscillation() {
        // The deceleration window used by the two-vehicle experiment.
        let coarse = generate_oscillation(15.0, 5.0, [4.0, 8.0, 4.0, 4.0], 0.05)
            .unwrap()
            .window(0, 241)
            .unwrap();
        let fine = generate_oscillation(15.0, 5.0, [4.0, 8.0, 4.0, 4.0], 0.025)
            .unwrap()
            .window(0, 481)
            .unwrap();
        for cfg in [aggressive(), passive()] {
            let rc = simulate_follower(&coarse, &cfg, equilibrium_state(coarse.speeds[0], &cfg))
                .unwrap();
            let rf =
                simulate_follower(&fine, &cfg, equilibrium_state(fine.speeds[0], &cfg)).unwrap();
            let vc = *rc.follower.speeds.last().unwrap();
            let vf = *rf.follower.speeds.last().unwrap();
            let rel = (vc - vf).abs() / vc.abs();
            assert!(rel < 0.01, "dt-halving changed final speed by {rel}");
        }
    }

    #[test]
    fn collisions_recorded_not_fatal() {
        let leader = SpeedProfile::new(0.1, vec![0.0; 30]).unwrap();
        let init = CFState {
            spacing: 0.5,
            speed: 20.0,
            accel: 0.0,
        };
        let res = simulate_follower(&leader, &passive(), init).unwrap();
        assert!(!res.collisions.is_empty());
        assert_eq!(res.follower.len(), 30);
    }

    #[test]
    fn follower_speed_never_negative() {
        let leader = generate_oscillation(10.0, 0.0, [2.0, 3.0, 3.0, 2.0], 0.1).unwrap();
        let cfg = aggressive();
        let res =
            simulate_follower(&leader, &cfg, equilibrium_state(leader.speeds[0], &cfg)).unwrap();
        assert!(res.follower.speeds.iter().all(|&v| v >= 0.0));
    }
}
