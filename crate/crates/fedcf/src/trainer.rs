//! Mini-batch SGD on the GP marginal likelihood, in log-parameter space.
//!
//! One `sgd_local` call is one vehicle's local update loop: it is used both
//! standalone and inside federation rounds, and with the proximal option it
//! becomes the personalization objective's update.
//!
//! The mini-batch loss is the NLML restricted to the sampled subset with the
//! same 1/|batch| scaling as the full objective. The data gradient is clipped
//! at L2 norm 10 before the proximal term is added: clipping the combined
//! gradient would cap the anchor pull and defeat large proximal coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{nlml_grad, Dataset, HyperParams};

const CLIP_NORM: f64 = 10.0;

/// Mini-batch SGD settings for one local update loop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Number of updates U per call.
    pub local_updates: usize,
    /// Initial learning rate eta; eta^(t) = eta * lr_decay^t.
    pub learning_rate: f64,
    /// Multiplicative decay per update, in (0, 1].
    pub lr_decay: f64,
    /// Mini-batch cardinality; clamped to the dataset size when larger.
    pub batch_size: usize,
    /// RNG seed for batch sampling.
    pub seed: u64,
}

impl TrainingConfig {
    /// Zero learning rate is accepted: it makes the update an exact no-op,
    /// which the determinism fixed-point checks rely on.
    pub fn validate(&self) -> Result<()> {
        if self.local_updates == 0 {
            return Err(Error::InvalidParameter(
                "local_updates must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Draws `batch_size` distinct indices uniformly without replacement,
/// or all indices when `batch_size >= data.len()`.
pub fn sample_minibatch(data: &Dataset, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len();
    if batch_size >= n {
        return (0..n).collect();
    }
    // Partial Fisher-Yates: the first batch_size slots end up uniform without
    // replacement and the draw order is a pure function of the RNG stream.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..batch_size {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(batch_size);
    idx
}

fn clip_l2(g: &mut [f64; 3]) {
    let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    if norm > CLIP_NORM {
        let scale = CLIP_NORM / norm;
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
}

/// Runs exactly `cfg.local_updates` SGD steps from `start` and returns the
/// final parameters. At step t: sample a mini-batch, take the NLML gradient
/// of the restricted subset in log space, clip it, add `2 * omega * (theta -
/// anchor)` when `prox = (omega, anchor)` is set, and apply
/// `theta -= eta * lr_decay^t * g`.
pub fn sgd_local(
    start: &HyperParams,
    data: &Dataset,
    cfg: &TrainingConfig,
    prox: Option<(f64, &HyperParams)>,
) -> Result<HyperParams> {
    cfg.validate()?;
    if let Some((omega, _)) = prox {
        if !(omega >= 0.0) || !omega.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "proximal coefficient must be finite and >= 0, got {omega}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logp = start.to_log();
    let mut eta = cfg.learning_rate;
    for step in 0..cfg.local_updates {
        let idx = sample_minibatch(data, cfg.batch_size, &mut rng);
        let batch = data.restrict(&idx);
        let params = HyperParams::from_log(logp).map_err(|e| Error::Step {
            step,
            source: Box::new(e),
        })?;
        let mut g = nlml_grad(&params, &batch).map_err(|e| Error::Step {
            step,
            source: Box::new(e),
        })?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NanGradient { step });
        }
        clip_l2(&mut g);
        if let Some((omega, anchor)) = prox {
            let a = anchor.to_log();
            for j in 0..3 {
                g[j] += 2.0 * omega * (logp[j] - a[j]);
            }
        }
        for j in 0..3 {
            logp[j] -= eta * g[j];
        }
        eta *= cfg.lr_decay;
    }
    HyperParams::from_log(logp)
}
