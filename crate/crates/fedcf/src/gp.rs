//! Zero-mean Gaussian-process regression with an RBF kernel.
//!
//! Covariance construction, the scaled negative log marginal likelihood (NLML),
//! its analytic gradient in log-parameter space, and posterior prediction.
//!
//! Numerics: every linear solve goes through a Cholesky factorization of the
//! noisy covariance, never an explicit inverse. A jitter of 1e-8 x mean-diagonal
//! is always added before factorizing (long constant-speed runs produce many
//! duplicate inputs and a nearly singular kernel matrix); on failure the jitter
//! escalates x10 up to a coefficient of 1e-2, then errors. The jitter term
//! depends on the parameters, so the gradient differentiates the jittered
//! objective -- omitting the jitter partials leaves an O(1e-4) h-independent
//! mismatch against finite differences near degenerate noise levels.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LOG_BOUND: f64 = 700.0;
const JITTER_COEFF0: f64 = 1e-8;
const JITTER_ATTEMPTS: usize = 7;

/// GP hyperparameters theta = (sigma0, length_scale, sigma_eps).
///
/// The log-space triple is canonical: it is the optimizer's coordinate
/// system, `to_log` then `from_log` is exact, and equality compares logs.
/// The natural-scale triple is carried verbatim alongside so that values
/// entering through `new` or deserialization leave serialization
/// byte-identical instead of wobbling through an exp/ln round trip.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "RawHyperParams", into = "RawHyperParams")]
pub struct HyperParams {
    log: [f64; 3],
    raw: [f64; 3],
}

impl PartialEq for HyperParams {
    fn eq(&self, other: &Self) -> bool {
        self.log == other.log
    }
}

/// Serialized form: raw positive values, human-readable.
#[derive(Serialize, Deserialize)]
struct RawHyperParams {
    sigma0: f64,
    length_scale: f64,
    sigma_eps: f64,
}

impl From<HyperParams> for RawHyperParams {
    fn from(p: HyperParams) -> Self {
        RawHyperParams {
            sigma0: p.sigma0(),
            length_scale: p.length_scale(),
            sigma_eps: p.sigma_eps(),
        }
    }
}

impl TryFrom<RawHyperParams> for HyperParams {
    type Error = Error;
    fn try_from(r: RawHyperParams) -> Result<Self> {
        HyperParams::new(r.sigma0, r.length_scale, r.sigma_eps)
    }
}

impl HyperParams {
    /// Builds from raw values; all three must be strictly positive and finite
    /// (and not so extreme that their logs leave [-700, 700]).
    pub fn new(sigma0: f64, length_scale: f64, sigma_eps: f64) -> Result<Self> {
        let raw = [sigma0, length_scale, sigma_eps];
        for (name, v) in ["sigma0", "length_scale", "sigma_eps"].iter().zip(raw) {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        let log = raw.map(f64::ln);
        if log.iter().any(|v| v.abs() > LOG_BOUND) {
            return Err(Error::InvalidParameter(format!(
                "parameter magnitude out of range: {raw:?}"
            )));
        }
        Ok(HyperParams { log, raw })
    }

    /// Builds from log-space coordinates (the optimizer's representation).
    /// Bounded to |log| <= 700 so the raw values stay positive and finite.
    pub fn from_log(log: [f64; 3]) -> Result<Self> {
        for v in log {
            if !v.is_finite() || v.abs() > LOG_BOUND {
                return Err(Error::InvalidParameter(format!(
                    "log-space parameter out of range: {v}"
                )));
            }
        }
        Ok(HyperParams {
            log,
            raw: log.map(f64::exp),
        })
    }

    pub fn to_log(&self) -> [f64; 3] {
        self.log
    }

    pub fn sigma0(&self) -> f64 {
        self.raw[0]
    }

    pub fn length_scale(&self) -> f64 {
        self.raw[1]
    }

    pub fn sigma_eps(&self) -> f64 {
        self.raw[2]
    }
}

/// One vehicle's training pairs: leader speed -> AV speed, both m/s.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    vehicle_id: String,
}

impl Dataset {
    /// Inputs and outputs must have equal nonzero length and finite values.
    pub fn new(inputs: Vec<f64>, outputs: Vec<f64>, vehicle_id: impl Into<String>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != outputs.len() {
            return Err(Error::InvalidArgument(format!(
                "dataset needs equal nonzero input/output lengths, got {} and {}",
                inputs.len(),
                outputs.len()
            )));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Dataset {
            inputs,
            outputs,
            vehicle_id: vehicle_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        false // guaranteed nonzero by construction
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn vehicle_id(&self) -> &str {
        &self.vehicle_id
    }

    /// Subset restricted to `idx`; indices must be in range.
    pub(crate) fn restrict(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: idx.iter().map(|&i| self.inputs[i]).collect(),
            outputs: idx.iter().map(|&i| self.outputs[i]).collect(),
            vehicle_id: self.vehicle_id.clone(),
        }
    }
}

/// GP posterior at a set of query points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    /// Predicted speeds, m/s.
    pub mean: Vec<f64>,
    /// Predictive variances, elementwise >= 0.
    pub variance: Vec<f64>,
}

/// RBF kernel value exp(-(x1-x2)^2 / (2 l^2)); symmetric, in (0, 1].
pub fn rbf_kernel(x1: f64, x2: f64, length_scale: f64) -> Result<f64> {
    if !(length_scale > 0.0) || !length_scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "length scale must be strictly positive and finite, got {length_scale}"
        )));
    }
    let d = x1 - x2;
    Ok((-d * d / (2.0 * length_scale * length_scale)).exp())
}

/// Covariance matrix sigma0 * k(X1[i], X2[j]); with `add_noise`, adds
/// sigma_eps^2 on the diagonal (intended for X1 == X2, the training matrix).
pub fn covariance_matrix(
    x1: &[f64],
    x2: &[f64],
    params: &HyperParams,
    add_noise: bool,
) -> Result<DMatrix<f64>> {
    if x1.is_empty() || x2.is_empty() {
        return Err(Error::InvalidArgument(
            "covariance inputs must be non-empty".into(),
        ));
    }
    if add_noise && x1.len() != x2.len() {
        return Err(Error::InvalidArgument(
            "noise diagonal requires equally sized inputs".into(),
        ));
    }
    let s0 = params.sigma0();
    let l = params.length_scale();
    let inv2l2 = 1.0 / (2.0 * l * l);
    let mut m = DMatrix::from_fn(x1.len(), x2.len(), |i, j| {
        let d = x1[i] - x2[j];
        s0 * (-d * d * inv2l2).exp()
    });
    if add_noise {
        let se2 = params.sigma_eps() * params.sigma_eps();
        for i in 0..x1.len() {
            m[(i, i)] += se2;
        }
    }
    Ok(m)
}

/// Cholesky factors of K_y plus the jitter that made it factorizable.
pub(crate) struct SpdFactor {
    pub chol: Cholesky<f64, Dyn>,
    /// Jitter coefficient actually used (1e-8 unless escalated).
    pub coeff: f64,
}

/// Factorizes with the jitter ladder: jitter = coeff * mean-diagonal,
/// coeff in {1e-8, 1e-7, ..., 1e-2}.
pub(crate) fn factorize_spd(ky: &DMatrix<f64>) -> Result<SpdFactor> {
    let n = ky.nrows();
    let mean_diag = ky.diagonal().sum() / n as f64;
    let mut coeff = JITTER_COEFF0;
    let mut attempted = 0.0;
    for _ in 0..JITTER_ATTEMPTS {
        let jitter = coeff * mean_diag;
        attempted = jitter;
        let mut m = ky.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(SpdFactor { chol, coeff });
        }
        coeff *= 10.0;
    }
    Err(Error::Numerical {
        attempted_jitter: attempted,
    })
}

fn ln_2pi() -> f64 {
    (2.0 * std::f64::consts::PI).ln()
}

/// Scaled negative log marginal likelihood:
/// (1/n) [ 1/2 y' K_y^-1 y + 1/2 log det K_y + (n/2) log 2pi ],
/// evaluated on the jittered K_y the factorization actually used.
pub fn nlml(params: &HyperParams, data: &Dataset) -> Result<f64> {
    let n = data.len();
    let ky = covariance_matrix(data.inputs(), data.inputs(), params, true)?;
    let f = factorize_spd(&ky)?;
    let y = DVector::from_column_slice(data.outputs());
    let alpha = f.chol.solve(&y);
    let logdet: f64 = f
        .chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
        * 2.0;
    Ok((0.5 * y.dot(&alpha) + 0.5 * logdet + 0.5 * n as f64 * ln_2pi()) / n as f64)
}

/// Analytic gradient of `nlml` with respect to (log sigma0, log l, log sigma_eps).
///
/// With c the jitter coefficient, K_eff = sigma0 K + sigma_eps^2 I + c (sigma0 +
/// sigma_eps^2) I, and the per-component matrices are
///   C_s0 = sigma0 K + c sigma0 I        = K_eff - (1+c) sigma_eps^2 I
///   C_l  = sigma0 K .* D^2 / l^2
///   C_se = 2 (1+c) sigma_eps^2 I
/// giving g_j = (tr(K_eff^-1 C_j) - a' C_j a) / (2n) with a = K_eff^-1 y.
/// The sigma0/sigma_eps traces reduce to n and tr(K_eff^-1), so only C_l
/// needs a matrix-RHS solve.
pub fn nlml_grad(params: &HyperParams, data: &Dataset) -> Result<[f64; 3]> {
    let n = data.len();
    let nf = n as f64;
    let x = data.inputs();
    let s0 = params.sigma0();
    let l = params.length_scale();
    let se2 = params.sigma_eps() * params.sigma_eps();

    let ky = covariance_matrix(x, x, params, true)?;
    let f = factorize_spd(&ky)?;
    let c = f.coeff;

    let y = DVector::from_column_slice(data.outputs());
    let alpha = f.chol.solve(&y);

    // tr(K_eff^-1) = ||L^-1||_F^2 via a triangular solve against the identity.
    let linv = f
        .chol
        .l_dirty()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::Numerical {
            attempted_jitter: c,
        })?;
    let tr_inv = linv.norm_squared();

    // Base kernel (no sigma0) and the lengthscale matrix C_l.
    let inv2l2 = 1.0 / (2.0 * l * l);
    let kb = DMatrix::from_fn(n, n, |i, j| {
        let d = x[i] - x[j];
        (-d * d * inv2l2).exp()
    });
    let cl = DMatrix::from_fn(n, n, |i, j| {
        let d = x[i] - x[j];
        s0 * kb[(i, j)] * d * d / (l * l)
    });

    let alpha_norm2 = alpha.norm_squared();
    let kb_alpha = &kb * &alpha;

    let tr_s0 = nf - (1.0 + c) * se2 * tr_inv;
    let quad_s0 = s0 * alpha.dot(&kb_alpha) + c * s0 * alpha_norm2;

    let tr_l = f.chol.solve(&cl).trace();
    let quad_l = alpha.dot(&(&cl * &alpha));

    let tr_se = 2.0 * (1.0 + c) * se2 * tr_inv;
    let quad_se = 2.0 * (1.0 + c) * se2 * alpha_norm2;

    Ok([
        (tr_s0 - quad_s0) / (2.0 * nf),
        (tr_l - quad_l) / (2.0 * nf),
        (tr_se - quad_se) / (2.0 * nf),
    ])
}

/// GP posterior at `query_inputs`: mean = K*' K_y^-1 y,
/// variance = diag(K** - K*' K_y^-1 K*) clamped at zero.
/// K* and K** are noise-free; sigma_eps enters only through K_y.
pub fn posterior_predict(
    params: &HyperParams,
    train: &Dataset,
    query_inputs: &[f64],
) -> Result<PosteriorPrediction> {
    let ky = covariance_matrix(train.inputs(), train.inputs(), params, true)?;
    let f = factorize_spd(&ky)?;
    let y = DVector::from_column_slice(train.outputs());
    let alpha = f.chol.solve(&y);

    let ks = covariance_matrix(train.inputs(), query_inputs, params, false)?;
    let mean: Vec<f64> = (ks.transpose() * &alpha).iter().copied().collect();

    let s0 = params.sigma0();
    let kinv_ks = f.chol.solve(&ks);
    let variance: Vec<f64> = (0..query_inputs.len())
        .map(|j| (s0 - ks.column(j).dot(&kinv_ks.column(j))).max(0.0))
        .collect();

    Ok(PosteriorPrediction { mean, variance })
}
