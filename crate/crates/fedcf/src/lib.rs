//! Personalized car-following driver models for simulated AVs via federated
//! knowledge sharing.
//!
//! Each vehicle fits a one-dimensional GP regression from leader speed to
//! its own response speed by mini-batch SGD on the scaled negative log
//! marginal likelihood (`gp`, `trainer`). A coordinator repeatedly
//! broadcasts global hyperparameters, collects locally updated copies, and
//! aggregates them by dataset-size weights without ever moving raw data
//! (`federation`). Vehicles then fine-tune the global model under a
//! proximal penalty that keeps them near the shared solution
//! (`personalize`). Training data comes either from trajectory CSVs
//! (`data`) or from a linear car-following controller responding to
//! synthetic leader oscillations (`cf_sim`); `eval` houses the metrics and
//! the two reference experiments.
//!
//! All randomness flows from explicit seeds; every pipeline is bitwise
//! reproducible under a fixed configuration.

// Validation sites use `!(x >= 0.0)` style comparisons on purpose: the
// negated form rejects NaN, which `x < 0.0` silently accepts.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cf_sim;
pub mod data;
pub mod error;
pub mod eval;
pub mod federation;
pub mod gp;
pub mod personalize;
pub mod trainer;

pub use error::{Error, Result};
