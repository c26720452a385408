//! Losses, gating and the post-hoc and Bayesian baselines.

mod bnn;
pub(crate) mod loss;
mod objective;
mod ordinal;
mod posthoc;
mod thresholds;

pub use bnn::{bnn_predict, bnn_train, kl_divergence, uncertainty_score, BnnConfig, BnnPosterior, BnnPrediction};
pub use loss::{
    log_likelihood, loss_defer, loss_fair_binary, loss_reject, DiForm, GateEstimator, LossKind, LossSpec,
    Reduction, PROB_FLOOR,
};
pub use objective::{concrete_sample, objective, required_head};
pub use ordinal::{loss_fair_punt, loss_punt, ordinal_outputs, OrdinalOutput};
pub use posthoc::{posthoc_objective, posthoc_threshold_search, PosthocConfig, PosthocData, PosthocResult};
pub use thresholds::{apply_thresholds, Decision, ThresholdSet};
