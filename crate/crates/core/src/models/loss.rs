//! The loss repertoire.
//!
//! Public functions evaluate each loss in its summed form. The `*_terms`
//! helpers return the value together with its derivatives with respect to the
//! per-example inputs, which the objective chains into the network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{di_gaps, expected_squared_di_with_grad};

/// Probabilities entering a logarithm are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    FairBinary,
    Reject,
    Defer,
    Punt,
    FairPunt,
}

/// Which fairness regularizer the gated losses use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiForm {
    /// Soft DI of the mixture probability (defer) or of the model's predictions
    /// weighted by `1 - gate` (reject).
    #[default]
    SoftMean,
    /// Closed-form expectation of the squared-component DI over the gate (defer only).
    SquaredExpected,
}

/// How the gate enters training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateEstimator {
    /// One relaxed Bernoulli sample per example per epoch.
    #[default]
    Concrete,
    /// Closed-form expectation over `s ~ Ber(pi)`.
    Expected,
}

/// Whether per-example terms are summed or averaged. The regularizer is never scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default)]
    pub alpha_fair: f64,
    /// `gamma_reject`, `gamma_defer`, or the IDK weight of the punting losses.
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub stop_gradient_through_model: bool,
    #[serde(default)]
    pub di_form: DiForm,
    #[serde(default)]
    pub gate_estimator: GateEstimator,
    #[serde(default)]
    pub reduction: Reduction,
    /// Ordinal heads: learn one threshold pair per sensitive group.
    #[serde(default)]
    pub per_group_thresholds: bool,
}

fn default_temperature() -> f64 {
    0.5
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            alpha_fair: 0.0,
            gamma: 0.0,
            temperature: default_temperature(),
            stop_gradient_through_model: false,
            di_form: DiForm::SoftMean,
            gate_estimator: GateEstimator::Concrete,
            reduction: Reduction::Mean,
            per_group_thresholds: false,
        }
    }

    pub fn with_alpha(mut self, alpha_fair: f64) -> Self {
        self.alpha_fair = alpha_fair;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !self.alpha_fair.is_finite() || !self.gamma.is_finite() {
            return Err(Error::NonFinite("loss hyperparameters"));
        }
        if self.di_form == DiForm::SquaredExpected && self.kind != LossKind::Defer {
            return Err(Error::invalid(
                "di_form squared_expected needs DM predictions and is only valid for defer",
            ));
        }
        if self.kind == LossKind::Punt && self.alpha_fair != 0.0 {
            return Err(Error::invalid("punt has no fairness term; use fair_punt"));
        }
        Ok(())
    }

    pub fn is_gated(&self) -> bool {
        matches!(self.kind, LossKind::Reject | LossKind::Defer)
    }
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `1` inside the clamp range, `0` where the clamp is flat.
fn clamp_slope(p: f64) -> f64 {
    if (PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p) {
        1.0
    } else {
        0.0
    }
}

/// Log-probability of label `y` under prediction `p` (clamped).
pub fn log_likelihood(y: u8, p: f64) -> f64 {
    let pc = clamp_prob(p);
    if y == 1 {
        pc.ln()
    } else {
        (1.0 - pc).ln()
    }
}

fn d_log_likelihood(y: u8, p: f64) -> f64 {
    let pc = clamp_prob(p);
    let d = if y == 1 { 1.0 / pc } else { -1.0 / (1.0 - pc) };
    d * clamp_slope(p)
}

/// `sign` with `sign(0) = 0`, the subgradient used for `|x|`.
pub(crate) fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_probs(p: &[f64], what: &'static str) -> Result<()> {
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!("{what} must lie in [0, 1]")));
    }
    Ok(())
}

fn check_len(n: usize, m: usize, context: &'static str) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty("loss batch"));
    }
    if n != m {
        return Err(Error::DimensionMismatch {
            context,
            expected: n,
            actual: m,
        });
    }
    Ok(())
}

pub(crate) fn scale_for(reduction: Reduction, n: usize) -> f64 {
    match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / n as f64,
    }
}

/// Soft DI and `d DI / d p_i`.
pub(crate) fn soft_di_terms(labels: &[u8], sensitive: &[u8], p: &[f64]) -> Result<(f64, Vec<f64>)> {
    let gaps = di_gaps(labels, sensitive, p, None, "soft DI regularizer")?;
    let grad = (0..p.len())
        .map(|i| {
            0.5 * sign0(gaps.gap[labels[i] as usize])
                * gaps.d_gap_d_p(labels[i], sensitive[i], 1.0)
        })
        .collect();
    Ok((gaps.absolute().di, grad))
}

/// Value and gradient of the fair binary loss with respect to `p`.
pub(crate) fn fair_binary_terms(
    labels: &[u8],
    sensitive: &[u8],
    p: &[f64],
    alpha_fair: f64,
    reduction: Reduction,
) -> Result<(f64, Vec<f64>)> {
    let n = labels.len();
    check_len(n, p.len(), "fair binary loss")?;
    let scale = scale_for(reduction, n);
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        value -= scale * log_likelihood(labels[i], p[i]);
        grad[i] = -scale * d_log_likelihood(labels[i], p[i]);
    }
    if alpha_fair != 0.0 {
        let (di, d_di) = soft_di_terms(labels, sensitive, p)?;
        value += alpha_fair * di;
        for (g, d) in grad.iter_mut().zip(d_di) {
            *g += alpha_fair * d;
        }
    }
    Ok((value, grad))
}

/// Negative log-likelihood of `p` plus `alpha_fair` times its soft DI.
pub fn loss_fair_binary(labels: &[u8], sensitive: &[u8], p: &[f64], alpha_fair: f64) -> Result<f64> {
    check_probs(p, "predictions")?;
    Ok(fair_binary_terms(labels, sensitive, p, alpha_fair, Reduction::Sum)?.0)
}

/// Inputs shared by the reject and defer losses.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GatedInputs<'a> {
    pub labels: &'a [u8],
    pub sensitive: &'a [u8],
    pub y_model: &'a [f64],
    /// DM probabilities; required for defer.
    pub y_dm: Option<&'a [f64]>,
    /// Gate values used to mix the branches: `pi` in expectation, relaxed `s` when sampling.
    pub mix: &'a [f64],
    /// Gate probabilities `pi`, used by the squared-expected regularizer.
    pub prob: &'a [f64],
}

#[derive(Debug, Clone)]
pub(crate) struct GatedTerms {
    pub value: f64,
    pub d_model: Vec<f64>,
    pub d_mix: Vec<f64>,
    pub d_prob: Vec<f64>,
}

pub(crate) fn gated_terms(
    kind: LossKind,
    inputs: GatedInputs<'_>,
    gamma: f64,
    alpha_fair: f64,
    di_form: DiForm,
    reduction: Reduction,
) -> Result<GatedTerms> {
    let GatedInputs {
        labels,
        sensitive,
        y_model,
        y_dm,
        mix,
        prob,
    } = inputs;
    let n = labels.len();
    check_len(n, y_model.len(), "gated loss model predictions")?;
    check_len(n, mix.len(), "gated loss gate")?;
    check_len(n, prob.len(), "gated loss gate probabilities")?;
    let dm = match (kind, y_dm) {
        (LossKind::Defer, Some(d)) => {
            check_len(n, d.len(), "gated loss DM predictions")?;
            Some(d)
        }
        (LossKind::Defer, None) => {
            return Err(Error::invalid("defer loss needs DM predictions for every example"))
        }
        (LossKind::Reject, _) => None,
        _ => return Err(Error::invalid("gated loss must be reject or defer")),
    };
    let scale = scale_for(reduction, n);
    let mut value = 0.0;
    let mut d_model = vec![0.0; n];
    let mut d_mix = vec![0.0; n];
    let mut d_prob = vec![0.0; n];
    for i in 0..n {
        let g = mix[i];
        let lm = log_likelihood(labels[i], y_model[i]);
        let pass_reward = match dm {
            Some(d) => log_likelihood(labels[i], d[i]) + gamma,
            None => gamma,
        };
        value -= scale * ((1.0 - g) * lm + g * pass_reward);
        d_model[i] = -scale * (1.0 - g) * d_log_likelihood(labels[i], y_model[i]);
        d_mix[i] = -scale * (pass_reward - lm);
    }
    if alpha_fair != 0.0 {
        match (dm, di_form) {
            (None, DiForm::SoftMean) => {
                let weights: Vec<f64> = mix.iter().map(|g| 1.0 - g).collect();
                let gaps = di_gaps(labels, sensitive, y_model, Some(&weights), "reject regularizer")?;
                value += alpha_fair * gaps.absolute().di;
                for i in 0..n {
                    let (y, a) = (labels[i], sensitive[i]);
                    let s = 0.5 * sign0(gaps.gap[y as usize]);
                    d_model[i] += alpha_fair * s * gaps.d_gap_d_p(y, a, weights[i]);
                    d_mix[i] -= alpha_fair * s * gaps.d_gap_d_w(y, a, y_model[i]);
                }
            }
            (Some(d), DiForm::SoftMean) => {
                let q: Vec<f64> = (0..n).map(|i| (1.0 - mix[i]) * y_model[i] + mix[i] * d[i]).collect();
                let (di, d_q) = soft_di_terms(labels, sensitive, &q)?;
                value += alpha_fair * di;
                for i in 0..n {
                    d_model[i] += alpha_fair * d_q[i] * (1.0 - mix[i]);
                    d_mix[i] += alpha_fair * d_q[i] * (d[i] - y_model[i]);
                }
            }
            (Some(d), DiForm::SquaredExpected) => {
                let e = expected_squared_di_with_grad(labels, sensitive, y_model, d, prob)?;
                value += alpha_fair * e.value;
                for i in 0..n {
                    d_model[i] += alpha_fair * e.d_model[i];
                    d_prob[i] += alpha_fair * e.d_gate[i];
                }
            }
            (None, DiForm::SquaredExpected) => {
                return Err(Error::invalid("squared_expected regularizer is only defined for defer"))
            }
        }
    }
    Ok(GatedTerms {
        value,
        d_model,
        d_mix,
        d_prob,
    })
}

/// Rejection loss in closed form over `s ~ Ber(gate)`:
/// `-sum[(1 - pi) l(Y, yM) + pi * gamma_reject] + alpha * R`, where `R` is the
/// soft DI of the model's predictions weighted by `1 - pi`.
pub fn loss_reject(
    labels: &[u8],
    sensitive: &[u8],
    y_model: &[f64],
    gate: &[f64],
    gamma_reject: f64,
    alpha_fair: f64,
) -> Result<f64> {
    check_probs(gate, "gate")?;
    let inputs = GatedInputs {
        labels,
        sensitive,
        y_model,
        y_dm: None,
        mix: gate,
        prob: gate,
    };
    Ok(gated_terms(LossKind::Reject, inputs, gamma_reject, alpha_fair, DiForm::SoftMean, Reduction::Sum)?.value)
}

/// Learning-to-defer loss in closed form over `s ~ Ber(gate)`:
/// `-sum[(1 - pi) l(Y, yM) + pi l(Y, yD) + pi * gamma_defer] + alpha * R`.
#[allow(clippy::too_many_arguments)]
pub fn loss_defer(
    labels: &[u8],
    sensitive: &[u8],
    y_model: &[f64],
    y_dm: Option<&[f64]>,
    gate: &[f64],
    gamma_defer: f64,
    alpha_fair: f64,
    di_form: DiForm,
) -> Result<f64> {
    check_probs(gate, "gate")?;
    let inputs = GatedInputs {
        labels,
        sensitive,
        y_model,
        y_dm,
        mix: gate,
        prob: gate,
    };
    Ok(gated_terms(LossKind::Defer, inputs, gamma_defer, alpha_fair, di_form, Reduction::Sum)?.value)
}
