//! Training objectives over network parameters, with exact gradients.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::models::loss::{
    clamp_prob, fair_binary_terms, gated_terms, GateEstimator, GatedInputs, LossKind, LossSpec,
    PROB_FLOOR,
};
use crate::models::ordinal::punt_terms;
use crate::nn::{logit, sigmoid, Batch, HeadKind, ModelParams};

/// Relaxed Bernoulli sample `sigmoid((logit(pi) + logit(u)) / tau)`.
///
/// `pi` is clamped away from 0 and 1 and `u` must lie strictly inside `(0, 1)`.
pub fn concrete_sample(pi: f64, temperature: f64, u: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid("uniform noise must lie in (0, 1)"));
    }
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::invalid("gate probability must lie in [0, 1]"));
    }
    Ok(sigmoid((logit(clamp_prob(pi)) + logit(u)) / temperature))
}

/// Head kind a loss needs.
pub fn required_head(kind: LossKind) -> HeadKind {
    match kind {
        LossKind::FairBinary => HeadKind::BinaryLogit,
        LossKind::Reject | LossKind::Defer => HeadKind::GatedTwoOutput,
        LossKind::Punt | LossKind::FairPunt => HeadKind::OrdinalThreshold,
    }
}

fn check_head(params: &ModelParams, spec: &LossSpec) -> Result<()> {
    let need = required_head(spec.kind);
    let ok = params.head_kind == need
        || (need == HeadKind::BinaryLogit && params.head_kind == HeadKind::Variational);
    if !ok {
        return Err(Error::invalid(format!(
            "loss {:?} needs a {:?} head, got {:?}",
            spec.kind, need, params.head_kind
        )));
    }
    Ok(())
}

/// Loss value and its gradient with respect to `params.to_flat()`.
///
/// With `gate_noise` the gated losses use one Concrete sample per example
/// (`u_i = gate_noise[i]`) and the gradient is exact for that relaxed surrogate.
/// Without it the gate enters through its closed-form expectation.
pub fn objective(
    params: &ModelParams,
    spec: &LossSpec,
    batch: &Batch<'_>,
    gate_noise: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    params.validate()?;
    check_head(params, spec)?;
    let n = batch.len();
    batch.check()?;
    let cache = params.forward_batch(batch.features)?;
    let k = params.outputs();
    let mut d_out = Array2::<f64>::zeros((n, k));
    let mut mask = vec![true; k];
    let mut threshold_grad: Vec<f64> = Vec::new();

    let value = match spec.kind {
        LossKind::FairBinary => {
            let p: Vec<f64> = cache.outputs.column(0).iter().map(|&z| sigmoid(z)).collect();
            let (v, dp) =
                fair_binary_terms(batch.labels, batch.sensitive, &p, spec.alpha_fair, spec.reduction)?;
            for i in 0..n {
                d_out[[i, 0]] = dp[i] * p[i] * (1.0 - p[i]);
            }
            v
        }
        LossKind::Reject | LossKind::Defer => {
            let m: Vec<f64> = cache.outputs.column(0).iter().map(|&z| sigmoid(z)).collect();
            let pi: Vec<f64> = cache.outputs.column(1).iter().map(|&z| sigmoid(z)).collect();
            // d mix / d z_gate for each example.
            let (mix, d_mix_dz): (Vec<f64>, Vec<f64>) = match gate_noise {
                Some(u) if spec.gate_estimator == GateEstimator::Concrete => {
                    if u.len() != n {
                        return Err(Error::DimensionMismatch {
                            context: "gate noise",
                            expected: n,
                            actual: u.len(),
                        });
                    }
                    (0..n)
                        .map(|i| {
                            let inside = (PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&pi[i]);
                            let z = if inside { cache.outputs[[i, 1]] } else { logit(clamp_prob(pi[i])) };
                            let s = sigmoid((z + logit(u[i])) / spec.temperature);
                            let slope = if inside { s * (1.0 - s) / spec.temperature } else { 0.0 };
                            (s, slope)
                        })
                        .unzip()
                }
                _ => (pi.clone(), pi.iter().map(|p| p * (1.0 - p)).collect()),
            };
            let inputs = GatedInputs {
                labels: batch.labels,
                sensitive: batch.sensitive,
                y_model: &m,
                y_dm: batch.dm_predictions,
                mix: &mix,
                prob: &pi,
            };
            let t = gated_terms(spec.kind, inputs, spec.gamma, spec.alpha_fair, spec.di_form, spec.reduction)?;
            for i in 0..n {
                d_out[[i, 0]] = t.d_model[i] * m[i] * (1.0 - m[i]);
                d_out[[i, 1]] = t.d_mix[i] * d_mix_dz[i] + t.d_prob[i] * pi[i] * (1.0 - pi[i]);
            }
            mask[1] = !spec.stop_gradient_through_model;
            t.value
        }
        LossKind::Punt | LossKind::FairPunt => {
            let set = params
                .thresholds
                .as_ref()
                .ok_or_else(|| Error::invalid("ordinal head requires thresholds"))?;
            let slots = batch
                .sensitive
                .iter()
                .map(|&a| set.slot(a))
                .collect::<Result<Vec<_>>>()?;
            let pairs: Vec<(f64, f64)> = slots.iter().map(|&s| set.pairs()[s]).collect();
            let scores: Vec<f64> = cache.outputs.column(0).to_vec();
            let alpha = if spec.kind == LossKind::FairPunt { spec.alpha_fair } else { 0.0 };
            let (v, grads) = punt_terms(
                batch.labels,
                batch.sensitive,
                &scores,
                &pairs,
                spec.gamma,
                alpha,
                spec.reduction,
            )?;
            threshold_grad = vec![0.0; set.flat_len()];
            for (i, g) in grads.iter().enumerate() {
                d_out[[i, 0]] = g.dx;
                threshold_grad[2 * slots[i]] += g.dt0;
                threshold_grad[2 * slots[i] + 1] += g.dt1;
            }
            v
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite("loss value"));
    }
    let mut grad = params.backward(batch.features, &cache, d_out.view(), &mask);
    let offset = params.num_network_params();
    grad[offset..].copy_from_slice(&threshold_grad);
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concrete_sample_limits() {
        assert!((concrete_sample(0.5, 0.5, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let lo = concrete_sample(0.0, 0.5, 0.5).unwrap();
        let hi = concrete_sample(1.0, 0.5, 0.5).unwrap();
        assert!(lo < 1e-12 && hi > 1.0 - 1e-12);
        assert!(concrete_sample(0.3, 0.0, 0.5).is_err());
        assert!(concrete_sample(0.3, 0.5, 0.0).is_err());
    }

    #[test]
    fn concrete_sample_sharpens_with_low_temperature() {
        let s = concrete_sample(0.7, 0.05, 0.5).unwrap();
        assert!(s > 0.999);
        let s = concrete_sample(0.3, 0.05, 0.5).unwrap();
        assert!(s < 0.001);
    }
}
