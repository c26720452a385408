//! Bayesian network trained by Bayes-by-backprop, with an uncertainty score for rejection.

use ndarray::ArrayView2;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::loss::{LossKind, LossSpec};
use crate::models::objective;
use crate::nn::train::{stratified_split, OwnedBatch};
use crate::nn::{sigmoid, AdamState, Batch, HeadKind, ModelParams, TrainConfig, TrainingHistory};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnnConfig {
    pub prior_std: f64,
    /// Weight samples averaged at prediction time.
    pub num_samples: usize,
    /// Initial `rho`; the posterior std is `softplus(rho)`.
    pub init_rho: f64,
    pub alpha_fair: f64,
    pub train: TrainConfig,
}

impl BnnConfig {
    pub fn new(alpha_fair: f64, seed: u64) -> Self {
        BnnConfig {
            prior_std: 0.1,
            num_samples: 10,
            init_rho: -4.6,
            alpha_fair,
            train: TrainConfig::new(seed),
        }
    }
}

/// Factorized Gaussian posterior over the network weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnPosterior {
    pub mean: ModelParams,
    /// Same layout as `mean.to_flat()`.
    pub rho: Vec<f64>,
}

/// Predictive summary for one example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnnPrediction {
    pub mean: f64,
    pub std: f64,
    /// `sigmoid(log(1 / S))` with `S = |mean - 0.5| / std`; 0 when `std = 0`.
    pub uncertainty: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl BnnPosterior {
    pub fn std(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<(ModelParams, Vec<f64>)> {
        let mu = self.mean.to_flat();
        let eps: Vec<f64> = (0..mu.len()).map(|_| StandardNormal.sample(rng)).collect();
        let w: Vec<f64> = mu
            .iter()
            .zip(&self.rho)
            .zip(&eps)
            .map(|((m, r), e)| m + softplus(*r) * e)
            .collect();
        Ok((self.mean.with_flat(&w)?, eps))
    }
}

/// `KL(q || N(0, prior_std^2))` summed over weights.
pub fn kl_divergence(mean: &[f64], rho: &[f64], prior_std: f64) -> f64 {
    let pv = prior_std * prior_std;
    mean.iter()
        .zip(rho)
        .map(|(&m, &r)| {
            let s = softplus(r);
            (prior_std / s).ln() + (s * s + m * m) / (2.0 * pv) - 0.5
        })
        .sum()
}

/// Uncertainty score from predictive mean and standard deviation.
pub fn uncertainty_score(mean: f64, std: f64) -> f64 {
    if std <= 0.0 {
        return 0.0;
    }
    let s = (mean - 0.5).abs() / std;
    // sigmoid(ln(1/S)) = 1 / (1 + S), which is 1 at S = 0.
    1.0 / (1.0 + s)
}

/// Trains the posterior on `mean CE + alpha * DI + KL / n` with one weight sample per step.
pub fn bnn_train(
    data: &Batch<'_>,
    config: &BnnConfig,
) -> Result<(BnnPosterior, TrainingHistory)> {
    let tc = &config.train;
    tc.validate()?;
    data.check()?;
    if !(config.prior_std > 0.0) || config.num_samples == 0 {
        return Err(Error::invalid("BNN needs a positive prior_std and num_samples"));
    }
    let mut rng = rng_for(tc.seed, &[0x626e_6e]);
    let mean = ModelParams::init(data.features.ncols(), tc.hidden_units, HeadKind::Variational, false, &mut rng)?;
    let (train_idx, val_idx) = stratified_split(data.labels, data.sensitive, tc.validation_fraction, &mut rng);
    let train_set = OwnedBatch::select(data, &train_idx);
    let val_set = OwnedBatch::select(data, &val_idx);
    let spec = LossSpec::new(LossKind::FairBinary).with_alpha(config.alpha_fair);
    let n = train_idx.len() as f64;
    let d = mean.num_params();
    let mut post = BnnPosterior {
        rho: vec![config.init_rho; d],
        mean,
    };
    let mut flat: Vec<f64> = post.mean.to_flat().into_iter().chain(post.rho.iter().copied()).collect();
    let mut adam = AdamState::new(2 * d, tc.learning_rate);
    let pv = config.prior_std * config.prior_std;
    let mut history = TrainingHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        validation_indices: val_idx.clone(),
    };
    let mut best = (f64::INFINITY, post.clone());
    for epoch in 0..tc.max_epochs {
        let (w, eps) = post.sample(&mut rng)?;
        let (data_loss, g_w) = objective(&w, &spec, &train_set.view(), None)?;
        let mu = post.mean.to_flat();
        let kl = kl_divergence(&mu, &post.rho, config.prior_std);
        let total = data_loss + kl / n;
        if !total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let mut grad = vec![0.0; 2 * d];
        for j in 0..d {
            let s = softplus(post.rho[j]);
            grad[j] = g_w[j] + mu[j] / (pv * n);
            let d_sigma = g_w[j] * eps[j] + (-1.0 / s + s / pv) / n;
            grad[d + j] = d_sigma * sigmoid(post.rho[j]);
        }
        adam.step(&mut flat, &grad).map_err(|_| Error::Diverged { epoch })?;
        post.mean.set_flat(&flat[..d])?;
        post.rho.copy_from_slice(&flat[d..]);
        history.train_loss.push(total);
        let monitored = if val_idx.is_empty() {
            total
        } else {
            let (v, _) = objective(&post.mean, &spec, &val_set.view(), None)?;
            history.val_loss.push(v);
            v
        };
        if !monitored.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if monitored < best.0 {
            best = (monitored, post.clone());
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= tc.patience {
            history.stopped_early = true;
            break;
        }
    }
    Ok((best.1, history))
}

/// Predictive mean, std and uncertainty from `num_samples` weight draws.
pub fn bnn_predict(
    posterior: &BnnPosterior,
    features: ArrayView2<'_, f64>,
    num_samples: usize,
    seed: u64,
) -> Result<Vec<BnnPrediction>> {
    if num_samples == 0 {
        return Err(Error::invalid("num_samples must be positive"));
    }
    posterior.mean.validate()?;
    let mut rng = rng_for(seed, &[0x7072_6564]);
    let n = features.nrows();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for _ in 0..num_samples {
        let (w, _) = posterior.sample(&mut rng)?;
        let cache = w.forward_batch(features)?;
        for i in 0..n {
            let p = sigmoid(cache.outputs[[i, 0]]);
            sum[i] += p;
            sum_sq[i] += p * p;
        }
    }
    let j = num_samples as f64;
    Ok((0..n)
        .map(|i| {
            let mean = sum[i] / j;
            let std = (sum_sq[i] / j - mean * mean).max(0.0).sqrt();
            BnnPrediction {
                mean,
                std,
                uncertainty: uncertainty_score(mean, std),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncertainty_limits() {
        assert_eq!(uncertainty_score(0.9, 0.0), 0.0);
        assert_eq!(uncertainty_score(0.5, 0.1), 1.0);
        assert!((uncertainty_score(0.7, 0.2) - 0.5).abs() < 1e-12);
        assert!(uncertainty_score(0.9, 0.05) < uncertainty_score(0.6, 0.05));
    }

    #[test]
    fn kl_vanishes_at_the_prior() {
        // softplus(rho) = 0.1
        let rho = (0.1f64.exp() - 1.0).ln();
        assert!(kl_divergence(&[0.0, 0.0], &[rho, rho], 0.1).abs() < 1e-12);
        assert!(kl_divergence(&[0.3], &[rho], 0.1) > 0.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
