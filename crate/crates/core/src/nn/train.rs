use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{objective, GateEstimator, LossSpec};
use crate::nn::{AdamState, ModelParams};
use crate::seed::rng_for;

/// A borrowed set of examples.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: ArrayView2<'a, f64>,
    pub labels: &'a [u8],
    pub sensitive: &'a [u8],
    /// DM probabilities, required by the defer loss.
    pub dm_predictions: Option<&'a [f64]>,
}

impl<'a> Batch<'a> {
    pub fn new(features: ArrayView2<'a, f64>, labels: &'a [u8], sensitive: &'a [u8]) -> Self {
        Batch {
            features,
            labels,
            sensitive,
            dm_predictions: None,
        }
    }

    pub fn with_dm(mut self, dm_predictions: &'a [f64]) -> Self {
        self.dm_predictions = Some(dm_predictions);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        let mut lens = vec![
            ("batch features", self.features.nrows()),
            ("batch sensitive", self.sensitive.len()),
        ];
        if let Some(d) = self.dm_predictions {
            lens.push(("batch DM predictions", d.len()));
        }
        for (context, len) in lens {
            if len != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(())
    }
}

/// Owned copy of a subset of a [`Batch`].
#[derive(Debug, Clone)]
pub(crate) struct OwnedBatch {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub sensitive: Vec<u8>,
    pub dm_predictions: Option<Vec<f64>>,
}

impl OwnedBatch {
    pub fn select(batch: &Batch<'_>, idx: &[usize]) -> Self {
        OwnedBatch {
            features: batch.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| batch.labels[i]).collect(),
            sensitive: idx.iter().map(|&i| batch.sensitive[i]).collect(),
            dm_predictions: batch
                .dm_predictions
                .map(|d| idx.iter().map(|&i| d[i]).collect()),
        }
    }

    pub fn view(&self) -> Batch<'_> {
        Batch {
            features: self.features.view(),
            labels: &self.labels,
            sensitive: &self.sensitive,
            dm_predictions: self.dm_predictions.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    /// `None` trains full-batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            hidden_units: 5,
            learning_rate: 1e-2,
            batch_size: None,
            patience: 50,
            max_epochs: 2000,
            validation_fraction: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 {
            return Err(Error::invalid("hidden_units must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must lie in [0, 1)"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Rows of the training input held out for validation.
    pub validation_indices: Vec<usize>,
}

/// Gradient of `loss` at `params`, flattened like [`ModelParams::to_flat`].
pub fn gradient(
    params: &ModelParams,
    loss: &LossSpec,
    batch: &Batch<'_>,
    gate_noise: Option<&[f64]>,
) -> Result<Vec<f64>> {
    Ok(objective(params, loss, batch, gate_noise)?.1)
}

/// Splits rows into (train, validation), stratified on label x sensitive group.
pub(crate) fn stratified_split(
    labels: &[u8],
    sensitive: &[u8],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut cells: [Vec<usize>; 4] = Default::default();
    for i in 0..labels.len() {
        cells[(2 * labels[i] + sensitive[i]) as usize].push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for cell in &mut cells {
        cell.shuffle(rng);
        let mut k = (fraction * cell.len() as f64).round() as usize;
        if fraction > 0.0 && cell.len() >= 2 {
            k = k.clamp(1, cell.len() - 1);
        } else if cell.len() < 2 {
            k = 0;
        }
        val.extend_from_slice(&cell[..k]);
        train.extend_from_slice(&cell[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn label_counts(labels: &[u8]) -> [usize; 2] {
    let mut c = [0; 2];
    for &y in labels {
        c[y as usize] += 1;
    }
    c
}

pub(crate) fn uniform_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12))
        .collect()
}

/// Trains `initial` with ADAM and early stopping on a held-out validation split.
///
/// The validation loss always uses the closed-form gate expectation, so it is
/// deterministic given the parameters.
pub fn train(
    initial: ModelParams,
    loss: &LossSpec,
    data: &Batch<'_>,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainingHistory)> {
    config.validate()?;
    loss.validate()?;
    data.check()?;
    let mut rng = rng_for(config.seed, &[0x7472_6169_6e]);
    let (train_idx, val_idx) =
        stratified_split(data.labels, data.sensitive, config.validation_fraction, &mut rng);
    let train_set = OwnedBatch::select(data, &train_idx);
    let val_set = OwnedBatch::select(data, &val_idx);
    let counts = label_counts(&train_set.labels);
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::DegenerateSplit {
            split: "train",
            reason: format!("label counts {counts:?}"),
        });
    }
    let has_val = !val_idx.is_empty();
    if has_val {
        let vc = label_counts(&val_set.labels);
        if vc.iter().any(|&c| c < 1) {
            return Err(Error::DegenerateSplit {
                split: "validation",
                reason: format!("label counts {vc:?}"),
            });
        }
    }

    let mut params = initial;
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len(), config.learning_rate);
    let sampled = loss.is_gated() && loss.gate_estimator == GateEstimator::Concrete;
    let mut history = TrainingHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        validation_indices: val_idx.clone(),
    };
    let mut best = (f64::INFINITY, params.clone());
    let n_train = train_set.labels.len();
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 0..config.max_epochs {
        let mut epoch_loss = 0.0;
        match config.batch_size {
            None => {
                let noise = sampled.then(|| uniform_noise(n_train, &mut rng));
                let (v, g) = objective(&params, loss, &train_set.view(), noise.as_deref())?;
                if !v.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                adam.step(&mut flat, &g).map_err(|_| Error::Diverged { epoch })?;
                epoch_loss = v;
                params.set_flat(&flat)?;
                project(&mut params, &mut flat)?;
            }
            Some(b) => {
                order.shuffle(&mut rng);
                let mut chunks = 0;
                for chunk in order.chunks(b) {
                    let sub = OwnedBatch::select(&train_set.view(), chunk);
                    let noise = sampled.then(|| uniform_noise(chunk.len(), &mut rng));
                    let (v, g) = match objective(&params, loss, &sub.view(), noise.as_deref()) {
                        Ok(r) => r,
                        // A minibatch missing a DI cell is skipped.
                        Err(Error::UndefinedCell { .. }) => continue,
                        Err(e) => return Err(e),
                    };
                    if !v.is_finite() {
                        return Err(Error::Diverged { epoch });
                    }
                    adam.step(&mut flat, &g).map_err(|_| Error::Diverged { epoch })?;
                    params.set_flat(&flat)?;
                    project(&mut params, &mut flat)?;
                    epoch_loss += v;
                    chunks += 1;
                }
                if chunks > 0 {
                    epoch_loss /= chunks as f64;
                }
            }
        }
        history.train_loss.push(epoch_loss);
        if params.validate().is_err() {
            return Err(Error::Diverged { epoch });
        }
        let monitored = if has_val {
            let (v, _) = objective(&params, loss, &val_set.view(), None)?;
            history.val_loss.push(v);
            v
        } else {
            epoch_loss
        };
        if !monitored.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if monitored < best.0 {
            best = (monitored, params.clone());
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= config.patience {
            history.stopped_early = true;
            break;
        }
    }
    log::debug!(
        "trained {:?}: best epoch {} of {}",
        loss.kind,
        history.best_epoch,
        history.train_loss.len()
    );
    Ok((best.1, history))
}

fn project(params: &mut ModelParams, flat: &mut [f64]) -> Result<()> {
    if let Some(t) = &mut params.thresholds {
        let before = t.clone();
        t.project();
        if *t != before {
            let offset = flat.len() - t.flat_len();
            flat[offset..].copy_from_slice(&t.to_flat());
        }
    }
    Ok(())
}
