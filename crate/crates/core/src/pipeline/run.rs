use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{compose_system, evaluate_system, MetricsRecord, ModelOutputs};
use crate::data::Dataset;
use crate::dm::{
    constant_loss_dm, oracle_dm, train_dm_biased, train_dm_high_accuracy, train_dm_inconsistent, DmModel,
    DmPredictions, DmScenario,
};
use crate::error::{Error, Result};
use crate::models::{
    apply_thresholds, bnn_predict, bnn_train, ordinal_outputs, posthoc_threshold_search, BnnConfig, Decision, DiForm,
    BnnPosterior, GateEstimator, LossKind, LossSpec, PosthocConfig, PosthocData, ThresholdSet,
};
use crate::nn::{sigmoid, train, HeadKind, ModelParams, TrainConfig};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    /// Unregularized classifier that never passes.
    Binary,
    /// DI-regularized classifier that never passes.
    FairBinary,
    /// Learned gate with a constant pass reward.
    Reject,
    /// Learned gate rewarded by the DM's own likelihood.
    Defer,
    /// Fair classifier with two thresholds searched afterwards.
    Posthoc,
    /// Single score with learned thresholds.
    Ordinal,
    /// Weight-uncertain network passing its most uncertain examples.
    Bnn,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Binary => "binary",
            ModelFamily::FairBinary => "fair_binary",
            ModelFamily::Reject => "reject",
            ModelFamily::Defer => "defer",
            ModelFamily::Posthoc => "posthoc",
            ModelFamily::Ordinal => "ordinal",
            ModelFamily::Bnn => "bnn",
        }
    }
}

/// Training knobs shared by every run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySettings {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub batch_size: Option<usize>,
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub temperature: f64,
    pub gate_estimator: GateEstimator,
    pub di_form: DiForm,
    pub stop_gradient_through_model: bool,
    /// Post-hoc search scores the combined system rather than the model alone.
    pub posthoc_dm_aware: bool,
    pub posthoc_candidates: usize,
    pub per_group_thresholds: bool,
    pub bnn_prior_std: f64,
    pub bnn_samples: usize,
}

impl Default for FamilySettings {
    fn default() -> Self {
        let t = TrainConfig::new(0);
        FamilySettings {
            hidden_units: t.hidden_units,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            patience: t.patience,
            max_epochs: t.max_epochs,
            validation_fraction: t.validation_fraction,
            temperature: 0.5,
            gate_estimator: GateEstimator::Concrete,
            di_form: DiForm::SoftMean,
            stop_gradient_through_model: false,
            posthoc_dm_aware: true,
            posthoc_candidates: 1000,
            per_group_thresholds: true,
            bnn_prior_std: 0.1,
            bnn_samples: 10,
        }
    }
}

impl FamilySettings {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden_units: self.hidden_units,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            patience: self.patience,
            max_epochs: self.max_epochs,
            validation_fraction: self.validation_fraction,
            seed,
        }
    }

    fn loss(&self, kind: LossKind, alpha_fair: f64, gamma: f64) -> LossSpec {
        let mut spec = LossSpec::new(kind).with_alpha(alpha_fair).with_gamma(gamma);
        spec.temperature = self.temperature;
        spec.gate_estimator = self.gate_estimator;
        spec.di_form = if kind == LossKind::Defer { self.di_form } else { DiForm::SoftMean };
        spec.stop_gradient_through_model = self.stop_gradient_through_model;
        spec.per_group_thresholds = self.per_group_thresholds;
        spec
    }
}

/// Train and test splits with the DM's outputs on each.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub scenario: DmScenario,
    pub train: Dataset,
    pub test: Dataset,
    pub dm_train: DmPredictions,
    pub dm_test: DmPredictions,
}

impl ExperimentData {
    pub fn new(
        scenario: DmScenario,
        train: Dataset,
        test: Dataset,
        dm_train: DmPredictions,
        dm_test: DmPredictions,
    ) -> Result<Self> {
        train.validate()?;
        test.validate()?;
        let train_ids: HashSet<&str> = train.example_ids.iter().map(String::as_str).collect();
        if let Some(id) = test.example_ids.iter().find(|id| train_ids.contains(id.as_str())) {
            return Err(Error::IdMismatch(format!("example `{id}` is in both train and test")));
        }
        let dm_train = dm_train.aligned_to(&train.example_ids)?;
        let dm_test = dm_test.aligned_to(&test.example_ids)?;
        Ok(ExperimentData {
            scenario,
            train: train.model_view(),
            test: test.model_view(),
            dm_train,
            dm_test,
        })
    }

    /// Metrics of the combined system on the test split.
    pub fn evaluate(&self, outputs: &ModelOutputs) -> Result<MetricsRecord> {
        let sys = compose_system(outputs, &self.dm_test)?;
        evaluate_system(
            &sys,
            &self.test.labels,
            &self.test.sensitive,
            self.test.aux_group.as_deref(),
        )
    }
}

/// Builds the scenario's DM on `train` and returns its predictions on both splits.
///
/// `constant_loss_alpha` is used only by the constant-loss scenario.
pub fn prepare_dm(
    train: &Dataset,
    test: &Dataset,
    scenario: DmScenario,
    config: &TrainConfig,
    flip_probability: f64,
    constant_loss_alpha: f64,
) -> Result<(DmModel, DmPredictions, DmPredictions)> {
    let dm = match scenario {
        DmScenario::HighAccuracy => train_dm_high_accuracy(train, config)?,
        DmScenario::HighlyBiased => train_dm_biased(train, config)?,
        DmScenario::Inconsistent => train_dm_inconsistent(train, config, flip_probability)?,
        DmScenario::Oracle => oracle_dm(),
        DmScenario::ConstantLoss => constant_loss_dm(constant_loss_alpha)?,
    };
    let p_train = dm.predict(train)?;
    let p_test = dm.predict(test)?;
    Ok((dm, p_train, p_test))
}

/// Learned parameters of one model, enough to predict on new examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FittedModel {
    /// A probability head that never passes.
    Classifier { params: ModelParams },
    /// A probability head with a band of scores that pass.
    Banded { params: ModelParams, thresholds: ThresholdSet },
    /// Prediction and gate heads.
    Gated { params: ModelParams },
    /// Single score with thresholds carried in the parameters.
    Ordinal { params: ModelParams },
    /// Passes when the posterior uncertainty exceeds `threshold`.
    Bayesian {
        posterior: BnnPosterior,
        num_samples: usize,
        threshold: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub family: ModelFamily,
    pub alpha_fair: f64,
    pub gamma: f64,
    pub seed: u64,
    pub epochs: usize,
    pub fitted: FittedModel,
}

impl TrainedModel {
    /// Model outputs on `dataset`, which must have the training feature layout.
    pub fn predict(&self, dataset: &Dataset) -> Result<ModelOutputs> {
        let ids = dataset.example_ids.clone();
        let threshold_outputs = |y_model: Vec<f64>, defer: Vec<u8>| ModelOutputs {
            example_ids: ids.clone(),
            y_model,
            gate: defer.iter().map(|&v| f64::from(v)).collect(),
            defer,
        };
        Ok(match &self.fitted {
            FittedModel::Classifier { params } => ModelOutputs::never_defer(ids, sigmoid_column(params, dataset, 0)?),
            FittedModel::Banded { params, thresholds } => {
                let y_model = sigmoid_column(params, dataset, 0)?;
                let defer = y_model
                    .iter()
                    .zip(&dataset.sensitive)
                    .map(|(&s, &a)| Ok(u8::from(apply_thresholds(s, thresholds, a)? == Decision::Pass)))
                    .collect::<Result<Vec<u8>>>()?;
                threshold_outputs(y_model, defer)
            }
            FittedModel::Gated { params } => {
                let cache = params.forward_batch(dataset.features.view())?;
                let y_model = cache.outputs.column(0).iter().map(|&z| sigmoid(z)).collect();
                let gate = cache.outputs.column(1).iter().map(|&z| sigmoid(z)).collect();
                ModelOutputs::from_gate(ids, y_model, gate)
            }
            FittedModel::Ordinal { params } => {
                let thresholds = params
                    .thresholds
                    .as_ref()
                    .ok_or_else(|| Error::invalid("ordinal model has no thresholds"))?;
                let cache = params.forward_batch(dataset.features.view())?;
                let mut y_model = Vec::with_capacity(dataset.len());
                let mut defer = Vec::with_capacity(dataset.len());
                for (i, &a) in dataset.sensitive.iter().enumerate() {
                    let x = cache.outputs[[i, 0]];
                    let (t0, t1) = thresholds.pair_for(a)?;
                    y_model.push(ordinal_outputs(x, t0, t1)?.prob_positive());
                    defer.push(u8::from(apply_thresholds(x, thresholds, a)? == Decision::Pass));
                }
                threshold_outputs(y_model, defer)
            }
            FittedModel::Bayesian {
                posterior,
                num_samples,
                threshold,
                seed,
            } => {
                let preds = bnn_predict(posterior, dataset.features.view(), *num_samples, *seed)?;
                ModelOutputs {
                    example_ids: ids,
                    y_model: preds.iter().map(|p| p.mean).collect(),
                    gate: preds.iter().map(|p| p.uncertainty).collect(),
                    defer: preds.iter().map(|p| u8::from(p.uncertainty > *threshold)).collect(),
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub metrics: MetricsRecord,
    pub outputs: ModelOutputs,
    pub model: TrainedModel,
}

fn sigmoid_column(params: &ModelParams, ds: &Dataset, k: usize) -> Result<Vec<f64>> {
    let cache = params.forward_batch(ds.features.view())?;
    Ok(cache.outputs.column(k).iter().map(|&z| sigmoid(z)).collect())
}

/// Trains one model of `family` on the training split.
pub fn fit_model(
    data: &ExperimentData,
    family: ModelFamily,
    alpha_fair: f64,
    gamma: f64,
    settings: &FamilySettings,
    seed: u64,
) -> Result<TrainedModel> {
    let config = settings.train_config(seed);
    let train_set = &data.train;
    let d = train_set.num_features();
    let mut rng = rng_for(seed, &[0x696e_6974]);
    let base_batch = train_set.batch();

    let (fitted, epochs) = match family {
        ModelFamily::Binary | ModelFamily::FairBinary | ModelFamily::Posthoc => {
            let alpha = if family == ModelFamily::Binary { 0.0 } else { alpha_fair };
            let init = ModelParams::init(d, config.hidden_units, HeadKind::BinaryLogit, false, &mut rng)?;
            let spec = settings.loss(LossKind::FairBinary, alpha, 0.0);
            let (params, hist) = train(init, &spec, &base_batch, &config)?;
            let epochs = hist.train_loss.len();
            if family != ModelFamily::Posthoc {
                (FittedModel::Classifier { params }, epochs)
            } else {
                let rows: Vec<usize> = if hist.validation_indices.is_empty() {
                    (0..train_set.len()).collect()
                } else {
                    hist.validation_indices.clone()
                };
                let sel = train_set.subset(&rows);
                let scores = sigmoid_column(&params, &sel, 0)?;
                let dm_rows: Vec<f64> = rows.iter().map(|&i| data.dm_train.prob[i]).collect();
                let search = PosthocData {
                    scores: &scores,
                    labels: &sel.labels,
                    sensitive: &sel.sensitive,
                    dm_predictions: settings.posthoc_dm_aware.then_some(dm_rows.as_slice()),
                };
                let mut pc = PosthocConfig::new(alpha_fair, gamma, derive_seed(seed, &[0x7068]));
                pc.candidates = settings.posthoc_candidates;
                pc.per_group = settings.per_group_thresholds;
                let found = posthoc_threshold_search(&search, &pc)?;
                (
                    FittedModel::Banded {
                        params,
                        thresholds: found.thresholds,
                    },
                    epochs,
                )
            }
        }
        ModelFamily::Reject | ModelFamily::Defer => {
            let kind = if family == ModelFamily::Reject { LossKind::Reject } else { LossKind::Defer };
            let init = ModelParams::init(d, config.hidden_units, HeadKind::GatedTwoOutput, false, &mut rng)?;
            let spec = settings.loss(kind, alpha_fair, gamma);
            let batch = if kind == LossKind::Defer {
                base_batch.with_dm(&data.dm_train.prob)
            } else {
                base_batch
            };
            let (params, hist) = train(init, &spec, &batch, &config)?;
            (FittedModel::Gated { params }, hist.train_loss.len())
        }
        ModelFamily::Ordinal => {
            let init = ModelParams::init(
                d,
                config.hidden_units,
                HeadKind::OrdinalThreshold,
                settings.per_group_thresholds,
                &mut rng,
            )?;
            let spec = settings.loss(LossKind::FairPunt, alpha_fair, gamma);
            let (params, hist) = train(init, &spec, &base_batch, &config)?;
            (FittedModel::Ordinal { params }, hist.train_loss.len())
        }
        ModelFamily::Bnn => {
            let mut bc = BnnConfig::new(alpha_fair, seed);
            bc.train = config.clone();
            bc.prior_std = settings.bnn_prior_std;
            bc.num_samples = settings.bnn_samples;
            let (posterior, hist) = bnn_train(&base_batch, &bc)?;
            (
                FittedModel::Bayesian {
                    posterior,
                    num_samples: bc.num_samples,
                    threshold: gamma,
                    seed: derive_seed(seed, &[0x6270]),
                },
                hist.train_loss.len(),
            )
        }
    };
    Ok(TrainedModel {
        family,
        alpha_fair,
        gamma,
        seed,
        epochs,
        fitted,
    })
}

/// Trains one model of `family` and evaluates the combined system on the test split.
pub fn run_once(
    data: &ExperimentData,
    family: ModelFamily,
    alpha_fair: f64,
    gamma: f64,
    settings: &FamilySettings,
    seed: u64,
) -> Result<RunOutcome> {
    let model = fit_model(data, family, alpha_fair, gamma, settings, seed)?;
    let outputs = model.predict(&data.test)?;
    let metrics = data.evaluate(&outputs)?;
    Ok(RunOutcome {
        metrics,
        outputs,
        model,
    })
}
