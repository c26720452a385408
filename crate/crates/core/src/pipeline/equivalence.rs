use serde::{Deserialize, Serialize};

use super::run::{ExperimentData, FamilySettings, ModelFamily};
use super::sweep::{run_sweep, SweepConfig, SweepPoint};
use super::MetricsRecord;
use crate::data::Dataset;
use crate::dm::{oracle_dm, oracle_log_likelihood, DmPredictions, DmScenario};
use crate::error::{Error, Result};
use crate::models::{loss_defer, loss_reject, DiForm};
use crate::nn::{sigmoid, HeadKind, ModelParams};
use crate::seed::rng_for;

/// One family's runs at one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceArm {
    pub family: ModelFamily,
    pub gamma: f64,
    pub median_metrics: MetricsRecord,
    pub per_run_metrics: Vec<MetricsRecord>,
}

impl EquivalenceArm {
    fn from_point(p: SweepPoint) -> Self {
        EquivalenceArm {
            family: p.family,
            gamma: p.gamma,
            median_metrics: p.median_metrics,
            per_run_metrics: p.per_run_metrics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalencePair {
    pub alpha_fair: f64,
    pub gamma_reject: f64,
    pub gamma_defer: f64,
    /// `|loss_defer - loss_reject|` of the unregularized losses at the shared initialization.
    pub pretrain_loss_gap: f64,
    pub reject: EquivalenceArm,
    pub defer: EquivalenceArm,
    /// Defer minus reject, on median test metrics.
    pub error_diff: f64,
    pub di_diff: f64,
    pub deferral_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub pairs: Vec<EquivalencePair>,
    pub median_abs_error_diff: f64,
    pub median_abs_di_diff: f64,
    pub median_abs_deferral_diff: f64,
    pub max_pretrain_loss_gap: f64,
}

fn pretrain_gap(train: &Dataset, oracle: &[f64], gamma_reject: f64, gamma_defer: f64, hidden: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, &[0x6571_7576]);
    let params = ModelParams::init(train.num_features(), hidden, HeadKind::GatedTwoOutput, false, &mut rng)?;
    let cache = params.forward_batch(train.features.view())?;
    let y_model: Vec<f64> = cache.outputs.column(0).iter().map(|&z| sigmoid(z)).collect();
    let gate: Vec<f64> = cache.outputs.column(1).iter().map(|&z| sigmoid(z)).collect();
    let r = loss_reject(&train.labels, &train.sensitive, &y_model, &gate, gamma_reject, 0.0)?;
    let d = loss_defer(
        &train.labels,
        &train.sensitive,
        &y_model,
        Some(oracle),
        &gate,
        gamma_defer,
        0.0,
        DiForm::SoftMean,
    )?;
    Ok((d - r).abs())
}

fn lower_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Trains defer models against an oracle DM and reject models at the matching
/// `gamma_defer = gamma_reject - ln(1 - 1e-7)`, with shared seeds, and compares
/// both against `dm_test` on the test split.
///
/// `settings_grid` lists `(alpha_fair, gamma_reject)` pairs.
pub fn oracle_equivalence_experiment(
    train: &Dataset,
    test: &Dataset,
    dm_test: &DmPredictions,
    settings_grid: &[(f64, f64)],
    settings: &FamilySettings,
    runs_per_setting: usize,
    master_seed: u64,
) -> Result<EquivalenceReport> {
    if settings_grid.is_empty() {
        return Err(Error::Empty("equivalence settings"));
    }
    let oracle_train = oracle_dm().predict(train)?;
    let data = ExperimentData::new(DmScenario::Oracle, train.clone(), test.clone(), oracle_train, dm_test.clone())?;
    let ell = oracle_log_likelihood();
    let mut pairs = Vec::with_capacity(settings_grid.len());
    for &(alpha, gamma_reject) in settings_grid {
        let gamma_defer = gamma_reject - ell;
        let arm = |family: ModelFamily, gamma: f64| -> Result<EquivalenceArm> {
            let mut cfg = SweepConfig::new(family, vec![alpha], vec![gamma], master_seed);
            cfg.runs_per_setting = runs_per_setting;
            cfg.settings = settings.clone();
            let mut pts = run_sweep(&data, &cfg)?;
            Ok(EquivalenceArm::from_point(pts.remove(0)))
        };
        let reject = arm(ModelFamily::Reject, gamma_reject)?;
        let defer = arm(ModelFamily::Defer, gamma_defer)?;
        let gap = pretrain_gap(
            &data.train,
            &data.dm_train.prob,
            gamma_reject,
            gamma_defer,
            settings.hidden_units,
            master_seed,
        )?;
        let (dm, rm) = (&defer.median_metrics, &reject.median_metrics);
        pairs.push(EquivalencePair {
            alpha_fair: alpha,
            gamma_reject,
            gamma_defer,
            pretrain_loss_gap: gap,
            error_diff: dm.error_rate - rm.error_rate,
            di_diff: dm.di - rm.di,
            deferral_diff: dm.deferral_rate - rm.deferral_rate,
            reject,
            defer,
        });
    }
    let med = |f: fn(&EquivalencePair) -> f64| lower_median(pairs.iter().map(|p| f(p).abs()).collect());
    Ok(EquivalenceReport {
        median_abs_error_diff: med(|p| p.error_diff),
        median_abs_di_diff: med(|p| p.di_diff),
        median_abs_deferral_diff: med(|p| p.deferral_diff),
        max_pretrain_loss_gap: pairs.iter().map(|p| p.pretrain_loss_gap).fold(0.0, f64::max),
        pairs,
    })
}
