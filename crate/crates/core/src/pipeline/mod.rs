//! Model plus DM composition, evaluation, sweeps and reports.

mod equivalence;
mod report;
mod run;
mod sweep;

pub use equivalence::{oracle_equivalence_experiment, EquivalenceArm, EquivalencePair, EquivalenceReport};
pub use report::{
    deferral_rate_breakdown, read_sweep_csv, sweep_pareto_front, write_sweep_csv, BinFront, ExperimentReport,
    Provenance, ReportBundle, SweepCsvRow,
};
pub use run::{
    fit_model, prepare_dm, run_once, ExperimentData, FamilySettings, FittedModel, ModelFamily, RunOutcome, TrainedModel,
};
pub use sweep::{median_metrics, run_sweep, SweepConfig, SweepPoint};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{binarize, deferral_rates, di_gaps, error_rate, subgroup_accuracies};
use crate::dm::DmPredictions;

/// Model-side outputs for a set of examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutputs {
    pub example_ids: Vec<String>,
    /// The model's own `P(Y = 1)`.
    pub y_model: Vec<f64>,
    /// Gate probability when the model has one; `0` or `1` for threshold rules.
    pub gate: Vec<f64>,
    /// Final pass decision.
    pub defer: Vec<u8>,
}

impl ModelOutputs {
    /// A model that never passes.
    pub fn never_defer(example_ids: Vec<String>, y_model: Vec<f64>) -> Self {
        let n = y_model.len();
        ModelOutputs {
            example_ids,
            y_model,
            gate: vec![0.0; n],
            defer: vec![0; n],
        }
    }

    /// Passes exactly when `gate > 0.5`.
    pub fn from_gate(example_ids: Vec<String>, y_model: Vec<f64>, gate: Vec<f64>) -> Self {
        let defer = gate.iter().map(|&g| u8::from(g > 0.5)).collect();
        ModelOutputs {
            example_ids,
            y_model,
            gate,
            defer,
        }
    }
}

/// One example's route through the two-stage system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemPrediction {
    pub example_id: String,
    pub y_model: f64,
    pub y_dm: f64,
    pub gate: f64,
    pub s: u8,
    /// `(1 - s) * y_model + s * y_dm`.
    pub y_system: f64,
}

pub fn compose_system(model: &ModelOutputs, dm: &DmPredictions) -> Result<Vec<SystemPrediction>> {
    let n = model.example_ids.len();
    for (context, len) in [
        ("model predictions", model.y_model.len()),
        ("model gate", model.gate.len()),
        ("model deferrals", model.defer.len()),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                actual: len,
            });
        }
    }
    dm.check_aligned(&model.example_ids)?;
    Ok((0..n)
        .map(|i| {
            let s = model.defer[i];
            let y_system = if s == 1 { dm.prob[i] } else { model.y_model[i] };
            SystemPrediction {
                example_id: model.example_ids[i].clone(),
                y_model: model.y_model[i],
                y_dm: dm.prob[i],
                gate: model.gate[i],
                s,
                y_system,
            }
        })
        .collect())
}

/// Test-set metrics of a composed system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub error_rate: f64,
    pub di: f64,
    pub di_fp_component: f64,
    pub di_fn_component: f64,
    pub deferral_rate: f64,
    pub deferral_rate_a0: f64,
    pub deferral_rate_a1: f64,
    pub deferral_rate_g0: Option<f64>,
    pub deferral_rate_g1: Option<f64>,
    pub accuracy_a0_g0: Option<f64>,
    pub accuracy_a0_g1: Option<f64>,
    pub accuracy_a1_g0: Option<f64>,
    pub accuracy_a1_g1: Option<f64>,
    pub min_subgroup_accuracy: Option<f64>,
}

impl MetricsRecord {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.error_rate
    }
}

pub fn evaluate_system(
    predictions: &[SystemPrediction],
    labels: &[u8],
    sensitive: &[u8],
    aux_group: Option<&[u8]>,
) -> Result<MetricsRecord> {
    let n = predictions.len();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "evaluation labels",
            expected: n,
            actual: labels.len(),
        });
    }
    let y_sys: Vec<f64> = predictions.iter().map(|p| p.y_system).collect();
    let hard: Vec<f64> = y_sys.iter().map(|&p| f64::from(binarize(p))).collect();
    let deferred: Vec<u8> = predictions.iter().map(|p| p.s).collect();
    let di = di_gaps(labels, sensitive, &hard, None, "system DI")?.absolute();
    let rates = deferral_rates(&deferred, sensitive, aux_group)?;
    let acc = match aux_group {
        Some(g) => Some(subgroup_accuracies(labels, &y_sys, sensitive, g)?),
        None => None,
    };
    let cell = |a: u8, g: u8| acc.as_ref().map(|m| m[&(a, g)]);
    Ok(MetricsRecord {
        error_rate: error_rate(labels, &y_sys)?,
        di: di.di,
        di_fp_component: di.fp,
        di_fn_component: di.fn_,
        deferral_rate: rates.overall,
        deferral_rate_a0: rates.per_group[0],
        deferral_rate_a1: rates.per_group[1],
        deferral_rate_g0: rates.per_aux_group.map(|r| r[0]),
        deferral_rate_g1: rates.per_aux_group.map(|r| r[1]),
        accuracy_a0_g0: cell(0, 0),
        accuracy_a0_g1: cell(0, 1),
        accuracy_a1_g0: cell(1, 0),
        accuracy_a1_g1: cell(1, 1),
        min_subgroup_accuracy: acc.map(|m| m.values().copied().fold(f64::INFINITY, f64::min)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    fn dm(prob: Vec<f64>) -> DmPredictions {
        DmPredictions {
            example_ids: ids(prob.len()),
            hard: prob.iter().map(|&p| binarize(p)).collect(),
            prob,
        }
    }

    #[test]
    fn mixed_gate_selects_elementwise() {
        let model = ModelOutputs::from_gate(
            ids(6),
            vec![0.1, 0.2, 0.3, 0.7, 0.8, 0.9],
            vec![0.0, 0.9, 0.4, 0.51, 0.5, 1.0],
        );
        let sys = compose_system(&model, &dm(vec![0.95, 0.85, 0.75, 0.25, 0.15, 0.05])).unwrap();
        let got: Vec<f64> = sys.iter().map(|p| p.y_system).collect();
        assert_eq!(got, vec![0.1, 0.85, 0.3, 0.25, 0.8, 0.05]);
    }

    #[test]
    fn id_mismatch_is_reported() {
        let model = ModelOutputs::never_defer(ids(2), vec![0.1, 0.2]);
        let mut d = dm(vec![0.3, 0.4]);
        d.example_ids[1] = "x".into();
        assert!(matches!(compose_system(&model, &d), Err(Error::IdMismatch(_))));
    }

    #[test]
    fn always_defer_to_oracle_is_error_free() {
        let y = vec![0u8, 1, 1, 0, 1, 0, 0, 1];
        let a = vec![0u8, 0, 1, 1, 0, 1, 0, 1];
        let oracle: Vec<f64> = y.iter().map(|&v| if v == 1 { 1.0 - 1e-7 } else { 1e-7 }).collect();
        let model = ModelOutputs::from_gate(ids(8), vec![0.5; 8], vec![1.0; 8]);
        let sys = compose_system(&model, &dm(oracle)).unwrap();
        let m = evaluate_system(&sys, &y, &a, None).unwrap();
        assert_eq!(m.error_rate, 0.0);
        assert_eq!(m.di, 0.0);
        assert_eq!(m.deferral_rate, 1.0);
        assert_eq!(m.min_subgroup_accuracy, None);
    }
}
