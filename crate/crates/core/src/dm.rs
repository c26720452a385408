//! Simulated downstream decision makers.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::binarize;
use crate::models::{LossKind, LossSpec, PROB_FLOOR};
use crate::nn::{sigmoid, train, Batch, HeadKind, ModelParams, TrainConfig};
use crate::seed::{derive_seed, rng_for};

/// DI coefficient of the biased DM; negative, so disparity is rewarded.
pub const BIASED_DM_ALPHA: f64 = -0.1;
/// Default flip probability of the inconsistent DM.
pub const DEFAULT_FLIP_PROBABILITY: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmScenario {
    HighAccuracy,
    HighlyBiased,
    Inconsistent,
    Oracle,
    ConstantLoss,
}

/// Flips hard DM predictions on the auxiliary group `aux_group == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub flip_probability: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DmSource {
    /// A network over the features with the side information appended.
    Trained { params: ModelParams, alpha_fair: f64 },
    /// Per-example log-likelihood exactly `alpha`.
    ConstantLoss { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmModel {
    pub scenario: DmScenario,
    pub source: DmSource,
    pub corruption: Option<Corruption>,
}

/// Per-example DM outputs aligned with a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmPredictions {
    pub example_ids: Vec<String>,
    /// Probability of `Y = 1`.
    pub prob: Vec<f64>,
    pub hard: Vec<u8>,
}

/// `P(Y = 1)` for which `l(Y, p) = alpha` for both labels.
pub fn constant_loss_predictions(labels: &[u8], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha <= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("constant DM log-likelihood must be <= 0, got {alpha}")));
    }
    let e = alpha.exp();
    Ok(labels
        .iter()
        .map(|&y| if y == 1 { e } else { 1.0 - e })
        .collect())
}

pub fn constant_loss_dm(alpha: f64) -> Result<DmModel> {
    constant_loss_predictions(&[], alpha)?;
    Ok(DmModel {
        scenario: DmScenario::ConstantLoss,
        source: DmSource::ConstantLoss { alpha },
        corruption: None,
    })
}

/// Log-likelihood of a perfect prediction after probability clamping.
pub fn oracle_log_likelihood() -> f64 {
    (1.0 - PROB_FLOOR).ln()
}

/// Predicts the label itself, as sharply as the probability clamp allows.
pub fn oracle_dm() -> DmModel {
    DmModel {
        scenario: DmScenario::Oracle,
        source: DmSource::ConstantLoss {
            alpha: oracle_log_likelihood(),
        },
        corruption: None,
    }
}

/// Trains a DM on the features plus one-hot side information.
pub fn train_dm(dataset: &Dataset, alpha_fair: f64, config: &TrainConfig) -> Result<ModelParams> {
    let x = dataset.features_with_side_info()?;
    let mut rng = rng_for(config.seed, &[0x646d]);
    let init = ModelParams::init(x.ncols(), config.hidden_units, HeadKind::BinaryLogit, false, &mut rng)?;
    let spec = LossSpec::new(LossKind::FairBinary).with_alpha(alpha_fair);
    let batch = Batch::new(x.view(), &dataset.labels, &dataset.sensitive);
    Ok(train(init, &spec, &batch, config)?.0)
}

pub fn train_dm_high_accuracy(dataset: &Dataset, config: &TrainConfig) -> Result<DmModel> {
    Ok(DmModel {
        scenario: DmScenario::HighAccuracy,
        source: DmSource::Trained {
            params: train_dm(dataset, 0.0, config)?,
            alpha_fair: 0.0,
        },
        corruption: None,
    })
}

pub fn train_dm_biased(dataset: &Dataset, config: &TrainConfig) -> Result<DmModel> {
    Ok(DmModel {
        scenario: DmScenario::HighlyBiased,
        source: DmSource::Trained {
            params: train_dm(dataset, BIASED_DM_ALPHA, config)?,
            alpha_fair: BIASED_DM_ALPHA,
        },
        corruption: None,
    })
}

/// A high-accuracy DM whose predictions are flipped on the auxiliary group;
/// a flipped probability `p` becomes `1 - p`.
pub fn train_dm_inconsistent(dataset: &Dataset, config: &TrainConfig, flip_probability: f64) -> Result<DmModel> {
    let mut dm = train_dm_high_accuracy(dataset, config)?;
    dm.scenario = DmScenario::Inconsistent;
    dm.corruption = Some(Corruption {
        flip_probability,
        seed: derive_seed(config.seed, &[0x666c_6970]),
    });
    dm.validate()?;
    Ok(dm)
}

/// Complements each hard prediction in the subgroup (`subgroup[i] == 1`) with
/// probability `flip_probability`.
pub fn corrupt_dm(hard: &[u8], subgroup: &[u8], flip_probability: f64, seed: u64) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&flip_probability) {
        return Err(Error::invalid("flip_probability must lie in [0, 1]"));
    }
    if hard.len() != subgroup.len() {
        return Err(Error::DimensionMismatch {
            context: "corruption subgroup",
            expected: hard.len(),
            actual: subgroup.len(),
        });
    }
    if !subgroup.contains(&1) {
        log::warn!("corruption subgroup is empty; predictions are unchanged");
    }
    let mut rng = rng_for(seed, &[0x636f_7272]);
    Ok(hard
        .iter()
        .zip(subgroup)
        .map(|(&h, &g)| {
            // Draw for every example so the stream does not depend on the subgroup.
            let flip = rng.random_bool(flip_probability);
            if g == 1 && flip {
                1 - h
            } else {
                h
            }
        })
        .collect())
}

fn ids_fingerprint(ids: &[String]) -> u64 {
    ids.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, id| {
        id.bytes()
            .chain(std::iter::once(0xff))
            .fold(h, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
    })
}

impl DmModel {
    pub fn validate(&self) -> Result<()> {
        let corrupted = self.corruption.is_some();
        if corrupted != (self.scenario == DmScenario::Inconsistent) {
            return Err(Error::invalid("corruption is present exactly for the inconsistent scenario"));
        }
        if let Some(c) = &self.corruption {
            if !(0.0..=1.0).contains(&c.flip_probability) {
                return Err(Error::invalid("flip_probability must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// DM outputs on `dataset`. Constant-loss and oracle DMs read the labels;
    /// trained DMs read the features and side information.
    pub fn predict(&self, dataset: &Dataset) -> Result<DmPredictions> {
        self.validate()?;
        let mut prob = match &self.source {
            DmSource::ConstantLoss { alpha } => constant_loss_predictions(&dataset.labels, *alpha)?,
            DmSource::Trained { params, .. } => {
                let x = dataset.features_with_side_info()?;
                let cache = params.forward_batch(x.view())?;
                cache.outputs.column(0).iter().map(|&z| sigmoid(z)).collect()
            }
        };
        let mut hard: Vec<u8> = prob.iter().map(|&p| binarize(p)).collect();
        if let Some(c) = &self.corruption {
            let aux = dataset
                .aux_group
                .as_ref()
                .ok_or_else(|| Error::invalid("inconsistent DM needs an auxiliary group"))?;
            let seed = derive_seed(c.seed, &[ids_fingerprint(&dataset.example_ids)]);
            let flipped = corrupt_dm(&hard, aux, c.flip_probability, seed)?;
            for ((p, h), f) in prob.iter_mut().zip(&mut hard).zip(flipped) {
                if *h != f {
                    *p = 1.0 - *p;
                    *h = f;
                }
            }
        }
        Ok(DmPredictions {
            example_ids: dataset.example_ids.clone(),
            prob,
            hard,
        })
    }
}

impl DmPredictions {
    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    /// Checks that the predictions are aligned with `ids`.
    pub fn check_aligned(&self, ids: &[String]) -> Result<()> {
        if self.example_ids.len() != ids.len() {
            return Err(Error::IdMismatch(format!(
                "{} DM predictions for {} examples",
                self.example_ids.len(),
                ids.len()
            )));
        }
        if let Some(i) = (0..ids.len()).find(|&i| self.example_ids[i] != ids[i]) {
            return Err(Error::IdMismatch(format!(
                "row {i}: DM id `{}` vs example id `{}`",
                self.example_ids[i], ids[i]
            )));
        }
        Ok(())
    }

    /// Reorders the predictions to follow `ids`; every id must be present.
    pub fn aligned_to(&self, ids: &[String]) -> Result<DmPredictions> {
        let pos: std::collections::HashMap<&str, usize> = self
            .example_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut out = DmPredictions {
            example_ids: Vec::with_capacity(ids.len()),
            prob: Vec::with_capacity(ids.len()),
            hard: Vec::with_capacity(ids.len()),
        };
        for id in ids {
            let &i = pos
                .get(id.as_str())
                .ok_or_else(|| Error::IdMismatch(format!("no DM prediction for `{id}`")))?;
            out.example_ids.push(id.clone());
            out.prob.push(self.prob[i]);
            out.hard.push(self.hard[i]);
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("example_id,y_dm_prob,y_dm_hard\n");
        for i in 0..self.len() {
            out.push_str(&format!("{},{:?},{}\n", self.example_ids[i], self.prob[i], self.hard[i]));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<DmPredictions> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["example_id", "y_dm_prob", "y_dm_hard"] {
            return Err(Error::MissingColumn("example_id,y_dm_prob,y_dm_hard".into()));
        }
        let mut out = DmPredictions {
            example_ids: Vec::new(),
            prob: Vec::new(),
            hard: Vec::new(),
        };
        let mut seen = HashSet::new();
        for r in rdr.records() {
            let r = r?;
            let bad = || Error::invalid(format!("{}: malformed DM prediction row", path.display()));
            if !seen.insert(r[0].to_string()) {
                return Err(Error::IdMismatch(format!("duplicate id `{}`", &r[0])));
            }
            out.example_ids.push(r[0].to_string());
            out.prob.push(r[1].parse().map_err(|_| bad())?);
            out.hard.push(r[2].parse().map_err(|_| bad())?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::log_likelihood;

    #[test]
    fn constant_loss_inverts_the_likelihood() {
        let p = constant_loss_predictions(&[1, 0], 0.8f64.ln()).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15 && (p[1] - 0.2).abs() < 1e-15);
        for &y in &[0u8, 1] {
            let q = constant_loss_predictions(&[y], -0.7).unwrap()[0];
            assert!((log_likelihood(y, q) + 0.7).abs() < 1e-12);
        }
        assert_eq!(constant_loss_predictions(&[1, 0], 0.0).unwrap(), vec![1.0, 0.0]);
        assert!(constant_loss_dm(0.1).is_err());
    }

    #[test]
    fn corruption_extremes() {
        let hard = [0u8, 1, 1, 0, 1];
        let sub = [1u8, 1, 0, 1, 0];
        assert_eq!(corrupt_dm(&hard, &sub, 0.0, 3).unwrap(), hard.to_vec());
        assert_eq!(corrupt_dm(&hard, &sub, 1.0, 3).unwrap(), vec![1, 0, 1, 1, 1]);
        assert_eq!(corrupt_dm(&hard, &sub, 0.5, 9).unwrap(), corrupt_dm(&hard, &sub, 0.5, 9).unwrap());
        assert!(corrupt_dm(&hard, &sub, 1.5, 9).is_err());
    }

    #[test]
    fn scenario_and_corruption_must_agree() {
        let mut dm = oracle_dm();
        assert!(dm.validate().is_ok());
        dm.corruption = Some(Corruption {
            flip_probability: 0.3,
            seed: 1,
        });
        assert!(dm.validate().is_err());
    }

    #[test]
    fn csv_roundtrip_and_alignment() {
        let p = DmPredictions {
            example_ids: vec!["a".into(), "b".into()],
            prob: vec![0.1, 2.0 / 3.0],
            hard: vec![0, 1],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dm.csv");
        p.write_csv(&path).unwrap();
        assert_eq!(DmPredictions::read_csv(&path).unwrap(), p);
        let swapped = p.aligned_to(&["b".into(), "a".into()]).unwrap();
        assert_eq!(swapped.hard, vec![1, 0]);
        assert!(p.check_aligned(&["a".into(), "c".into()]).is_err());
        assert!(p.aligned_to(&["z".into()]).is_err());
    }
}
