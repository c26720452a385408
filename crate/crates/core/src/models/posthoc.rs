//! Post-hoc thresholding of a trained binary classifier's scores.

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{binarize, di_gaps};
use crate::models::thresholds::{apply_thresholds, Decision, ThresholdSet};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosthocConfig {
    pub candidates: usize,
    /// Search one band per sensitive group rather than one shared band.
    pub per_group: bool,
    pub alpha_fair: f64,
    /// Cost of one pass; each pass adds `gamma / n`.
    pub gamma: f64,
    pub seed: u64,
}

impl PosthocConfig {
    pub fn new(alpha_fair: f64, gamma: f64, seed: u64) -> Self {
        PosthocConfig {
            candidates: 1000,
            per_group: true,
            alpha_fair,
            gamma,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocResult {
    pub thresholds: ThresholdSet,
    pub objective: f64,
}

/// Inputs to the hard post-hoc objective.
#[derive(Debug, Clone, Copy)]
pub struct PosthocData<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [u8],
    pub sensitive: &'a [u8],
    /// DM probabilities. When present the objective scores the combined system;
    /// otherwise only the model's own non-passed predictions are scored.
    pub dm_predictions: Option<&'a [f64]>,
}

impl PosthocData<'_> {
    fn check(&self) -> Result<()> {
        let n = self.scores.len();
        if n == 0 {
            return Err(Error::Empty("post-hoc scores"));
        }
        let mut lens = vec![("post-hoc labels", self.labels.len()), ("post-hoc sensitive", self.sensitive.len())];
        if let Some(d) = self.dm_predictions {
            lens.push(("post-hoc DM predictions", d.len()));
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
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("post-hoc scores"));
        }
        Ok(())
    }
}

/// Hard objective of one threshold set, normalized by the number of examples.
pub fn posthoc_objective(
    data: &PosthocData<'_>,
    thresholds: &ThresholdSet,
    alpha_fair: f64,
    gamma: f64,
) -> Result<f64> {
    data.check()?;
    let n = data.scores.len();
    let decisions = data
        .scores
        .iter()
        .zip(data.sensitive)
        .map(|(&s, &a)| apply_thresholds(s, thresholds, a))
        .collect::<Result<Vec<_>>>()?;
    let passed = decisions.iter().filter(|&&d| d == Decision::Pass).count() as f64;
    let pass_term = gamma * passed / n as f64;
    match data.dm_predictions {
        Some(dm) => {
            let system: Vec<f64> = decisions
                .iter()
                .zip(dm)
                .map(|(d, &p)| match d {
                    Decision::Predict0 => 0.0,
                    Decision::Predict1 => 1.0,
                    Decision::Pass => f64::from(binarize(p)),
                })
                .collect();
            let wrong = system
                .iter()
                .zip(data.labels)
                .filter(|(&p, &y)| binarize(p) != y)
                .count() as f64;
            let di = if alpha_fair != 0.0 {
                di_gaps(data.labels, data.sensitive, &system, None, "post-hoc system DI")?
                    .absolute()
                    .di
            } else {
                0.0
            };
            Ok(wrong / n as f64 + pass_term + alpha_fair * di)
        }
        None => {
            let wrong = decisions
                .iter()
                .zip(data.labels)
                .filter(|(d, &y)| {
                    matches!((d, y), (Decision::Predict0, 1) | (Decision::Predict1, 0))
                })
                .count() as f64;
            let di = if alpha_fair != 0.0 {
                let pos: Vec<f64> = decisions.iter().map(|&d| f64::from(u8::from(d == Decision::Predict1))).collect();
                let neg: Vec<f64> = decisions.iter().map(|&d| f64::from(u8::from(d == Decision::Predict0))).collect();
                di_gaps(data.labels, data.sensitive, &pos, None, "post-hoc DI of predicted positives")?
                    .absolute()
                    .di
                    + di_gaps(data.labels, data.sensitive, &neg, None, "post-hoc DI of predicted negatives")?
                        .absolute()
                        .di
            } else {
                0.0
            };
            Ok(wrong / n as f64 + pass_term + alpha_fair * di)
        }
    }
}

/// Candidate `(lower, upper)` thresholds for one group: observed scores below and above 0.5.
pub(crate) fn candidate_thresholds(scores: &[f64], sensitive: &[u8], group: Option<u8>) -> (Vec<f64>, Vec<f64>) {
    let mut all = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (&s, &a) in scores.iter().zip(sensitive) {
        if group.is_some_and(|g| g != a) {
            continue;
        }
        all.push(s);
        if s < 0.5 {
            lower.push(s);
        } else if s > 0.5 {
            upper.push(s);
        }
    }
    if all.is_empty() {
        all.push(0.5);
    }
    // An empty side draws from every score of the group instead.
    if lower.is_empty() {
        lower = all.clone();
    }
    if upper.is_empty() {
        upper = all;
    }
    (lower, upper)
}

/// Random search over the empty band plus `config.candidates` threshold
/// combinations drawn from the observed scores. Ties keep the earliest candidate.
pub fn posthoc_threshold_search(data: &PosthocData<'_>, config: &PosthocConfig) -> Result<PosthocResult> {
    data.check()?;
    if config.candidates == 0 {
        return Err(Error::invalid("post-hoc search needs at least one candidate"));
    }
    let groups: Vec<Option<u8>> = if config.per_group { vec![Some(0), Some(1)] } else { vec![None] };
    let pools: Vec<(Vec<f64>, Vec<f64>)> = groups
        .iter()
        .map(|&g| candidate_thresholds(data.scores, data.sensitive, g))
        .collect();
    let mut rng = rng_for(config.seed, &[0x706f_7374]);
    // The empty band at 0.5 is evaluated first, so passing must beat not passing.
    let never = if config.per_group {
        ThresholdSet::per_group(vec![(0.5, 0.5); 2])
    } else {
        ThresholdSet::shared(0.5, 0.5)
    };
    let mut best = PosthocResult {
        objective: posthoc_objective(data, &never, config.alpha_fair, config.gamma)?,
        thresholds: never,
    };
    for _ in 0..config.candidates {
        let pairs: Vec<(f64, f64)> = pools
            .iter()
            .map(|(lo, hi)| {
                let (t0, t1) = (*lo.choose(&mut rng).unwrap(), *hi.choose(&mut rng).unwrap());
                // A crossed draw from the fallback pool collapses to an empty band.
                if t0 > t1 {
                    let m = 0.5 * (t0 + t1);
                    (m, m)
                } else {
                    (t0, t1)
                }
            })
            .collect();
        let set = if config.per_group {
            ThresholdSet::per_group(pairs)
        } else {
            ThresholdSet::shared(pairs[0].0, pairs[0].1)
        };
        let value = posthoc_objective(data, &set, config.alpha_fair, config.gamma)?;
        if value < best.objective {
            best = PosthocResult {
                thresholds: set,
                objective: value,
            };
        }
    }
    Ok(best)
}
