use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyOn {
    Labels,
    Sensitive,
    LabelsAndSensitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub stratify_on: Option<StratifyOn>,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            train_fraction,
            test_fraction: 1.0 - train_fraction,
            seed,
            stratify_on: None,
        }
    }

    pub fn stratified(mut self, on: StratifyOn) -> Self {
        self.stratify_on = Some(on);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.train_fraction, self.test_fraction);
        if !(a > 0.0 && b > 0.0) || (a + b - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions must be positive and sum to 1, got {a} and {b}"
            )));
        }
        Ok(())
    }
}

/// Row indices of the (train, test) partition, each sorted ascending.
pub fn split_indices(labels: &[u8], sensitive: &[u8], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let n = labels.len();
    if n < 10 {
        return Err(Error::invalid(format!("split needs at least 10 examples, got {n}")));
    }
    if sensitive.len() != n {
        return Err(Error::DimensionMismatch {
            context: "split sensitive",
            expected: n,
            actual: sensitive.len(),
        });
    }
    let key = |i: usize| -> usize {
        match spec.stratify_on {
            None => 0,
            Some(StratifyOn::Labels) => labels[i] as usize,
            Some(StratifyOn::Sensitive) => sensitive[i] as usize,
            Some(StratifyOn::LabelsAndSensitive) => 2 * labels[i] as usize + sensitive[i] as usize,
        }
    };
    let mut strata: [Vec<usize>; 4] = Default::default();
    for i in 0..n {
        strata[key(i)].push(i);
    }
    let mut rng = rng_for(spec.seed, &[0x7370_6c69_74]);
    let mut train = Vec::with_capacity(n);
    let mut test = Vec::with_capacity(n);
    for stratum in &mut strata {
        stratum.shuffle(&mut rng);
        let k = (spec.train_fraction * stratum.len() as f64).round() as usize;
        train.extend_from_slice(&stratum[..k]);
        test.extend_from_slice(&stratum[k..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::DegenerateSplit {
            split: if train.is_empty() { "train" } else { "test" },
            reason: format!("fraction {} of {n} examples leaves it empty", spec.train_fraction),
        });
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Splits a dataset into disjoint (train, test) parts.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    dataset.validate()?;
    let (tr, te) = split_indices(&dataset.labels, &dataset.sensitive, spec)?;
    Ok((dataset.subset(&tr), dataset.subset(&te)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_examples_split_eight_two() {
        let y = [0u8, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let (tr, te) = split_indices(&y, &y, &SplitSpec::new(0.8, 1)).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_partition() {
        let y: Vec<u8> = (0..50).map(|i| (i % 3 == 0) as u8).collect();
        let spec = SplitSpec::new(0.7, 42);
        assert_eq!(split_indices(&y, &y, &spec).unwrap(), split_indices(&y, &y, &spec).unwrap());
    }

    #[test]
    fn bad_fractions_and_small_inputs_error() {
        let y = [0u8; 12];
        let mut spec = SplitSpec::new(0.8, 0);
        spec.test_fraction = 0.3;
        assert!(split_indices(&y, &y, &spec).is_err());
        assert!(split_indices(&y[..9], &y[..9], &SplitSpec::new(0.8, 0)).is_err());
        assert!(split_indices(&y, &y, &SplitSpec::new(0.99, 0)).is_err());
    }
}
