use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bucket for categories unseen (or too rare) in the training split.
pub const OTHER_LEVEL: &str = "other";
/// Category assigned to missing values.
pub const MISSING_LEVEL: &str = "missing";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousEncoding {
    pub name: String,
    /// Train median, used to impute missing values.
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalEncoding {
    pub name: String,
    /// Retained levels; the last one is always [`OTHER_LEVEL`].
    pub levels: Vec<String>,
}

/// Standardization constants and category levels, all fitted on training rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub continuous: Vec<ContinuousEncoding>,
    pub categorical: Vec<CategoricalEncoding>,
}

/// Columns awaiting encoding, all of the same length.
#[derive(Debug, Clone, Default)]
pub(crate) struct RawFeatures {
    pub continuous: Vec<(String, Vec<Option<f64>>)>,
    pub categorical: Vec<(String, Vec<Option<String>>)>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl FeatureEncoder {
    pub(crate) fn fit(raw: &RawFeatures, train: &[usize], min_category_count: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training rows for feature encoding"));
        }
        let mut continuous = Vec::new();
        for (name, col) in &raw.continuous {
            let present: Vec<f64> = train.iter().filter_map(|&i| col[i]).collect();
            if present.is_empty() {
                return Err(Error::invalid(format!("column `{name}` has no training values")));
            }
            let med = median(present);
            let values: Vec<f64> = train.iter().map(|&i| col[i].unwrap_or(med)).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            continuous.push(ContinuousEncoding {
                name: name.clone(),
                median: med,
                mean,
                std,
            });
        }
        let mut categorical = Vec::new();
        for (name, col) in &raw.categorical {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for &i in train {
                *counts.entry(col[i].as_deref().unwrap_or(MISSING_LEVEL)).or_default() += 1;
            }
            let mut levels: Vec<String> = counts
                .into_iter()
                .filter(|&(l, c)| c >= min_category_count.max(1) && l != OTHER_LEVEL)
                .map(|(l, _)| l.to_string())
                .collect();
            levels.push(OTHER_LEVEL.to_string());
            categorical.push(CategoricalEncoding {
                name: name.clone(),
                levels,
            });
        }
        Ok(FeatureEncoder {
            continuous,
            categorical,
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.continuous.iter().map(|c| c.name.clone()).collect();
        for c in &self.categorical {
            names.extend(c.levels.iter().map(|l| format!("{}={l}", c.name)));
        }
        names
    }

    pub fn num_features(&self) -> usize {
        self.continuous.len() + self.categorical.iter().map(|c| c.levels.len()).sum::<usize>()
    }

    pub(crate) fn transform(&self, raw: &RawFeatures, rows: &[usize]) -> Result<Array2<f64>> {
        if raw.continuous.len() != self.continuous.len() || raw.categorical.len() != self.categorical.len() {
            return Err(Error::invalid("raw features do not match the fitted encoder"));
        }
        let mut out = Array2::zeros((rows.len(), self.num_features()));
        for (j, (enc, (_, col))) in self.continuous.iter().zip(&raw.continuous).enumerate() {
            for (r, &i) in rows.iter().enumerate() {
                out[[r, j]] = (col[i].unwrap_or(enc.median) - enc.mean) / enc.std;
            }
        }
        let mut offset = self.continuous.len();
        for (enc, (_, col)) in self.categorical.iter().zip(&raw.categorical) {
            let other = enc.levels.len() - 1;
            for (r, &i) in rows.iter().enumerate() {
                let value = col[i].as_deref().unwrap_or(MISSING_LEVEL);
                let k = enc.levels[..other].iter().position(|l| l == value).unwrap_or(other);
                out[[r, offset + k]] = 1.0;
            }
            offset += enc.levels.len();
        }
        Ok(out)
    }
}
