//! Datasets: ingestion, preprocessing, splitting and synthetic generation.

mod compas;
mod encode;
mod health;
mod split;
mod synth;
mod table;

pub use compas::{compas_schema, preprocess_compas, CompasOptions};
pub use encode::{CategoricalEncoding, ContinuousEncoding, FeatureEncoder};
pub use health::{
    aggregate_health_claims, claims_schema, members_schema, preprocess_health, HealthOptions,
    HealthRecord,
};
pub use split::{split, split_indices, SplitSpec, StratifyOn};
pub use synth::{synth_generate, SynthSpec};
pub use table::{load_csv, Column, ColumnSpec, ColumnType, CsvSchema, RawTable};

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Batch;

/// Categorical information only the decision maker sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideInfo {
    pub levels: Vec<String>,
    /// Index into `levels` per example.
    pub codes: Vec<u32>,
}

impl SideInfo {
    /// One indicator column per level.
    pub fn one_hot(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.codes.len(), self.levels.len()));
        for (i, &c) in self.codes.iter().enumerate() {
            out[[i, c as usize]] = 1.0;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub example_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub sensitive: Vec<u8>,
    pub side_info: Option<SideInfo>,
    /// Secondary binary grouping, used for subgroup metrics and DM corruption.
    pub aux_group: Option<Vec<u8>>,
}

/// A train/test pair produced by one preprocessing run, with the fitted encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub encoder: FeatureEncoder,
    /// Rows read before any filtering.
    pub raw_rows: usize,
    /// Rows left after filtering.
    pub kept_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    format: u32,
    feature_names: Vec<String>,
    side_info_levels: Option<Vec<String>>,
    has_aux_group: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoder: Option<FeatureEncoder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

const FEATURES_FILE: &str = "features.csv";
const META_FILE: &str = "meta.json";

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        let mut lens = vec![
            ("example_ids", self.example_ids.len()),
            ("feature rows", self.features.nrows()),
            ("sensitive", self.sensitive.len()),
        ];
        if let Some(s) = &self.side_info {
            lens.push(("side info", s.codes.len()));
            if s.codes.iter().any(|&c| c as usize >= s.levels.len()) {
                return Err(Error::invalid("side info code out of range"));
            }
        }
        if let Some(g) = &self.aux_group {
            lens.push(("aux group", g.len()));
            if g.iter().any(|&v| v > 1) {
                return Err(Error::invalid("aux group must be binary"));
            }
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
        if self.feature_names.len() != self.features.ncols() {
            return Err(Error::DimensionMismatch {
                context: "feature names",
                expected: self.features.ncols(),
                actual: self.feature_names.len(),
            });
        }
        if self.labels.iter().chain(&self.sensitive).any(|&v| v > 1) {
            return Err(Error::invalid("labels and sensitive attribute must be binary"));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(())
    }

    /// Rows `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            example_ids: idx.iter().map(|&i| self.example_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            sensitive: idx.iter().map(|&i| self.sensitive[i]).collect(),
            side_info: self.side_info.as_ref().map(|s| SideInfo {
                levels: s.levels.clone(),
                codes: idx.iter().map(|&i| s.codes[i]).collect(),
            }),
            aux_group: self.aux_group.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect()),
        }
    }

    /// The view a model is trained on: side information is removed.
    pub fn model_view(&self) -> Dataset {
        Dataset {
            side_info: None,
            ..self.clone()
        }
    }

    /// Features with the side information appended as one-hot columns, for the DM.
    pub fn features_with_side_info(&self) -> Result<Array2<f64>> {
        let side = self
            .side_info
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has no side information"))?;
        Ok(concatenate(Axis(1), &[self.features.view(), side.one_hot().view()])
            .expect("row counts agree"))
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch::new(self.features.view(), &self.labels, &self.sensitive)
    }

    fn meta(&self, encoder: Option<&FeatureEncoder>, seed: Option<u64>) -> Meta {
        Meta {
            format: 1,
            feature_names: self.feature_names.clone(),
            side_info_levels: self.side_info.as_ref().map(|s| s.levels.clone()),
            has_aux_group: self.aux_group.is_some(),
            encoder: encoder.cloned(),
            seed,
        }
    }

    /// Row-per-example CSV; floats use the shortest representation that round-trips.
    fn features_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("example_id");
        for name in &self.feature_names {
            out.push(',');
            out.push_str(&csv_field(name));
        }
        out.push_str(",label,sensitive");
        if self.side_info.is_some() {
            out.push_str(",side_info");
        }
        if self.aux_group.is_some() {
            out.push_str(",aux_group");
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&csv_field(&self.example_ids[i]));
            for v in self.features.row(i) {
                let _ = write!(out, ",{v:?}");
            }
            let _ = write!(out, ",{},{}", self.labels[i], self.sensitive[i]);
            if let Some(s) = &self.side_info {
                let _ = write!(out, ",{}", s.codes[i]);
            }
            if let Some(g) = &self.aux_group {
                let _ = write!(out, ",{}", g[i]);
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical serialized form.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.features_csv().as_bytes());
        h.update(serde_json::to_vec(&self.meta(None, None)).expect("meta serializes"));
        hex::encode(h.finalize())
    }

    /// Writes `features.csv` and `meta.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, encoder: Option<&FeatureEncoder>, seed: Option<u64>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let fpath = dir.join(FEATURES_FILE);
        std::fs::write(&fpath, self.features_csv()).map_err(|e| Error::io(&fpath, e))?;
        let mpath = dir.join(META_FILE);
        let meta = serde_json::to_string_pretty(&self.meta(encoder, seed))?;
        std::fs::write(&mpath, meta + "\n").map_err(|e| Error::io(&mpath, e))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let mpath = dir.join(META_FILE);
        let meta: Meta = serde_json::from_str(
            &std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?,
        )?;
        let fpath = dir.join(FEATURES_FILE);
        let file = std::fs::File::open(&fpath).map_err(|e| Error::io(&fpath, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let d = meta.feature_names.len();
        let has_side = meta.side_info_levels.is_some();
        let expected_cols = 1 + d + 2 + usize::from(has_side) + usize::from(meta.has_aux_group);
        let mut ids = Vec::new();
        let mut flat = Vec::new();
        let mut labels = Vec::new();
        let mut sensitive = Vec::new();
        let mut codes = Vec::new();
        let mut aux = Vec::new();
        let bad = |what: &str| Error::invalid(format!("{}: bad {what}", fpath.display()));
        for record in rdr.records() {
            let r = record?;
            if r.len() != expected_cols {
                return Err(Error::DimensionMismatch {
                    context: "dataset row",
                    expected: expected_cols,
                    actual: r.len(),
                });
            }
            ids.push(r[0].to_string());
            for j in 0..d {
                flat.push(r[1 + j].parse::<f64>().map_err(|_| bad("feature value"))?);
            }
            labels.push(r[1 + d].parse::<u8>().map_err(|_| bad("label"))?);
            sensitive.push(r[2 + d].parse::<u8>().map_err(|_| bad("sensitive value"))?);
            let mut k = 3 + d;
            if has_side {
                codes.push(r[k].parse::<u32>().map_err(|_| bad("side info code"))?);
                k += 1;
            }
            if meta.has_aux_group {
                aux.push(r[k].parse::<u8>().map_err(|_| bad("aux group"))?);
            }
        }
        let n = labels.len();
        let ds = Dataset {
            example_ids: ids,
            feature_names: meta.feature_names,
            features: Array2::from_shape_vec((n, d), flat).expect("row-major shape"),
            labels,
            sensitive,
            side_info: meta.side_info_levels.map(|levels| SideInfo { levels, codes }),
            aux_group: meta.has_aux_group.then_some(aux),
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl PreparedSplit {
    pub fn save(&self, dir: impl AsRef<Path>, seed: Option<u64>) -> Result<()> {
        let dir = dir.as_ref();
        self.train.save(dir.join("train"), Some(&self.encoder), seed)?;
        self.test.save(dir.join("test"), Some(&self.encoder), seed)
    }
}

/// SHA-256 over the content hashes of a train/test pair.
pub fn split_hash(train: &Dataset, test: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(train.content_hash().as_bytes());
    h.update(test.content_hash().as_bytes());
    hex::encode(h.finalize())
}

/// Loads the `train` and `test` datasets written by [`PreparedSplit::save`].
pub fn load_split(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    Ok((Dataset::load(dir.join("train"))?, Dataset::load(dir.join("test"))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> Dataset {
        Dataset {
            example_ids: vec!["a".into(), "b,c".into(), "d".into()],
            feature_names: vec!["x".into(), "y".into()],
            features: array![[0.1, 1.0 / 3.0], [-2.5e-300, 7.0], [1e20, -0.0]],
            labels: vec![0, 1, 1],
            sensitive: vec![1, 0, 1],
            side_info: Some(SideInfo {
                levels: vec!["p".into(), "q".into()],
                codes: vec![1, 0, 1],
            }),
            aux_group: Some(vec![0, 0, 1]),
        }
    }

    #[test]
    fn save_and_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        ds.save(dir.path(), None, Some(4)).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in ds.features.iter().zip(back.features.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.content_hash(), ds.content_hash());
    }

    #[test]
    fn model_view_strips_side_info() {
        let ds = tiny();
        assert!(ds.model_view().side_info.is_none());
        let with = ds.features_with_side_info().unwrap();
        assert_eq!(with.ncols(), 4);
        assert_eq!(with.row(0).to_vec()[2..], [0.0, 1.0]);
    }

    #[test]
    fn validation_rejects_non_binary_labels() {
        let mut ds = tiny();
        ds.labels[0] = 2;
        assert!(ds.validate().is_err());
    }
}
