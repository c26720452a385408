//! ProPublica COMPAS two-year recidivism export.

use serde::{Deserialize, Serialize};

use super::encode::{FeatureEncoder, RawFeatures};
use super::split::{split_indices, SplitSpec, StratifyOn};
use super::table::{ColumnType, CsvSchema, RawTable};
use super::{Dataset, PreparedSplit, SideInfo};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompasOptions {
    pub test_fraction: f64,
    pub seed: u64,
    /// Charge descriptions seen fewer times than this in training fold into "other".
    pub min_category_count: usize,
    /// Window on `days_b_screening_arrest`.
    pub screening_window_days: i64,
}

impl CompasOptions {
    pub fn new(seed: u64) -> Self {
        CompasOptions {
            test_fraction: 0.3,
            seed,
            min_category_count: 10,
            screening_window_days: 30,
        }
    }
}

const CONTINUOUS: [&str; 5] = [
    "age",
    "priors_count",
    "juv_fel_count",
    "juv_misd_count",
    "juv_other_count",
];

const CATEGORICAL: [&str; 3] = ["c_charge_degree", "sex", "c_charge_desc"];

pub fn compas_schema() -> CsvSchema {
    CsvSchema::new()
        .required("id", ColumnType::Int)
        .required("sex", ColumnType::Text)
        .required("age", ColumnType::Int)
        .required("race", ColumnType::Text)
        .required("juv_fel_count", ColumnType::Int)
        .required("juv_misd_count", ColumnType::Int)
        .required("juv_other_count", ColumnType::Int)
        .required("priors_count", ColumnType::Int)
        .optional("days_b_screening_arrest", ColumnType::Int)
        .required("c_charge_degree", ColumnType::Text)
        .optional("c_charge_desc", ColumnType::Text)
        .required("is_recid", ColumnType::Int)
        .required("is_violent_recid", ColumnType::Int)
        .required("two_year_recid", ColumnType::Int)
        .optional("score_text", ColumnType::Text)
}

fn flag(v: Option<i64>, name: &str) -> Result<u8> {
    match v {
        Some(0) => Ok(0),
        Some(1) => Ok(1),
        other => Err(Error::invalid(format!("`{name}` must be 0 or 1, got {other:?}"))),
    }
}

/// Rows kept by the standard ProPublica filter.
fn filter_rows(raw: &RawTable, window: i64) -> Result<Vec<usize>> {
    let days = raw.int("days_b_screening_arrest")?;
    let is_recid = raw.int("is_recid")?;
    let degree = raw.text("c_charge_degree")?;
    let score = raw.text("score_text")?;
    Ok((0..raw.n_rows())
        .filter(|&i| {
            days[i].is_some_and(|d| d.abs() <= window)
                && is_recid[i] != Some(-1)
                && degree[i].as_deref() != Some("O")
                && score[i].as_deref().is_some_and(|s| s != "N/A")
        })
        .collect())
}

/// Filters, splits and encodes a COMPAS table.
///
/// `Y` is two-year recidivism, `A = 1` for African-American defendants, and the
/// DM-only side information is whether the defendant recidivated violently
/// within the two-year window. The auxiliary group marks defendants younger
/// than the mean training age.
pub fn preprocess_compas(raw: &RawTable, options: &CompasOptions) -> Result<PreparedSplit> {
    let rows = filter_rows(raw, options.screening_window_days)?;
    if rows.is_empty() {
        return Err(Error::Empty("COMPAS rows after filtering"));
    }
    let ids = raw.int("id")?;
    let race = raw.text("race")?;
    let two_year = raw.int("two_year_recid")?;
    let violent = raw.int("is_violent_recid")?;
    let mut labels = Vec::with_capacity(rows.len());
    let mut sensitive = Vec::with_capacity(rows.len());
    let mut side = Vec::with_capacity(rows.len());
    for &i in &rows {
        let y = flag(two_year[i], "two_year_recid")?;
        labels.push(y);
        sensitive.push(u8::from(race[i].as_deref() == Some("African-American")));
        side.push(u32::from(flag(violent[i], "is_violent_recid")? & y));
    }

    let sub = raw.select_rows(&rows);
    let mut feats = RawFeatures::default();
    for name in CONTINUOUS {
        let col = sub.int(name)?.iter().map(|v| v.map(|x| x as f64)).collect();
        feats.continuous.push((name.to_string(), col));
    }
    for name in CATEGORICAL {
        feats.categorical.push((name.to_string(), sub.text(name)?.to_vec()));
    }

    let spec = SplitSpec::new(1.0 - options.test_fraction, options.seed).stratified(StratifyOn::LabelsAndSensitive);
    let (train_idx, test_idx) = split_indices(&labels, &sensitive, &spec)?;
    let mut encoder = FeatureEncoder::fit(&feats, &train_idx, 1)?;
    // Only the high-cardinality charge description is thresholded.
    let desc_only = FeatureEncoder::fit(
        &RawFeatures {
            continuous: Vec::new(),
            categorical: vec![feats.categorical[2].clone()],
        },
        &train_idx,
        options.min_category_count,
    )?;
    encoder.categorical[2] = desc_only.categorical[0].clone();

    let ages = sub.int("age")?;
    let mean_age =
        train_idx.iter().map(|&i| ages[i].unwrap_or_default() as f64).sum::<f64>() / train_idx.len() as f64;
    let build = |idx: &[usize]| -> Result<Dataset> {
        let ds = Dataset {
            example_ids: idx.iter().map(|&i| ids[rows[i]].unwrap_or_default().to_string()).collect(),
            feature_names: encoder.feature_names(),
            features: encoder.transform(&feats, idx)?,
            labels: idx.iter().map(|&i| labels[i]).collect(),
            sensitive: idx.iter().map(|&i| sensitive[i]).collect(),
            side_info: Some(SideInfo {
                levels: vec!["0".into(), "1".into()],
                codes: idx.iter().map(|&i| side[i]).collect(),
            }),
            aux_group: Some(
                idx.iter()
                    .map(|&i| u8::from((ages[i].unwrap_or_default() as f64) < mean_age))
                    .collect(),
            ),
        };
        ds.validate()?;
        Ok(ds)
    };
    let train = build(&train_idx)?;
    let test = build(&test_idx)?;
    Ok(PreparedSplit {
        train,
        test,
        encoder,
        raw_rows: raw.n_rows() + raw.dropped_count,
        kept_rows: rows.len(),
    })
}
