//! Heritage Health claims: per-member aggregation and preprocessing.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::encode::{FeatureEncoder, RawFeatures, OTHER_LEVEL};
use super::split::{split_indices, SplitSpec, StratifyOn};
use super::table::{ColumnType, CsvSchema, RawTable};
use super::{Dataset, PreparedSplit, SideInfo};
use crate::error::{Error, Result};

pub fn claims_schema() -> CsvSchema {
    CsvSchema::new()
        .required("MemberID", ColumnType::Text)
        .required("Year", ColumnType::Text)
        .optional("Specialty", ColumnType::Text)
        .optional("PlaceSvc", ColumnType::Text)
        .optional("PrimaryConditionGroup", ColumnType::Text)
        .optional("CharlsonIndex", ColumnType::Text)
        .optional("ProcedureGroup", ColumnType::Text)
}

pub fn members_schema() -> CsvSchema {
    CsvSchema::new()
        .required("MemberID", ColumnType::Text)
        .optional("AgeAtFirstClaim", ColumnType::Text)
        .optional("Sex", ColumnType::Text)
}

/// One member's first-year claim summary and second-year outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthRecord {
    pub member_id: String,
    /// Year-1 claim counts keyed `category=value`, plus `claims` for the total.
    pub counts: BTreeMap<String, f64>,
    /// Largest Charlson index over year-2 claims.
    pub charlson_y2: u32,
    pub age_bucket: Option<String>,
    pub sex: Option<String>,
    /// Most frequent year-1 primary condition group (ties go to the smallest name).
    pub primary_condition: String,
}

/// Lower bound of a Charlson field such as `0`, `1-2` or `5+`.
fn parse_charlson(s: &str) -> Option<u32> {
    let head = s.trim().split(['-', '+']).next()?;
    head.trim().parse().ok()
}

/// Lower bound of an age bucket such as `70-79` or `80+`.
fn age_lower_bound(s: &str) -> Option<u32> {
    s.trim().split(['-', '+']).next()?.trim().parse().ok()
}

pub fn aggregate_health_claims(claims: &RawTable, members: &RawTable) -> Result<Vec<HealthRecord>> {
    let member = claims.text("MemberID")?;
    let year = claims.text("Year")?;
    let charlson = claims.text("CharlsonIndex")?;
    let pcg = claims.text("PrimaryConditionGroup")?;
    let categories = [
        ("Specialty", claims.text("Specialty")?),
        ("PlaceSvc", claims.text("PlaceSvc")?),
        ("ProcedureGroup", claims.text("ProcedureGroup")?),
    ];
    #[derive(Default)]
    struct Acc {
        counts: BTreeMap<String, f64>,
        conditions: BTreeMap<String, usize>,
        y2: Option<u32>,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    for i in 0..claims.n_rows() {
        let (Some(id), Some(yr)) = (&member[i], &year[i]) else {
            continue;
        };
        let a = acc.entry(id.clone()).or_default();
        match yr.as_str() {
            "Y1" => {
                *a.counts.entry("claims".into()).or_default() += 1.0;
                for (cat, col) in &categories {
                    if let Some(v) = &col[i] {
                        *a.counts.entry(format!("{cat}={v}")).or_default() += 1.0;
                    }
                }
                if let Some(c) = &pcg[i] {
                    *a.conditions.entry(c.clone()).or_default() += 1;
                }
            }
            "Y2" => {
                if let Some(c) = charlson[i].as_deref().and_then(parse_charlson) {
                    a.y2 = Some(a.y2.map_or(c, |m| m.max(c)));
                }
            }
            _ => {}
        }
    }
    let mids = members.text("MemberID")?;
    let ages = members.text("AgeAtFirstClaim")?;
    let sexes = members.text("Sex")?;
    let info: HashMap<&str, usize> = mids
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.as_deref().map(|m| (m, i)))
        .collect();
    let mut out = Vec::new();
    for (id, a) in acc {
        let Some(y2) = a.y2 else { continue };
        if !a.counts.contains_key("claims") {
            continue;
        }
        let primary = a
            .conditions
            .iter()
            .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0)))
            .map_or_else(|| "missing".to_string(), |(k, _)| k.clone());
        let m = info.get(id.as_str()).copied();
        out.push(HealthRecord {
            counts: a.counts,
            charlson_y2: y2,
            age_bucket: m.and_then(|j| ages[j].clone()),
            sex: m.and_then(|j| sexes[j].clone()),
            primary_condition: primary,
            member_id: id,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty("members with both year-1 claims and a year-2 Charlson index"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthOptions {
    pub test_fraction: f64,
    pub seed: u64,
    pub min_category_count: usize,
}

impl HealthOptions {
    pub fn new(seed: u64) -> Self {
        HealthOptions {
            test_fraction: 0.3,
            seed,
            min_category_count: 10,
        }
    }
}

/// `Y = Charlson > 0`, `A = 1` for members aged 70 or over, side information is
/// the primary condition group, and the auxiliary group marks males.
pub fn preprocess_health(records: &[HealthRecord], options: &HealthOptions) -> Result<PreparedSplit> {
    let labels: Vec<u8> = records.iter().map(|r| u8::from(r.charlson_y2 > 0)).collect();
    let sensitive: Vec<u8> = records
        .iter()
        .map(|r| u8::from(r.age_bucket.as_deref().and_then(age_lower_bound).is_some_and(|a| a >= 70)))
        .collect();
    let spec = SplitSpec::new(1.0 - options.test_fraction, options.seed).stratified(StratifyOn::LabelsAndSensitive);
    let (train_idx, test_idx) = split_indices(&labels, &sensitive, &spec)?;

    let keys: BTreeSet<&str> = train_idx
        .iter()
        .flat_map(|&i| records[i].counts.keys().map(String::as_str))
        .collect();
    let mut feats = RawFeatures::default();
    for key in keys {
        let col = records
            .iter()
            .map(|r| Some(r.counts.get(key).copied().unwrap_or(0.0).ln_1p()))
            .collect();
        feats.continuous.push((key.to_string(), col));
    }
    feats
        .categorical
        .push(("Sex".to_string(), records.iter().map(|r| r.sex.clone()).collect()));
    let encoder = FeatureEncoder::fit(&feats, &train_idx, options.min_category_count)?;

    let cond_raw = RawFeatures {
        continuous: Vec::new(),
        categorical: vec![(
            "PrimaryConditionGroup".to_string(),
            records.iter().map(|r| Some(r.primary_condition.clone())).collect(),
        )],
    };
    let cond = FeatureEncoder::fit(&cond_raw, &train_idx, options.min_category_count)?;
    let levels = cond.categorical[0].levels.clone();
    let other = levels.iter().position(|l| l == OTHER_LEVEL).expect("other level present") as u32;
    let code = |r: &HealthRecord| -> u32 {
        levels
            .iter()
            .position(|l| *l == r.primary_condition)
            .map_or(other, |p| p as u32)
    };

    let build = |idx: &[usize]| -> Result<Dataset> {
        let ds = Dataset {
            example_ids: idx.iter().map(|&i| records[i].member_id.clone()).collect(),
            feature_names: encoder.feature_names(),
            features: encoder.transform(&feats, idx)?,
            labels: idx.iter().map(|&i| labels[i]).collect(),
            sensitive: idx.iter().map(|&i| sensitive[i]).collect(),
            side_info: Some(SideInfo {
                levels: levels.clone(),
                codes: idx.iter().map(|&i| code(&records[i])).collect(),
            }),
            aux_group: Some(
                idx.iter()
                    .map(|&i| u8::from(records[i].sex.as_deref() == Some("M")))
                    .collect(),
            ),
        };
        ds.validate()?;
        Ok(ds)
    };
    Ok(PreparedSplit {
        train: build(&train_idx)?,
        test: build(&test_idx)?,
        encoder,
        raw_rows: records.len(),
        kept_rows: records.len(),
    })
}
