use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::ModelFamily;
use super::sweep::SweepPoint;
use crate::dm::DmScenario;
use crate::error::{Error, Result};
use crate::metrics::pareto_front;

/// Enough to rerun an experiment exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the training and test data the sweep saw.
    pub dataset_hash: String,
    pub code_version: String,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(dataset_hash: String, master_seed: u64, seeds: Vec<u64>, config: serde_json::Value) -> Self {
        Provenance {
            dataset_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            seeds,
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: DmScenario,
    pub model_family: ModelFamily,
    pub points: Vec<SweepPoint>,
    /// Indices into `points` of the non-dominated (error, DI) medians.
    pub pareto_front: Vec<usize>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn new(points: Vec<SweepPoint>, provenance: Provenance) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("report points"))?;
        let (scenario, model_family) = (first.scenario, first.family);
        if points.iter().any(|p| p.scenario != scenario || p.family != model_family) {
            return Err(Error::invalid("a report covers one scenario and one model family"));
        }
        Ok(ExperimentReport {
            scenario,
            model_family,
            pareto_front: sweep_pareto_front(&points),
            points,
            provenance,
        })
    }

    pub fn front_points(&self) -> impl Iterator<Item = &SweepPoint> {
        self.pareto_front.iter().map(|&i| &self.points[i])
    }
}

/// Reports from several scenarios or families, stored together.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub reports: Vec<ExperimentReport>,
}

impl ReportBundle {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

/// Pareto front over `(median error, median DI)`, both minimized.
pub fn sweep_pareto_front(points: &[SweepPoint]) -> Vec<usize> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.median_metrics.error_rate, p.median_metrics.di))
        .collect();
    pareto_front(&xy)
}

/// Points whose median deferral rate falls in `[lo, hi)`, and their front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinFront {
    pub lo: f64,
    pub hi: f64,
    /// Indices into the input points.
    pub members: Vec<usize>,
    /// Indices into the input points.
    pub front: Vec<usize>,
}

/// Splits points by deferral rate and computes a front within each bin.
///
/// `edges` must start at 0, end at 1 and increase strictly. Bins are half-open
/// except the last, which includes 1.
pub fn deferral_rate_breakdown(points: &[SweepPoint], edges: &[f64]) -> Result<Vec<BinFront>> {
    if edges.len() < 2 || edges[0] != 0.0 || *edges.last().unwrap() != 1.0 {
        return Err(Error::invalid("bin edges must start at 0 and end at 1"));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("bin edges must increase strictly"));
    }
    let last = edges.len() - 2;
    Ok(edges
        .windows(2)
        .enumerate()
        .map(|(b, w)| {
            let (lo, hi) = (w[0], w[1]);
            let members: Vec<usize> = (0..points.len())
                .filter(|&i| {
                    let r = points[i].median_metrics.deferral_rate;
                    r >= lo && (r < hi || (b == last && r <= hi))
                })
                .collect();
            let sub: Vec<SweepPoint> = members.iter().map(|&i| points[i].clone()).collect();
            let front = sweep_pareto_front(&sub).into_iter().map(|k| members[k]).collect();
            BinFront { lo, hi, members, front }
        })
        .collect())
}

/// One line of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub alpha_fair: f64,
    pub gamma: f64,
    pub error: f64,
    pub di: f64,
    pub deferral_rate: f64,
    pub deferral_rate_a0: f64,
    pub deferral_rate_a1: f64,
    pub msa: Option<f64>,
}

impl From<&SweepPoint> for SweepCsvRow {
    fn from(p: &SweepPoint) -> Self {
        let m = &p.median_metrics;
        SweepCsvRow {
            alpha_fair: p.alpha_fair,
            gamma: p.gamma,
            error: m.error_rate,
            di: m.di,
            deferral_rate: m.deferral_rate,
            deferral_rate_a0: m.deferral_rate_a0,
            deferral_rate_a1: m.deferral_rate_a1,
            msa: m.min_subgroup_accuracy,
        }
    }
}

/// Writes median metrics per setting, preceded by a `# provenance` comment line when given.
pub fn write_sweep_csv(path: impl AsRef<Path>, points: &[SweepPoint], provenance: Option<&Provenance>) -> Result<()> {
    let path = path.as_ref();
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(p) = provenance {
        writeln!(f, "# provenance {}", serde_json::to_string(p)?).map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(f);
    for p in points {
        w.serialize(SweepCsvRow::from(p))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a sweep CSV, skipping `#` comment lines.
pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepCsvRow>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.starts_with('#') {
            body.push_str(&line);
            body.push('\n');
        }
    }
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::MetricsRecord;

    fn point(err: f64, di: f64, rate: f64) -> SweepPoint {
        let m = MetricsRecord {
            error_rate: err,
            di,
            di_fp_component: di / 2.0,
            di_fn_component: di / 2.0,
            deferral_rate: rate,
            deferral_rate_a0: rate,
            deferral_rate_a1: rate,
            deferral_rate_g0: None,
            deferral_rate_g1: None,
            accuracy_a0_g0: None,
            accuracy_a0_g1: None,
            accuracy_a1_g0: None,
            accuracy_a1_g1: None,
            min_subgroup_accuracy: None,
        };
        SweepPoint {
            family: ModelFamily::Defer,
            scenario: DmScenario::HighAccuracy,
            alpha_fair: err,
            gamma: di,
            run_seeds: vec![1],
            median_metrics: m.clone(),
            per_run_metrics: vec![m],
            failures: vec![],
        }
    }

    #[test]
    fn bins_partition_points() {
        let pts = vec![
            point(0.3, 0.1, 0.0),
            point(0.2, 0.2, 0.1),
            point(0.25, 0.25, 0.15),
            point(0.1, 0.3, 1.0),
            point(0.4, 0.4, 0.5),
        ];
        let bins = deferral_rate_breakdown(&pts, &[0.0, 0.1, 0.5, 1.0]).unwrap();
        assert_eq!(bins[0].members, vec![0]);
        assert_eq!(bins[1].members, vec![1, 2]);
        assert_eq!(bins[1].front, vec![1]);
        assert_eq!(bins[2].members, vec![3, 4]);
        let total: usize = bins.iter().map(|b| b.members.len()).sum();
        assert_eq!(total, pts.len());
        assert!(deferral_rate_breakdown(&pts, &[0.0, 0.5]).is_err());
        assert!(deferral_rate_breakdown(&pts, &[0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn csv_round_trip_skips_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let pts = vec![point(0.3, 0.1, 0.0), point(0.2, 0.2, 0.1)];
        let prov = Provenance::new("abc".into(), 3, vec![1, 2], serde_json::json!({"k": 1}));
        write_sweep_csv(&path, &pts, Some(&prov)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# provenance"));
        assert!(text.contains("alpha_fair,gamma,error,di,deferral_rate,deferral_rate_a0,deferral_rate_a1,msa"));
        let rows = read_sweep_csv(&path).unwrap();
        assert_eq!(rows, pts.iter().map(SweepCsvRow::from).collect::<Vec<_>>());
    }

    #[test]
    fn report_rejects_mixed_families() {
        let mut pts = vec![point(0.3, 0.1, 0.0), point(0.2, 0.2, 0.1)];
        pts[1].family = ModelFamily::Reject;
        let prov = Provenance::new(String::new(), 0, vec![], serde_json::Value::Null);
        assert!(ExperimentReport::new(pts, prov).is_err());
    }
}
