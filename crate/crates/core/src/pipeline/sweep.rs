use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{run_once, ExperimentData, FamilySettings, ModelFamily};
use super::MetricsRecord;
use crate::dm::DmScenario;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub family: ModelFamily,
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    #[serde(default = "default_runs")]
    pub runs_per_setting: usize,
    pub master_seed: u64,
    /// Worker threads; `0` uses every core.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub settings: FamilySettings,
}

fn default_runs() -> usize {
    5
}

impl SweepConfig {
    pub fn new(family: ModelFamily, alphas: Vec<f64>, gammas: Vec<f64>, master_seed: u64) -> Self {
        SweepConfig {
            family,
            alphas,
            gammas,
            runs_per_setting: default_runs(),
            master_seed,
            jobs: 0,
            settings: FamilySettings::default(),
        }
    }

    /// `(alpha_fair, gamma)` settings in row-major order.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        self.alphas
            .iter()
            .flat_map(|&a| self.gammas.iter().map(move |&g| (a, g)))
            .collect()
    }

    /// Seed of run `run`; shared by every setting and family so comparisons are matched.
    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.master_seed, &[run as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub family: ModelFamily,
    pub scenario: DmScenario,
    pub alpha_fair: f64,
    pub gamma: f64,
    /// Seeds of the runs that produced `per_run_metrics`, in the same order.
    pub run_seeds: Vec<u64>,
    pub median_metrics: MetricsRecord,
    pub per_run_metrics: Vec<MetricsRecord>,
    /// Error messages of runs that failed even after a retry.
    pub failures: Vec<String>,
}

fn lower_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

fn median_opt(v: Vec<Option<f64>>) -> Option<f64> {
    v.into_iter().collect::<Option<Vec<f64>>>().map(lower_median)
}

/// Componentwise lower median.
pub fn median_metrics(records: &[MetricsRecord]) -> Result<MetricsRecord> {
    if records.is_empty() {
        return Err(Error::Empty("metrics records"));
    }
    let m = |f: fn(&MetricsRecord) -> f64| lower_median(records.iter().map(f).collect());
    let o = |f: fn(&MetricsRecord) -> Option<f64>| median_opt(records.iter().map(f).collect());
    Ok(MetricsRecord {
        error_rate: m(|r| r.error_rate),
        di: m(|r| r.di),
        di_fp_component: m(|r| r.di_fp_component),
        di_fn_component: m(|r| r.di_fn_component),
        deferral_rate: m(|r| r.deferral_rate),
        deferral_rate_a0: m(|r| r.deferral_rate_a0),
        deferral_rate_a1: m(|r| r.deferral_rate_a1),
        deferral_rate_g0: o(|r| r.deferral_rate_g0),
        deferral_rate_g1: o(|r| r.deferral_rate_g1),
        accuracy_a0_g0: o(|r| r.accuracy_a0_g0),
        accuracy_a0_g1: o(|r| r.accuracy_a0_g1),
        accuracy_a1_g0: o(|r| r.accuracy_a1_g0),
        accuracy_a1_g1: o(|r| r.accuracy_a1_g1),
        min_subgroup_accuracy: o(|r| r.min_subgroup_accuracy),
    })
}

type RunResult = std::result::Result<(u64, MetricsRecord), String>;

fn run_with_retry(
    data: &ExperimentData,
    config: &SweepConfig,
    alpha: f64,
    gamma: f64,
    run: usize,
) -> RunResult {
    let seed = config.run_seed(run);
    match run_once(data, config.family, alpha, gamma, &config.settings, seed) {
        Ok(out) => Ok((seed, out.metrics)),
        Err(Error::Diverged { .. }) => {
            let retry = derive_seed(seed, &[1]);
            log::warn!("run {run} at alpha={alpha} gamma={gamma} diverged; retrying");
            run_once(data, config.family, alpha, gamma, &config.settings, retry)
                .map(|out| (retry, out.metrics))
                .map_err(|e| e.to_string())
        }
        Err(e) => Err(e.to_string()),
    }
}

/// Trains `runs_per_setting` models per grid setting and aggregates their test metrics.
///
/// A setting where more than half the runs fail is dropped.
pub fn run_sweep(data: &ExperimentData, config: &SweepConfig) -> Result<Vec<SweepPoint>> {
    let grid = config.grid();
    if grid.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    if config.runs_per_setting == 0 {
        return Err(Error::invalid("runs_per_setting must be positive"));
    }
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|s| (0..config.runs_per_setting).map(move |r| (s, r)))
        .collect();
    let work = || -> Vec<RunResult> {
        tasks
            .par_iter()
            .map(|&(s, r)| run_with_retry(data, config, grid[s].0, grid[s].1, r))
            .collect()
    };
    let results = if config.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(work)
    } else {
        work()
    };
    let mut points = Vec::new();
    let mut first_failure = None;
    for (s, chunk) in results.chunks(config.runs_per_setting).enumerate() {
        let (alpha, gamma) = grid[s];
        let mut seeds = Vec::new();
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for r in chunk {
            match r {
                Ok((seed, m)) => {
                    seeds.push(*seed);
                    runs.push(m.clone());
                }
                Err(e) => failures.push(e.clone()),
            }
        }
        if failures.len() * 2 > config.runs_per_setting {
            log::warn!(
                "dropping setting alpha={alpha} gamma={gamma}: {} of {} runs failed",
                failures.len(),
                config.runs_per_setting
            );
            first_failure.get_or_insert_with(|| failures[0].clone());
            continue;
        }
        points.push(SweepPoint {
            family: config.family,
            scenario: data.scenario,
            alpha_fair: alpha,
            gamma,
            run_seeds: seeds,
            median_metrics: median_metrics(&runs)?,
            per_run_metrics: runs,
            failures,
        });
    }
    if points.is_empty() {
        return Err(Error::invalid(format!(
            "every sweep setting failed; first error: {}",
            first_failure.unwrap_or_default()
        )));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(e: f64) -> MetricsRecord {
        MetricsRecord {
            error_rate: e,
            di: 1.0 - e,
            di_fp_component: e,
            di_fn_component: e,
            deferral_rate: 0.0,
            deferral_rate_a0: 0.0,
            deferral_rate_a1: 0.0,
            deferral_rate_g0: Some(e),
            deferral_rate_g1: None,
            accuracy_a0_g0: None,
            accuracy_a0_g1: None,
            accuracy_a1_g0: None,
            accuracy_a1_g1: None,
            min_subgroup_accuracy: None,
        }
    }

    #[test]
    fn median_of_five_and_lower_median_of_four() {
        let rs: Vec<MetricsRecord> = [0.3, 0.1, 0.5, 0.2, 0.4].iter().map(|&e| record(e)).collect();
        let m = median_metrics(&rs).unwrap();
        assert_eq!(m.error_rate, 0.3);
        assert_eq!(m.di, 0.7);
        assert_eq!(m.deferral_rate_g0, Some(0.3));
        assert_eq!(m.deferral_rate_g1, None);
        let m4 = median_metrics(&rs[..4]).unwrap();
        assert_eq!(m4.error_rate, 0.2);
    }

    #[test]
    fn grid_is_row_major() {
        let c = SweepConfig::new(ModelFamily::Reject, vec![0.0, 1.0], vec![-0.1, -0.2], 1);
        assert_eq!(c.grid(), vec![(0.0, -0.1), (0.0, -0.2), (1.0, -0.1), (1.0, -0.2)]);
        assert_ne!(c.run_seed(0), c.run_seed(1));
    }
}
