//! One function per subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use defer_core::data::{
    aggregate_health_claims, claims_schema, compas_schema, load_csv, load_split, members_schema, preprocess_compas,
    preprocess_health, split, split_hash, synth_generate, CompasOptions, Dataset, HealthOptions, PreparedSplit,
    SplitSpec,
};
use defer_core::dm::{DmModel, DmPredictions};
use defer_core::metrics::{disparate_impact_hard, error_rate};
use defer_core::pipeline::{
    compose_system, deferral_rate_breakdown, evaluate_system, fit_model, prepare_dm, run_sweep, sweep_pareto_front,
    write_sweep_csv, ExperimentData, ExperimentReport, MetricsRecord, Provenance, ReportBundle, SweepConfig,
    SweepCsvRow, TrainedModel,
};
use defer_core::seed::derive_seed;
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_json, write_json, Workspace};
use crate::config::{DatasetConfig, RunConfig};

/// Stream of the DM's training seed under the master seed.
const DM_STREAM: u64 = 0x646d;

struct LoadedData {
    train: Dataset,
    test: Dataset,
    prepared: Option<PreparedSplit>,
    hash: String,
}

fn load_data(cfg: &RunConfig) -> Result<LoadedData> {
    let prepared = match &cfg.dataset {
        DatasetConfig::Synthetic { spec, train_fraction } => {
            let ds = synth_generate(spec, cfg.seed)?;
            let (train, test) = split(&ds, &SplitSpec::new(*train_fraction, cfg.seed))?;
            return Ok(LoadedData {
                hash: split_hash(&train, &test),
                train,
                test,
                prepared: None,
            });
        }
        DatasetConfig::Prepared { path } => {
            let (train, test) =
                load_split(path).with_context(|| format!("loading prepared data from {}", path.display()))?;
            return Ok(LoadedData {
                hash: split_hash(&train, &test),
                train,
                test,
                prepared: None,
            });
        }
        DatasetConfig::Compas {
            path,
            test_fraction,
            min_category_count,
            screening_window_days,
        } => {
            let raw = load_csv(path, &compas_schema())?;
            let options = CompasOptions {
                test_fraction: *test_fraction,
                seed: cfg.seed,
                min_category_count: *min_category_count,
                screening_window_days: *screening_window_days,
            };
            preprocess_compas(&raw, &options)?
        }
        DatasetConfig::Health {
            claims_path,
            members_path,
            test_fraction,
            min_category_count,
        } => {
            let claims = load_csv(claims_path, &claims_schema())?;
            let members = load_csv(members_path, &members_schema())?;
            let records = aggregate_health_claims(&claims, &members)?;
            let options = HealthOptions {
                test_fraction: *test_fraction,
                seed: cfg.seed,
                min_category_count: *min_category_count,
            };
            preprocess_health(&records, &options)?
        }
    };
    Ok(LoadedData {
        hash: split_hash(&prepared.train, &prepared.test),
        train: prepared.train.clone(),
        test: prepared.test.clone(),
        prepared: Some(prepared),
    })
}

const DM_TRAIN_FILE: &str = "train_predictions.csv";
const DM_TEST_FILE: &str = "test_predictions.csv";

/// DM predictions from a `train-dm` directory, or a DM trained now.
fn obtain_dm(cfg: &RunConfig, data: &LoadedData) -> Result<(Option<DmModel>, DmPredictions, DmPredictions)> {
    if let Some(dir) = &cfg.dm.predictions {
        let read = |name: &str| {
            let p = dir.join(name);
            DmPredictions::read_csv(&p).with_context(|| format!("reading DM predictions {}", p.display()))
        };
        return Ok((None, read(DM_TRAIN_FILE)?, read(DM_TEST_FILE)?));
    }
    let train_cfg = cfg.settings.train_config(derive_seed(cfg.seed, &[DM_STREAM]));
    let (dm, p_train, p_test) = prepare_dm(
        &data.train,
        &data.test,
        cfg.dm.scenario,
        &train_cfg,
        cfg.dm.flip_probability,
        cfg.dm.constant_loss_alpha,
    )?;
    Ok((Some(dm), p_train, p_test))
}

fn experiment(cfg: &RunConfig, data: LoadedData) -> Result<(ExperimentData, String)> {
    let (_, dm_train, dm_test) = obtain_dm(cfg, &data)?;
    let exp = ExperimentData::new(cfg.dm.scenario, data.train, data.test, dm_train, dm_test)?;
    Ok((exp, data.hash))
}

fn provenance(cfg: &RunConfig, dataset_hash: String, seeds: Vec<u64>) -> Provenance {
    Provenance::new(dataset_hash, cfg.seed, seeds, cfg.provenance_config())
}

/// An artifact body together with the provenance it was produced under.
#[derive(Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Serialize, Deserialize)]
struct DataManifest {
    train_rows: usize,
    test_rows: usize,
    raw_rows: Option<usize>,
    kept_rows: Option<usize>,
    train_hash: String,
    test_hash: String,
}

pub fn prepare_data(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let data = load_data(cfg)?;
    let dir = ws.dir();
    match &data.prepared {
        Some(p) => p.save(dir, Some(cfg.seed))?,
        None => {
            data.train.save(dir.join("train"), None, Some(cfg.seed))?;
            data.test.save(dir.join("test"), None, Some(cfg.seed))?;
        }
    }
    let manifest = DataManifest {
        train_rows: data.train.len(),
        test_rows: data.test.len(),
        raw_rows: data.prepared.as_ref().map(|p| p.raw_rows),
        kept_rows: data.prepared.as_ref().map(|p| p.kept_rows),
        train_hash: data.train.content_hash(),
        test_hash: data.test.content_hash(),
    };
    println!(
        "prepared {} train and {} test examples in {}",
        manifest.train_rows,
        manifest.test_rows,
        dir.display()
    );
    write_json(
        dir.join("manifest.json"),
        &Stamped {
            provenance: provenance(cfg, data.hash, vec![cfg.seed]),
            body: manifest,
        },
    )
}

#[derive(Serialize, Deserialize)]
struct DmArtifact {
    dm: DmModel,
}

#[derive(Serialize, Deserialize)]
struct DmTestMetrics {
    error_rate: f64,
    di: f64,
}

pub fn train_dm(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    if cfg.dm.predictions.is_some() {
        bail!("train-dm trains a new DM; remove dm.predictions from the config");
    }
    let data = load_data(cfg)?;
    let (dm, p_train, p_test) = obtain_dm(cfg, &data)?;
    let dm = dm.expect("a DM was trained");
    let dir = ws.dir();
    p_train.write_csv(dir.join(DM_TRAIN_FILE))?;
    p_test.write_csv(dir.join(DM_TEST_FILE))?;
    let seed = derive_seed(cfg.seed, &[DM_STREAM]);
    let prov = provenance(cfg, data.hash, vec![seed]);
    let metrics = DmTestMetrics {
        error_rate: error_rate(&data.test.labels, &p_test.prob)?,
        di: disparate_impact_hard(&data.test.labels, &data.test.sensitive, &p_test.hard)?.di,
    };
    println!("DM test error {:.4}, DI {:.4}", metrics.error_rate, metrics.di);
    write_json(
        dir.join("model.json"),
        &Stamped {
            provenance: prov.clone(),
            body: DmArtifact { dm },
        },
    )?;
    write_json(
        dir.join("metrics.json"),
        &Stamped {
            provenance: prov,
            body: metrics,
        },
    )
}

#[derive(Serialize, Deserialize)]
pub struct ModelArtifact {
    pub model: TrainedModel,
}

#[derive(Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub metrics: MetricsRecord,
}

pub fn train(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let (data, hash) = experiment(cfg, load_data(cfg)?)?;
    let m = &cfg.model;
    let model = fit_model(&data, m.family, m.alpha_fair, m.gamma, &cfg.settings, cfg.seed)?;
    let outputs = model.predict(&data.test)?;
    let system = compose_system(&outputs, &data.dm_test)?;
    let metrics = evaluate_system(&system, &data.test.labels, &data.test.sensitive, data.test.aux_group.as_deref())?;
    let dir = ws.dir();
    let mut w = csv::Writer::from_path(dir.join("predictions.csv"))?;
    for row in &system {
        w.serialize(row)?;
    }
    w.flush()?;
    print_metrics(&metrics);
    let prov = provenance(cfg, hash, vec![cfg.seed]);
    write_json(
        dir.join("model.json"),
        &Stamped {
            provenance: prov.clone(),
            body: ModelArtifact { model },
        },
    )?;
    write_json(
        dir.join("metrics.json"),
        &Stamped {
            provenance: prov,
            body: MetricsArtifact { metrics },
        },
    )
}

fn print_metrics(m: &MetricsRecord) {
    println!(
        "error {:.4}  DI {:.4}  deferral {:.4} (A=0 {:.4}, A=1 {:.4})",
        m.error_rate, m.di, m.deferral_rate, m.deferral_rate_a0, m.deferral_rate_a1
    );
}

pub fn evaluate(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let model_path = cfg
        .evaluate
        .model
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("model").join("model.json"));
    let dm_path = cfg
        .evaluate
        .dm_predictions
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("dm").join(DM_TEST_FILE));
    let artifact: Stamped<ModelArtifact> = read_json(&model_path)?;
    let data = load_data(cfg)?;
    let test = data.test.model_view();
    let dm = DmPredictions::read_csv(&dm_path)
        .with_context(|| format!("reading DM predictions {}", dm_path.display()))?
        .aligned_to(&test.example_ids)?;
    let outputs = artifact.body.model.predict(&test)?;
    let system = compose_system(&outputs, &dm)?;
    let metrics = evaluate_system(&system, &test.labels, &test.sensitive, test.aux_group.as_deref())?;
    print_metrics(&metrics);
    write_json(
        ws.dir().join("metrics.json"),
        &Stamped {
            provenance: provenance(cfg, data.hash, vec![artifact.body.model.seed]),
            body: MetricsArtifact { metrics },
        },
    )
}

pub fn sweep(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let (data, hash) = experiment(cfg, load_data(cfg)?)?;
    let sc = SweepConfig {
        family: cfg.model.family,
        alphas: cfg.sweep.alphas.clone(),
        gammas: cfg.sweep.gammas.clone(),
        runs_per_setting: cfg.sweep.runs_per_setting,
        master_seed: cfg.seed,
        jobs: cfg.sweep.jobs,
        settings: cfg.settings.clone(),
    };
    let points = run_sweep(&data, &sc)?;
    let seeds = (0..sc.runs_per_setting).map(|r| sc.run_seed(r)).collect();
    let report = ExperimentReport::new(points, provenance(cfg, hash, seeds))?;
    let dir = ws.dir();
    write_sweep_csv(dir.join("sweep.csv"), &report.points, Some(&report.provenance))?;
    println!(
        "{} settings, {} on the front; wrote {}",
        report.points.len(),
        report.pareto_front.len(),
        dir.display()
    );
    write_json(dir.join("report.json"), &report)
}

fn default_report_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("sweep").join("report.json")
}

/// One point of a sweep placed in a deferral-rate bin.
#[derive(Serialize)]
struct BinRow {
    scenario: String,
    family: String,
    bin_lo: f64,
    bin_hi: f64,
    on_bin_front: bool,
    alpha_fair: f64,
    gamma: f64,
    error: f64,
    di: f64,
    deferral_rate: f64,
    msa: Option<f64>,
}

fn bin_rows(report: &ExperimentReport, edges: &[f64]) -> Result<Vec<BinRow>> {
    let mut rows = Vec::new();
    for bin in deferral_rate_breakdown(&report.points, edges)? {
        for &i in &bin.members {
            let r = SweepCsvRow::from(&report.points[i]);
            rows.push(BinRow {
                scenario: serde_json::to_value(report.scenario)?.as_str().unwrap_or_default().to_string(),
                family: report.model_family.name().to_string(),
                bin_lo: bin.lo,
                bin_hi: bin.hi,
                on_bin_front: bin.front.contains(&i),
                alpha_fair: r.alpha_fair,
                gamma: r.gamma,
                error: r.error,
                di: r.di,
                deferral_rate: r.deferral_rate,
                msa: r.msa,
            });
        }
    }
    Ok(rows)
}

fn write_bin_csv(path: &Path, rows: &[BinRow], prov: &Provenance) -> Result<()> {
    use std::io::Write as _;
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "# provenance {}", serde_json::to_string(prov)?)?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn pareto(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let input = cfg.pareto.input.clone().unwrap_or_else(|| default_report_path(cfg));
    let report: ExperimentReport = read_json(&input)?;
    let front: Vec<_> = sweep_pareto_front(&report.points)
        .into_iter()
        .map(|i| report.points[i].clone())
        .collect();
    let prov = provenance(
        cfg,
        report.provenance.dataset_hash.clone(),
        report.provenance.seeds.clone(),
    );
    let dir = ws.dir();
    write_sweep_csv(dir.join("front.csv"), &front, Some(&prov))?;
    write_bin_csv(&dir.join("bins.csv"), &bin_rows(&report, &cfg.pareto.bins)?, &prov)?;
    println!("{} of {} settings on the front", front.len(), report.points.len());
    Ok(())
}

pub fn report(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let inputs = if cfg.report.inputs.is_empty() {
        vec![default_report_path(cfg)]
    } else {
        cfg.report.inputs.clone()
    };
    let mut bundle = ReportBundle::default();
    for path in &inputs {
        bundle.reports.push(read_json(path)?);
    }
    let mut hashes: Vec<String> = bundle.reports.iter().map(|r| r.provenance.dataset_hash.clone()).collect();
    hashes.dedup();
    let seeds = bundle.reports.iter().flat_map(|r| r.provenance.seeds.iter().copied()).collect();
    let prov = provenance(cfg, hashes.join(","), seeds);
    let mut rows = Vec::new();
    for r in &bundle.reports {
        println!(
            "{:<14} {:<12} {:>3} settings, {:>2} on the front",
            serde_json::to_value(r.scenario)?.as_str().unwrap_or_default(),
            r.model_family.name(),
            r.points.len(),
            r.pareto_front.len()
        );
        rows.extend(bin_rows(r, &cfg.report.bins)?);
    }
    let dir = ws.dir();
    write_bin_csv(&dir.join("curves.csv"), &rows, &prov)?;
    write_json(
        dir.join("report.json"),
        &Stamped {
            provenance: prov,
            body: bundle,
        },
    )
}
