use defer_core::data::{split, synth_generate, Dataset, SplitSpec, SynthSpec};
use defer_core::dm::{DmPredictions, DmScenario};
use defer_core::metrics::{binarize, disparate_impact_hard, error_rate};
use defer_core::pipeline::{
    compose_system, deferral_rate_breakdown, evaluate_system, median_metrics, oracle_equivalence_experiment,
    prepare_dm, run_sweep, sweep_pareto_front, ExperimentData, ExperimentReport, FamilySettings, MetricsRecord,
    ModelFamily, ModelOutputs, Provenance, SweepConfig,
};
use defer_core::seed::rng_for;
use rand::Rng;

fn small_split() -> (Dataset, Dataset) {
    let ds = synth_generate(
        &SynthSpec {
            n: 600,
            ..SynthSpec::default()
        },
        90,
    )
    .unwrap();
    split(&ds, &SplitSpec::new(0.7, 90)).unwrap()
}

fn quick_settings() -> FamilySettings {
    FamilySettings {
        max_epochs: 150,
        ..FamilySettings::default()
    }
}

fn experiment(scenario: DmScenario) -> ExperimentData {
    let (train, test) = small_split();
    let cfg = quick_settings().train_config(91);
    let (_, dtr, dte) = prepare_dm(&train, &test, scenario, &cfg, 0.3, -0.2).unwrap();
    ExperimentData::new(scenario, train, test, dtr, dte).unwrap()
}

#[test]
fn one_setting_gives_one_point_with_five_runs() {
    let data = experiment(DmScenario::HighAccuracy);
    let mut cfg = SweepConfig::new(ModelFamily::Defer, vec![0.5], vec![0.1], 3);
    cfg.settings = quick_settings();
    let pts = run_sweep(&data, &cfg).unwrap();
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0].per_run_metrics.len(), 5);
    assert_eq!(pts[0].run_seeds.len(), 5);
    assert!(pts[0].failures.is_empty());
    assert_eq!(run_sweep(&data, &cfg).unwrap(), pts);
}

#[test]
fn never_deferring_reports_the_bare_model() {
    let (_, test) = small_split();
    let mut rng = rng_for(92, &[]);
    let y_model: Vec<f64> = (0..test.len()).map(|_| rng.random::<f64>()).collect();
    let dm = DmPredictions {
        example_ids: test.example_ids.clone(),
        prob: vec![0.9; test.len()],
        hard: vec![1; test.len()],
    };
    let outputs = ModelOutputs::never_defer(test.example_ids.clone(), y_model.clone());
    let sys = compose_system(&outputs, &dm).unwrap();
    let m = evaluate_system(&sys, &test.labels, &test.sensitive, None).unwrap();
    let hard: Vec<u8> = y_model.iter().map(|&p| binarize(p)).collect();
    assert_eq!(m.error_rate, error_rate(&test.labels, &y_model).unwrap());
    assert_eq!(m.di, disparate_impact_hard(&test.labels, &test.sensitive, &hard).unwrap().di);
    assert_eq!(m.deferral_rate, 0.0);
}

fn random_record(rng: &mut impl Rng) -> MetricsRecord {
    let mut r = || rng.random::<f64>();
    MetricsRecord {
        error_rate: r(),
        di: r(),
        di_fp_component: r(),
        di_fn_component: r(),
        deferral_rate: r(),
        deferral_rate_a0: r(),
        deferral_rate_a1: r(),
        deferral_rate_g0: Some(r()),
        deferral_rate_g1: Some(r()),
        accuracy_a0_g0: Some(r()),
        accuracy_a0_g1: Some(r()),
        accuracy_a1_g0: Some(r()),
        accuracy_a1_g1: Some(r()),
        min_subgroup_accuracy: Some(r()),
    }
}

#[test]
fn median_matches_sorting_each_component() {
    let mut rng = rng_for(93, &[]);
    for k in 1..12 {
        let recs: Vec<MetricsRecord> = (0..k).map(|_| random_record(&mut rng)).collect();
        let m = median_metrics(&recs).unwrap();
        let lower_median = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[(v.len() - 1) / 2]
        };
        assert_eq!(m.error_rate, lower_median(recs.iter().map(|r| r.error_rate).collect()));
        assert_eq!(m.di, lower_median(recs.iter().map(|r| r.di).collect()));
        assert_eq!(m.deferral_rate_a1, lower_median(recs.iter().map(|r| r.deferral_rate_a1).collect()));
        assert_eq!(
            m.min_subgroup_accuracy,
            Some(lower_median(recs.iter().map(|r| r.min_subgroup_accuracy.unwrap()).collect()))
        );
    }
}

#[test]
fn breakdown_bins_and_report() {
    let data = experiment(DmScenario::HighAccuracy);
    let mut cfg = SweepConfig::new(ModelFamily::Reject, vec![0.0], vec![-0.1, -0.4, -0.8], 5);
    cfg.settings = quick_settings();
    cfg.runs_per_setting = 3;
    let mut pts = run_sweep(&data, &cfg).unwrap();

    let whole = deferral_rate_breakdown(&pts, &[0.0, 1.0]).unwrap();
    assert_eq!(whole[0].front, sweep_pareto_front(&pts));

    pts[0].median_metrics.deferral_rate = 0.3;
    let bins = deferral_rate_breakdown(&pts, &[0.0, 0.3, 0.7, 1.0]).unwrap();
    assert!(bins[1].members.contains(&0) && !bins[0].members.contains(&0));

    let prov = Provenance::new(data.train.content_hash(), 5, pts[1].run_seeds.clone(), serde_json::json!({}));
    let report = ExperimentReport::new(pts.clone(), prov).unwrap();
    assert_eq!(report.scenario, DmScenario::HighAccuracy);
    assert!(report.front_points().count() >= 1);
    let json = serde_json::to_string(&report).unwrap();
    assert_eq!(serde_json::from_str::<ExperimentReport>(&json).unwrap(), report);
}

#[test]
fn oracle_defer_and_reject_agree_without_regularization() {
    let (train, test) = small_split();
    let cfg = quick_settings().train_config(94);
    let (_, _, dm_test) = prepare_dm(&train, &test, DmScenario::HighAccuracy, &cfg, 0.3, 0.0).unwrap();
    let report =
        oracle_equivalence_experiment(&train, &test, &dm_test, &[(0.0, -0.3), (0.0, -0.6)], &quick_settings(), 3, 95)
            .unwrap();
    assert!(report.max_pretrain_loss_gap < 1e-9);
    for p in &report.pairs {
        assert!(p.error_diff.abs() < 0.02 && p.di_diff.abs() < 0.02);
        assert!(p.deferral_diff.abs() < 0.05);
    }
}
