use std::path::{Path, PathBuf};

use handbooster::fixture::{simulate_predictions, write_predictions, ToyFixture};
use handbooster::pipeline::manifest::{read_json, read_jsonl, Manifest, ManifestHeader};
use handbooster::pipeline::{
    run_pipeline, run_stage, snapshot, ConditionEntry, ConditionsHeader, Context, FilterReport, MetricsFile,
    OutputEntry, PipelineConfig, Report, Stage, ValidationReport, CONDITIONS, FILTER, LABELED, METRICS, OUTPUT,
    VALIDATION,
};
use handbooster::pose::Source;
use handbooster::Error;

const SMALL: &str = "\
synthetic_draws = 3
retry_cap = 3
resolution = 64
focal_px = 100.0
";

fn small_fixture(dir: &Path, fx: ToyFixture) -> PathBuf {
    let config = fx.generate().unwrap().write(dir).unwrap();
    let text = std::fs::read_to_string(&config).unwrap();
    std::fs::write(&config, format!("{text}{SMALL}")).unwrap();
    config
}

fn small() -> ToyFixture {
    ToyFixture {
        frames_per_sequence: 12,
        static_frames: 4,
        synthetic_per_object: 4,
        ..ToyFixture::default()
    }
}

#[test]
fn chained_stages_reproduce_a_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_fixture(tmp.path(), small());
    let mut cfg = PipelineConfig::load(&config).unwrap();
    cfg.out = tmp.path().join("whole");
    run_pipeline(cfg.clone()).unwrap();

    cfg.out = tmp.path().join("chained");
    let ctx = Context::load(cfg.clone()).unwrap();
    for stage in Stage::ALL {
        run_stage(&ctx, stage, &cfg.out_dir()).unwrap();
    }
    let a = snapshot(&tmp.path().join("whole")).unwrap();
    let b = snapshot(&tmp.path().join("chained")).unwrap();
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    assert!(a == b);
}

#[test]
fn every_condition_set_traces_back_to_a_record() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_fixture(tmp.path(), small());
    let cfg = PipelineConfig::load(&config).unwrap();
    let report = run_pipeline(cfg.clone()).unwrap();
    let out = cfg.out_dir();

    let labeled = Manifest::read(&out.join(LABELED)).unwrap();
    let (_, accepted): (ManifestHeader, Vec<serde_json::Value>) =
        read_jsonl(&out.join(handbooster::pipeline::ACCEPTED)).unwrap();
    let (_, entries): (ConditionsHeader, Vec<ConditionEntry>) = read_jsonl(&out.join(CONDITIONS)).unwrap();
    let validation: ValidationReport = read_json(&out.join(VALIDATION)).unwrap();

    let real_ids: Vec<String> = labeled.records.iter().map(|r| r.id()).collect();
    let synthetic_ids: Vec<String> = accepted
        .iter()
        .map(|v| format!("{}/{}", v["record"]["sequence_id"].as_str().unwrap(), v["record"]["frame_index"]))
        .collect();
    for e in &entries {
        let pool = if e.source == Source::Real { &real_ids } else { &synthetic_ids };
        assert!(pool.contains(&e.record_id), "orphan condition set {}", e.stem);
        for f in &e.files {
            assert!(out.join(f).is_file(), "{f}");
        }
    }
    // Each tried candidate is either accepted or counted as rejected.
    assert_eq!(validation.accepted + validation.rejected, validation.candidates_tried);
    for id in &synthetic_ids {
        assert!(entries.iter().any(|e| &e.record_id == id), "accepted grasp {id} was not rendered");
    }
    assert_eq!(report.counts.condition_sets, entries.len());
}

#[test]
fn static_objects_yield_no_grasping_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = ToyFixture {
        max_motion_deg: 0.0,
        max_motion_mm: 0.0,
        ..small()
    };
    let config = small_fixture(tmp.path(), fx);
    let cfg = PipelineConfig::load(&config).unwrap();
    let ctx = Context::load(cfg.clone()).unwrap();
    run_stage(&ctx, Stage::Label, &cfg.out_dir()).unwrap();
    let labeled = Manifest::read(&cfg.out_dir().join(LABELED)).unwrap();
    assert_eq!(labeled.records.len(), 4 * 12);
    assert!(labeled.records.iter().all(|r| r.grasping == Some(false)));
}

#[test]
fn empty_synthetic_pool_runs_novel_view_only() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_fixture(tmp.path(), small());
    let empty = Manifest::new(ManifestHeader::new(15, None), Vec::new()).unwrap();
    empty.write(&tmp.path().join("synthetic.jsonl")).unwrap();
    let report = run_pipeline(PipelineConfig::load(&config).unwrap()).unwrap();
    assert!(report.novel_view_only);
    assert_eq!(report.counts.synthetic_accepted, 0);
    assert!(report.counts.condition_sets >= report.counts.real_frames);
    let text = std::fs::read_to_string(tmp.path().join("out/report.txt")).unwrap();
    assert!(text.contains("novel-view-only"));
}

#[test]
fn unvalidatable_pool_skips_objects_with_warnings() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = ToyFixture {
        flawed_fraction: 1.0,
        ..small()
    };
    let config = small_fixture(tmp.path(), fx);
    let report = run_pipeline(PipelineConfig::load(&config).unwrap()).unwrap();
    assert_eq!(report.counts.synthetic_accepted, 0);
    assert_eq!(report.skipped_objects, vec!["ball", "box", "can"]);
    assert!(report.warning_count > 0);
    assert_eq!(report.warning_count, report.warnings.len());
    let rejected: usize = report.rejections.values().sum();
    assert!(rejected >= report.counts.synthetic_rejected);
    assert_eq!(report.counts.candidates_tried, 3 * 3 * 3);
}

#[test]
fn failed_runs_leave_no_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_fixture(tmp.path(), small());
    let mut cfg = PipelineConfig::load(&config).unwrap();
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("keep.txt"), "previous run").unwrap();

    cfg.predictions = Some(tmp.path().join("missing.jsonl"));
    let err = run_pipeline(cfg).unwrap_err();
    assert!(err.to_string().contains("stage `filter`"), "{err}");
    assert!(!err.is_config());
    assert_eq!(std::fs::read_to_string(out.join("keep.txt")).unwrap(), "previous run");
    let leftovers: Vec<_> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains("partial"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn edge_case_filter_drops_outliers_and_metrics_score_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_fixture(tmp.path(), small());
    let cfg = PipelineConfig::load(&config).unwrap();
    run_pipeline(cfg.clone()).unwrap();
    let out = cfg.out_dir();

    let preds = simulate_predictions(&out, 1.0, 5, 11).unwrap();
    let pred_path = tmp.path().join("pred.jsonl");
    write_predictions(&pred_path, &preds).unwrap();
    let mut cfg = cfg;
    cfg.predictions = Some(pred_path);
    let ctx = Context::load(cfg).unwrap();
    run_stage(&ctx, Stage::Filter, &out).unwrap();
    run_stage(&ctx, Stage::Metrics, &out).unwrap();

    let filter: FilterReport = read_json(&out.join(FILTER)).unwrap();
    assert!(!filter.skipped);
    assert_eq!(filter.scored, preds.len());
    assert_eq!(filter.dropped.len(), preds.len() / 5);
    assert!(filter.dropped.iter().all(|d| d.j_pe > 20.0 || d.v_pe > 20.0));
    let (_, output): (ConditionsHeader, Vec<OutputEntry>) = read_jsonl(&out.join(OUTPUT)).unwrap();
    assert_eq!(output.iter().filter(|o| o.kept).count(), filter.kept);

    let metrics: MetricsFile = read_json(&out.join(METRICS)).unwrap();
    let m = metrics.report.unwrap();
    // Uniform noise of ±1 mm per axis keeps root-relative errors small.
    assert!(m.root_relative.j_pe < 40.0);
    assert!(m.procrustes.j_pe <= m.root_relative.j_pe + 1e-9);
}

#[test]
fn errors_name_the_stage_and_record() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_fixture(tmp.path(), small());
    let cfg = PipelineConfig::load(&config).unwrap();
    run_pipeline(cfg.clone()).unwrap();
    let out = cfg.out_dir();
    let mut preds = simulate_predictions(&out, 0.0, 0, 1).unwrap();
    preds[0].joints.pop();
    let pred_path = tmp.path().join("pred.jsonl");
    write_predictions(&pred_path, &preds).unwrap();
    let mut cfg = cfg;
    cfg.predictions = Some(pred_path);
    let ctx = Context::load(cfg).unwrap();
    let err = run_stage(&ctx, Stage::Filter, &out).unwrap_err();
    match &err {
        Error::Stage { stage, record, .. } => {
            assert_eq!(*stage, "filter");
            assert_eq!(record, &preds[0].id);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn missing_assets_and_bad_configs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_fixture(tmp.path(), small());
    std::fs::remove_file(tmp.path().join("assets/can.obj")).unwrap();
    let err = Context::load(PipelineConfig::load(&config).unwrap()).err().unwrap();
    assert!(matches!(err, Error::Lookup(_)), "{err}");

    std::fs::write(&config, "seed = 1\n").unwrap();
    assert!(PipelineConfig::load(&config).unwrap_err().is_config());
}

#[test]
fn report_is_derived_from_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_fixture(tmp.path(), small());
    let cfg = PipelineConfig::load(&config).unwrap();
    let report = run_pipeline(cfg.clone()).unwrap();
    let stored: Report = read_json(&cfg.out_dir().join("report.json")).unwrap();
    assert_eq!(stored, report);
    assert_eq!(report.config_hash, cfg.hash());
    assert_eq!(report.counts.real_frames, 48);
    assert_eq!(report.counts.draw_slots, 9);
}
