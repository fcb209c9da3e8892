//! Staged pipeline: label → prepare → sample → validate → render → filter
//! → metrics → report.
//!
//! Every stage reads its inputs from the output directory and writes its
//! results back there, so running the stages one at a time produces the
//! same bytes as [`run_pipeline`].

pub mod config;
pub mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::AssetRegistry;
use crate::conditions::{novel_view_jobs, write_condition_set, ConditionSidecar, ConditionVariant};
use crate::error::{Error, Result};
use crate::labeler::label_sequence;
use crate::mesh::MeshGeometry;
use crate::metrics::{edge_case_filter, evaluate, EvalRecord, MetricReport};
use crate::pose::{align_orientation, GraspRecord, Source};
use crate::sampler::{cross_distribution_weights_for, draw, PoseSet};
use crate::skinning::{toy, Rig};
use crate::validator::{validate_grasp, GraspVerdict, Rejection};
use crate::{conditions, seed};

pub use config::PipelineConfig;
use manifest::{read_json, read_jsonl, to_jsonl, write_atomic, write_json, Manifest, ManifestHeader};

pub const LABELED: &str = "labeled.jsonl";
pub const SAMPLING: &str = "sampling.json";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const VALIDATION: &str = "validation.json";
pub const ACCEPTED: &str = "synthetic.jsonl";
pub const CONDITIONS_DIR: &str = "conditions";
pub const CONDITIONS: &str = "conditions.jsonl";
pub const FILTER: &str = "filter.json";
pub const OUTPUT: &str = "output.jsonl";
pub const METRICS: &str = "metrics.json";
pub const METRICS_TABLE: &str = "metrics.txt";
pub const REPORT: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Label,
    Sample,
    Validate,
    Render,
    Filter,
    Metrics,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Label,
        Stage::Sample,
        Stage::Validate,
        Stage::Render,
        Stage::Filter,
        Stage::Metrics,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Label => "label",
            Stage::Sample => "sample",
            Stage::Validate => "validate",
            Stage::Render => "render",
            Stage::Filter => "filter",
            Stage::Metrics => "metrics",
            Stage::Report => "report",
        }
    }
}

/// Loaded inputs shared by all stages.
pub struct Context {
    pub config: PipelineConfig,
    pub rig: Rig,
    pub assets: AssetRegistry,
    pub real: Manifest,
    pub synthetic: Option<Manifest>,
}

impl Context {
    pub fn load(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let rig = if config.rig == config::TOY_RIG {
            toy::rig()
        } else {
            Rig::load(&config.resolve(Path::new(&config.rig)))?
        };
        let real_path = config.resolve(&config.real_manifest);
        let real = Manifest::read(&real_path)?;
        let assets_dir = match &config.assets {
            Some(a) => config.resolve(a),
            None => real.assets_dir(&real_path).ok_or_else(|| {
                Error::config("no asset directory: set `assets` or name one in the manifest header")
            })?,
        };
        let assets = AssetRegistry::load(&assets_dir)?;
        let synthetic = match &config.synthetic_manifest {
            Some(p) => Some(Manifest::read(&config.resolve(p))?),
            None => None,
        };
        for m in std::iter::once(&real).chain(&synthetic) {
            if m.header.joint_count != rig.joint_count() {
                return Err(Error::invalid(format!(
                    "manifest has {} joints per hand, rig has {}",
                    m.header.joint_count,
                    rig.joint_count()
                )));
            }
            m.check_assets(&assets)?;
        }
        if let Some(r) = real.records.iter().find(|r| r.source != Source::Real) {
            return Err(Error::invalid(format!("real manifest holds synthetic record {}", r.id())));
        }
        Ok(Context {
            config,
            rig,
            assets,
            real,
            synthetic,
        })
    }

    fn header(&self) -> ManifestHeader {
        ManifestHeader::new(self.rig.joint_count(), None)
    }
}

/// Runs `f` on a pool of `workers` threads (0 = one per core).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Runs one stage against `dir`, which holds the outputs of earlier stages.
pub fn run_stage(ctx: &Context, stage: Stage, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    with_workers(ctx.config.workers, || {
        let result = match stage {
            Stage::Label => stage_label(ctx, dir),
            Stage::Sample => stage_sample(ctx, dir),
            Stage::Validate => stage_validate(ctx, dir),
            Stage::Render => stage_render(ctx, dir),
            Stage::Filter => stage_filter(ctx, dir),
            Stage::Metrics => stage_metrics(ctx, dir),
            Stage::Report => stage_report(ctx, dir).map(|_| ()),
        };
        result.map_err(|e| attribute(e, stage))
    })?
}

/// Errors not tied to one record are attributed to the stage as a whole.
fn attribute(e: Error, stage: Stage) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => other.in_stage(stage.name(), "*"),
    }
}

/// Runs every stage in a scratch directory and moves it to the configured
/// output directory only on success.
pub fn run_pipeline(config: PipelineConfig) -> Result<Report> {
    let ctx = Context::load(config)?;
    let out = ctx.config.out_dir();
    let parent = out.parent().map(Path::to_path_buf).unwrap_or_default();
    std::fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let name = out.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let scratch = parent.join(format!(".{name}.partial-{}", std::process::id()));
    if scratch.exists() {
        std::fs::remove_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
    }
    let result = (|| {
        for stage in &Stage::ALL[..Stage::ALL.len() - 1] {
            run_stage(&ctx, *stage, &scratch)?;
        }
        with_workers(ctx.config.workers, || stage_report(&ctx, &scratch))?.map_err(|e| attribute(e, Stage::Report))
    })();
    match result {
        Ok(report) => {
            if out.exists() {
                std::fs::remove_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            }
            std::fs::rename(&scratch, &out).map_err(|e| Error::io(&out, e))?;
            Ok(report)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&scratch);
            Err(e)
        }
    }
}

// ---------------------------------------------------------------- label

fn stage_label(ctx: &Context, dir: &Path) -> Result<()> {
    let mut by_seq: BTreeMap<&str, Vec<GraspRecord>> = BTreeMap::new();
    for r in &ctx.real.records {
        by_seq.entry(&r.sequence_id).or_default().push(r.clone());
    }
    let thresholds = ctx.config.label_thresholds();
    let labeled: Vec<Vec<GraspRecord>> = by_seq
        .into_par_iter()
        .map(|(seq, frames)| label_sequence(&frames, &thresholds).map_err(|e| e.in_stage("label", seq)))
        .collect::<Result<_>>()?;
    let records = labeled.into_iter().flatten().collect();
    Manifest::new(ctx.header(), records)?.write(&dir.join(LABELED))
}

fn read_labeled(dir: &Path) -> Result<Manifest> {
    Manifest::read(&dir.join(LABELED))
}

// ---------------------------------------------------------------- sample

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSampling {
    pub object_id: String,
    pub real_frames: usize,
    pub real_grasping: usize,
    pub synthetic_pool: usize,
    pub real_selected: Vec<String>,
    pub real_trace: Vec<f64>,
    pub synthetic_selected: Vec<String>,
    pub synthetic_trace: Vec<f64>,
    /// Over `synthetic_selected`, in that order.
    pub probabilities: Vec<f64>,
    pub uniform_weights: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub seed: u64,
    pub novel_view_only: bool,
    pub objects: Vec<ObjectSampling>,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateHeader {
    pub schema: String,
    pub draws_per_object: usize,
    pub retry_cap: usize,
}

/// One drawn synthetic grasp, already aligned to a real reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub object_id: String,
    pub slot: usize,
    pub attempt: usize,
    pub pool_id: String,
    pub reference_id: String,
    pub record: GraspRecord,
}

fn group_by_object(records: &[GraspRecord]) -> BTreeMap<String, Vec<GraspRecord>> {
    let mut out: BTreeMap<String, Vec<GraspRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.object_id.clone()).or_default().push(r.clone());
    }
    out
}

fn stage_sample(ctx: &Context, dir: &Path) -> Result<()> {
    let cfg = &ctx.config;
    let labeled = read_labeled(dir)?;
    let real = group_by_object(&labeled.records);
    let synthetic = ctx
        .synthetic
        .as_ref()
        .map(|m| group_by_object(&m.records))
        .unwrap_or_default();
    let novel_view_only = synthetic.values().all(Vec::is_empty);
    let mut report = SamplingReport {
        seed: cfg.seed,
        novel_view_only,
        objects: Vec::new(),
        notes: Vec::new(),
        warnings: Vec::new(),
    };
    if novel_view_only {
        report.notes.push("synthetic pool is empty: novel-view-only mode".into());
    }
    for id in synthetic.keys().filter(|id| !real.contains_key(*id)) {
        report
            .warnings
            .push(format!("object `{id}`: no real frames to align to; synthetic grasps skipped"));
    }
    let mut candidates = Vec::new();
    for (object_id, pool) in &synthetic {
        let Some(real_frames) = real.get(object_id) else { continue };
        let (summary, mut drawn) =
            sample_object(ctx, object_id, real_frames, pool, &mut report).map_err(|e| e.in_stage("sample", object_id))?;
        report.objects.push(summary);
        candidates.append(&mut drawn);
    }
    let header = CandidateHeader {
        schema: "handbooster-candidates".into(),
        draws_per_object: cfg.synthetic_draws,
        retry_cap: cfg.retry_cap,
    };
    write_atomic(&dir.join(CANDIDATES), to_jsonl(&header, &candidates).as_bytes())?;
    write_json(&dir.join(SAMPLING), &report)
}

fn sample_object(
    ctx: &Context,
    object_id: &str,
    real_frames: &[GraspRecord],
    pool: &[GraspRecord],
    report: &mut SamplingReport,
) -> Result<(ObjectSampling, Vec<Candidate>)> {
    let cfg = &ctx.config;
    let grasping: Vec<GraspRecord> = real_frames.iter().filter(|r| r.grasping == Some(true)).cloned().collect();
    let p_s = PoseSet::from_records(object_id, Source::Synthetic, pool.to_vec())?;
    let n = cfg.synthetic_samples.min(p_s.len());
    if n < cfg.synthetic_samples {
        report.notes.push(format!(
            "object `{object_id}`: N={} exceeds the synthetic pool of {}; selecting {n}",
            cfg.synthetic_samples,
            p_s.len()
        ));
    }
    let (q_s, s_sel) = p_s.farthest_subset(n, seed::derive(cfg.seed, &format!("fps-synthetic/{object_id}"), 0))?;

    let (real_selected, real_trace, probabilities, uniform) = if grasping.is_empty() {
        report
            .warnings
            .push(format!("object `{object_id}`: no grasping real frames; synthetic weights are uniform"));
        (Vec::new(), Vec::new(), vec![1.0 / q_s.len() as f64; q_s.len()], true)
    } else {
        let p_r = PoseSet::from_records(object_id, Source::Real, grasping)?;
        let m = cfg.real_samples.min(p_r.len());
        if m < cfg.real_samples {
            report.notes.push(format!(
                "object `{object_id}`: M={} exceeds {} grasping real frames; selecting {m}",
                cfg.real_samples,
                p_r.len()
            ));
        }
        let (q_r, r_sel) = p_r.farthest_subset(m, seed::derive(cfg.seed, &format!("fps-real/{object_id}"), 0))?;
        let dist = cross_distribution_weights_for(&q_s, &q_r)?;
        let ids = q_r.records.iter().map(GraspRecord::id).collect();
        (ids, r_sel.trace, dist.probabilities, false)
    };

    let mut drawn = Vec::new();
    for slot in 0..cfg.synthetic_draws {
        for attempt in 0..cfg.retry_cap {
            let counter = (slot * cfg.retry_cap + attempt) as u64;
            let pick = draw(&probabilities, 1, seed::derive(cfg.seed, &format!("draw/{object_id}"), counter))?[0];
            let mut rng = seed::rng(cfg.seed, &format!("reference/{object_id}"), counter);
            let reference = &real_frames[rng.random_range(0..real_frames.len())];
            let source = &q_s.records[pick];
            let mut record =
                align_orientation(source, &reference.hand.global_orient).translated_to(&reference.hand_translation);
            record.sequence_id = format!("syn-{object_id}-{slot:03}");
            record.source = Source::Synthetic;
            record.grasping = Some(true);
            drawn.push(Candidate {
                object_id: object_id.to_string(),
                slot,
                attempt,
                pool_id: source.id(),
                reference_id: reference.id(),
                record,
            });
        }
    }
    let summary = ObjectSampling {
        object_id: object_id.to_string(),
        real_frames: real_frames.len(),
        real_grasping: real_frames.iter().filter(|r| r.grasping == Some(true)).count(),
        synthetic_pool: pool.len(),
        real_selected,
        real_trace,
        synthetic_selected: q_s.records.iter().map(GraspRecord::id).collect(),
        synthetic_trace: s_sel.trace,
        probabilities,
        uniform_weights: uniform,
    };
    Ok((summary, drawn))
}

// ---------------------------------------------------------------- validate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptOutcome {
    pub attempt: usize,
    pub pool_id: String,
    pub reference_id: String,
    pub verdict: GraspVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub object_id: String,
    pub slot: usize,
    pub attempts: Vec<AttemptOutcome>,
    pub accepted: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub candidates_tried: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Rejected candidates per failed criterion; one candidate can fail
    /// several.
    pub rejections: BTreeMap<String, usize>,
    pub exhausted_slots: usize,
    pub skipped_objects: Vec<String>,
    pub warnings: Vec<String>,
    pub slots: Vec<SlotOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidatedRecord {
    pub record: GraspRecord,
    pub verdict: GraspVerdict,
}

fn stage_validate(ctx: &Context, dir: &Path) -> Result<()> {
    let (_, candidates): (CandidateHeader, Vec<Candidate>) = read_jsonl(&dir.join(CANDIDATES))?;
    let mut slots: Vec<Vec<Candidate>> = Vec::new();
    for c in candidates {
        match slots.last_mut() {
            Some(s) if s[0].object_id == c.object_id && s[0].slot == c.slot => s.push(c),
            _ => slots.push(vec![c]),
        }
    }
    let thresholds = ctx.config.validation_thresholds();
    let outcomes: Vec<(SlotOutcome, Option<ValidatedRecord>)> = slots
        .par_iter()
        .map(|slot| {
            let mut attempts = Vec::new();
            for c in slot {
                let verdict = validate_grasp(&c.record, &ctx.rig, &ctx.assets, &thresholds)
                    .map_err(|e| e.in_stage("validate", c.record.id()))?;
                let valid = verdict.valid;
                attempts.push(AttemptOutcome {
                    attempt: c.attempt,
                    pool_id: c.pool_id.clone(),
                    reference_id: c.reference_id.clone(),
                    verdict: verdict.clone(),
                });
                if valid {
                    let out = SlotOutcome {
                        object_id: c.object_id.clone(),
                        slot: c.slot,
                        attempts,
                        accepted: Some(c.attempt),
                    };
                    return Ok((out, Some(ValidatedRecord { record: c.record.clone(), verdict })));
                }
            }
            let out = SlotOutcome {
                object_id: slot[0].object_id.clone(),
                slot: slot[0].slot,
                attempts,
                accepted: None,
            };
            Ok((out, None))
        })
        .collect::<Result<_>>()?;

    let mut report = ValidationReport {
        candidates_tried: 0,
        accepted: 0,
        rejected: 0,
        rejections: Rejection::ALL.iter().map(|r| (r.tag().to_string(), 0)).collect(),
        exhausted_slots: 0,
        skipped_objects: Vec::new(),
        warnings: Vec::new(),
        slots: Vec::new(),
    };
    let mut accepted = Vec::new();
    let mut per_object: BTreeMap<String, usize> = BTreeMap::new();
    for (slot, rec) in outcomes {
        report.candidates_tried += slot.attempts.len();
        for a in slot.attempts.iter().filter(|a| !a.verdict.valid) {
            report.rejected += 1;
            for r in &a.verdict.reasons {
                *report.rejections.entry(r.tag().to_string()).or_default() += 1;
            }
        }
        let count = per_object.entry(slot.object_id.clone()).or_default();
        match rec {
            Some(v) => {
                *count += 1;
                accepted.push(v);
            }
            None => {
                report.exhausted_slots += 1;
                report.warnings.push(format!(
                    "object `{}` draw {}: no valid grasp within {} attempts",
                    slot.object_id,
                    slot.slot,
                    slot.attempts.len()
                ));
            }
        }
        report.slots.push(slot);
    }
    for (object_id, n) in &per_object {
        if *n == 0 {
            report.skipped_objects.push(object_id.clone());
            report
                .warnings
                .push(format!("object `{object_id}` skipped: retry cap exhausted on every draw"));
        }
    }
    report.accepted = accepted.len();
    write_atomic(&dir.join(ACCEPTED), to_jsonl(&ctx.header(), &accepted).as_bytes())?;
    write_json(&dir.join(VALIDATION), &report)
}

// ---------------------------------------------------------------- render

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionsHeader {
    pub schema: String,
    pub resolution: u32,
    pub variant: ConditionVariant,
    pub views_per_pose: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub stem: String,
    pub record_id: String,
    pub object_id: String,
    pub source: Source,
    pub grasping: bool,
    pub view: u32,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
}

fn stage_render(ctx: &Context, dir: &Path) -> Result<()> {
    let cfg = &ctx.config;
    let labeled = read_labeled(dir)?;
    let (_, accepted): (ManifestHeader, Vec<ValidatedRecord>) = read_jsonl(&dir.join(ACCEPTED))?;
    let records: Vec<GraspRecord> = labeled
        .records
        .into_iter()
        .chain(accepted.into_iter().map(|v| v.record))
        .collect();
    let jobs = novel_view_jobs(&records, cfg.views_per_pose, cfg.max_perturb_deg, cfg.seed)
        .map_err(|e| e.in_stage("render", "novel views"))?;
    let settings = cfg.render_settings()?;
    let cond_dir = dir.join(CONDITIONS_DIR);
    std::fs::create_dir_all(&cond_dir).map_err(|e| Error::io(&cond_dir, e))?;
    let entries: Vec<ConditionEntry> = jobs
        .par_iter()
        .map(|(g, view)| {
            let run = || -> Result<ConditionEntry> {
                let mut set = conditions::render_conditions(g, &ctx.rig, &ctx.assets, &settings)?;
                set.view = *view;
                let files = write_condition_set(&cond_dir, &set)?;
                Ok(ConditionEntry {
                    stem: set.stem(),
                    record_id: g.id(),
                    object_id: g.object_id.clone(),
                    source: g.source,
                    grasping: g.grasping == Some(true),
                    view: *view,
                    files: files
                        .iter()
                        .map(|p| format!("{CONDITIONS_DIR}/{}", p.file_name().unwrap_or_default().to_string_lossy()))
                        .collect(),
                })
            };
            run().map_err(|e| e.in_stage("render", g.id()))
        })
        .collect::<Result<_>>()?;
    let header = ConditionsHeader {
        schema: "handbooster-conditions".into(),
        resolution: cfg.resolution,
        variant: cfg.condition_variant,
        views_per_pose: cfg.views_per_pose,
    };
    write_atomic(&dir.join(CONDITIONS), to_jsonl(&header, &entries).as_bytes())
}

// ---------------------------------------------------------------- filter

/// One externally produced reconstruction, keyed by condition stem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub joints: Vec<[f64; 3]>,
    pub vertices: Vec<[f64; 3]>,
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{}: line {}", path.display(), i + 1), e)))
        .collect()
}

/// Ground-truth joints and hand vertices of a written condition set.
pub fn read_annotation(dir: &Path, stem: &str) -> Result<(Vec<Point3<f64>>, Vec<Point3<f64>>)> {
    let cond = dir.join(CONDITIONS_DIR);
    let sidecar: ConditionSidecar = read_json(&cond.join(format!("{stem}.json")))?;
    let mesh = MeshGeometry::read_obj(&cond.join(&sidecar.mesh))?;
    let joints = sidecar.joints.iter().map(|p| Point3::from(*p)).collect();
    Ok((joints, mesh.vertices))
}

struct Scored {
    entries: Vec<ConditionEntry>,
    /// Parallel to `entries`.
    records: Vec<Option<EvalRecord>>,
    unmatched: usize,
}

fn score(ctx: &Context, dir: &Path) -> Result<Option<Scored>> {
    let Some(pred_path) = &ctx.config.predictions else {
        return Ok(None);
    };
    let (_, entries): (ConditionsHeader, Vec<ConditionEntry>) = read_jsonl(&dir.join(CONDITIONS))?;
    let mut preds: BTreeMap<String, Prediction> = BTreeMap::new();
    for p in read_predictions(&ctx.config.resolve(pred_path))? {
        if preds.contains_key(&p.id) {
            return Err(Error::invalid(format!("duplicate prediction for `{}`", p.id)));
        }
        preds.insert(p.id.clone(), p);
    }
    let records: Vec<Option<EvalRecord>> = entries
        .par_iter()
        .map(|e| {
            let Some(p) = preds.get(&e.stem) else { return Ok(None) };
            let (gt_j, gt_v) = read_annotation(dir, &e.stem)?;
            let pts = |xs: &[[f64; 3]]| xs.iter().map(|c| Point3::from(*c)).collect::<Vec<_>>();
            EvalRecord::new(&e.stem, pts(&p.joints), gt_j, pts(&p.vertices), gt_v)
                .map(Some)
                .map_err(|err| err.in_stage("filter", &e.stem))
        })
        .collect::<Result<_>>()?;
    let unmatched = preds.keys().filter(|k| !entries.iter().any(|e| &e.stem == *k)).count();
    Ok(Some(Scored {
        entries,
        records,
        unmatched,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedSample {
    pub stem: String,
    pub j_pe: f64,
    pub v_pe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub skipped: bool,
    pub j_threshold_mm: f64,
    pub v_threshold_mm: f64,
    pub scored: usize,
    pub kept: usize,
    pub dropped: Vec<DroppedSample>,
    pub unscored: usize,
    pub unmatched_predictions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    #[serde(flatten)]
    pub entry: ConditionEntry,
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_pe: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_pe: Option<f64>,
}

fn stage_filter(ctx: &Context, dir: &Path) -> Result<()> {
    let cfg = &ctx.config;
    let (header, entries, records, unmatched, skipped) = match score(ctx, dir)? {
        Some(s) => {
            let (h, _): (ConditionsHeader, Vec<serde_json::Value>) = read_jsonl(&dir.join(CONDITIONS))?;
            (h, s.entries, s.records, s.unmatched, false)
        }
        None => {
            let (h, entries): (ConditionsHeader, Vec<ConditionEntry>) = read_jsonl(&dir.join(CONDITIONS))?;
            let n = entries.len();
            (h, entries, vec![None; n], 0, true)
        }
    };
    let scored: Vec<EvalRecord> = records.iter().flatten().cloned().collect();
    let (kept, dropped) = edge_case_filter(scored, cfg.edge_j_threshold_mm, cfg.edge_v_threshold_mm)?;
    let dropped_ids: BTreeMap<&str, &EvalRecord> = dropped.iter().map(|r| (r.id.as_str(), r)).collect();
    let output: Vec<OutputEntry> = entries
        .into_iter()
        .zip(&records)
        .map(|(entry, rec)| OutputEntry {
            kept: !dropped_ids.contains_key(entry.stem.as_str()),
            j_pe: rec.as_ref().map(|r| r.j_pe),
            v_pe: rec.as_ref().map(|r| r.v_pe),
            entry,
        })
        .collect();
    let report = FilterReport {
        skipped,
        j_threshold_mm: cfg.edge_j_threshold_mm,
        v_threshold_mm: cfg.edge_v_threshold_mm,
        scored: kept.len() + dropped.len(),
        kept: kept.len(),
        dropped: dropped
            .iter()
            .map(|r| DroppedSample {
                stem: r.id.clone(),
                j_pe: r.j_pe,
                v_pe: r.v_pe,
            })
            .collect(),
        unscored: records.iter().filter(|r| r.is_none()).count(),
        unmatched_predictions: unmatched,
    };
    write_atomic(&dir.join(OUTPUT), to_jsonl(&header, &output).as_bytes())?;
    write_json(&dir.join(FILTER), &report)
}

// ---------------------------------------------------------------- metrics

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
}

fn stage_metrics(ctx: &Context, dir: &Path) -> Result<()> {
    let report = match score(ctx, dir)? {
        Some(s) => {
            let scored: Vec<EvalRecord> = s.records.into_iter().flatten().collect();
            if scored.is_empty() {
                None
            } else {
                Some(evaluate(&scored, &ctx.config.metric_settings()).map_err(|e| e.in_stage("metrics", "all"))?)
            }
        }
        None => None,
    };
    let table = match &report {
        Some(r) => r.to_table(),
        None => "no predictions scored\n".to_string(),
    };
    write_atomic(&dir.join(METRICS_TABLE), table.as_bytes())?;
    write_json(
        &dir.join(METRICS),
        &MetricsFile {
            skipped: report.is_none(),
            report,
        },
    )
}

// ---------------------------------------------------------------- report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub real_frames: usize,
    pub sequences: usize,
    pub grasping_frames: usize,
    pub objects: usize,
    pub synthetic_pool: usize,
    pub draw_slots: usize,
    pub candidates_drawn: usize,
    pub candidates_tried: usize,
    pub synthetic_accepted: usize,
    pub synthetic_rejected: usize,
    pub condition_sets: usize,
    pub filter_scored: usize,
    pub filter_kept: usize,
    pub filter_dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub config_hash: String,
    pub novel_view_only: bool,
    pub counts: StageCounts,
    pub rejections: BTreeMap<String, usize>,
    pub skipped_objects: Vec<String>,
    pub warning_count: usize,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

fn stage_report(ctx: &Context, dir: &Path) -> Result<Report> {
    let labeled = read_labeled(dir)?;
    let sampling: SamplingReport = read_json(&dir.join(SAMPLING))?;
    let (_, candidates): (CandidateHeader, Vec<Candidate>) = read_jsonl(&dir.join(CANDIDATES))?;
    let validation: ValidationReport = read_json(&dir.join(VALIDATION))?;
    let (_, conditions): (ConditionsHeader, Vec<ConditionEntry>) = read_jsonl(&dir.join(CONDITIONS))?;
    let filter: FilterReport = read_json(&dir.join(FILTER))?;
    let metrics: MetricsFile = read_json(&dir.join(METRICS))?;

    let mut sequences: Vec<&str> = labeled.records.iter().map(|r| r.sequence_id.as_str()).collect();
    sequences.dedup();
    let mut objects: Vec<&str> = labeled.records.iter().map(|r| r.object_id.as_str()).collect();
    objects.sort_unstable();
    objects.dedup();
    let warnings: Vec<String> = sampling.warnings.iter().chain(&validation.warnings).cloned().collect();
    let report = Report {
        seed: ctx.config.seed,
        config_hash: ctx.config.hash(),
        novel_view_only: sampling.novel_view_only,
        counts: StageCounts {
            real_frames: labeled.records.len(),
            sequences: sequences.len(),
            grasping_frames: labeled.records.iter().filter(|r| r.grasping == Some(true)).count(),
            objects: objects.len(),
            synthetic_pool: ctx.synthetic.as_ref().map_or(0, |m| m.records.len()),
            draw_slots: validation.slots.len(),
            candidates_drawn: candidates.len(),
            candidates_tried: validation.candidates_tried,
            synthetic_accepted: validation.accepted,
            synthetic_rejected: validation.rejected,
            condition_sets: conditions.len(),
            filter_scored: filter.scored,
            filter_kept: filter.kept,
            filter_dropped: filter.dropped.len(),
        },
        rejections: validation.rejections.clone(),
        skipped_objects: validation.skipped_objects.clone(),
        warning_count: warnings.len(),
        warnings,
        notes: sampling.notes.clone(),
    };
    write_json(&dir.join(REPORT), &report)?;
    let mut text = String::new();
    let c = &report.counts;
    let _ = writeln!(text, "seed {}  config {}", report.seed, &report.config_hash[..12]);
    if report.novel_view_only {
        let _ = writeln!(text, "mode: novel-view-only (no synthetic pool)");
    }
    let _ = writeln!(
        text,
        "label     {} frames in {} sequences, {} grasping",
        c.real_frames, c.sequences, c.grasping_frames
    );
    let _ = writeln!(
        text,
        "sample    {} objects, pool {}, {} draw slots, {} candidates",
        c.objects, c.synthetic_pool, c.draw_slots, c.candidates_drawn
    );
    let reasons: Vec<String> = report.rejections.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let _ = writeln!(
        text,
        "validate  {} tried, {} accepted, {} rejected ({})",
        c.candidates_tried,
        c.synthetic_accepted,
        c.synthetic_rejected,
        reasons.join(", ")
    );
    let _ = writeln!(text, "render    {} condition sets", c.condition_sets);
    if filter.skipped {
        let _ = writeln!(text, "filter    skipped (no predictions)");
    } else {
        let _ = writeln!(
            text,
            "filter    {} scored, {} kept, {} dropped",
            c.filter_scored, c.filter_kept, c.filter_dropped
        );
    }
    if let Some(m) = &metrics.report {
        text.push_str(&m.to_table());
    }
    let _ = writeln!(text, "warnings  {}", report.warning_count);
    for w in &report.warnings {
        let _ = writeln!(text, "  - {w}");
    }
    write_atomic(&dir.join(REPORT_TEXT), text.as_bytes())?;
    Ok(report)
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                out.insert(path.strip_prefix(root).unwrap_or(&path).to_path_buf(), bytes);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}
