//! Hand-mesh evaluation metrics and the edge-case filter.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_AUC_MAX_MM: f64 = 50.0;
pub const DEFAULT_AUC_STEPS: usize = 100;
pub const DEFAULT_F_THRESHOLDS_MM: [f64; 2] = [5.0, 15.0];

/// Sum with pairwise (cascade) summation: deterministic and with error
/// growing only logarithmically in the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

pub fn root_relative(points: &[Point3<f64>], root_index: usize) -> Result<Vec<Point3<f64>>> {
    let root = points
        .get(root_index)
        .ok_or_else(|| Error::invalid(format!("root index {root_index} out of {} points", points.len())))?
        .coords;
    Ok(points.iter().map(|p| p - root).collect())
}

fn check_shapes(pred: &[Point3<f64>], gt: &[Point3<f64>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!("{} predicted vs {} ground-truth points", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty point set"));
    }
    Ok(())
}

pub fn per_point_errors(pred: &[Point3<f64>], gt: &[Point3<f64>]) -> Result<Vec<f64>> {
    check_shapes(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).collect())
}

/// Mean per-point Euclidean distance.
pub fn position_error(pred: &[Point3<f64>], gt: &[Point3<f64>]) -> Result<f64> {
    Ok(mean(&per_point_errors(pred, gt)?))
}

/// `x ↦ scale · rotation · x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }
}

fn centroid(ps: &[Point3<f64>]) -> Vector3<f64> {
    let n = ps.len() as f64;
    let sum = |k: usize| pairwise_sum(&ps.iter().map(|p| p[k]).collect::<Vec<_>>());
    Vector3::new(sum(0), sum(1), sum(2)) / n
}

/// Least-squares similarity transform taking `pred` onto `gt`.
pub fn procrustes_transform(pred: &[Point3<f64>], gt: &[Point3<f64>]) -> Result<Similarity> {
    check_shapes(pred, gt)?;
    if pred.len() < 3 {
        return Err(Error::Degenerate("alignment needs at least 3 points".into()));
    }
    let (mp, mg) = (centroid(pred), centroid(gt));
    let n = pred.len() as f64;
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for (p, g) in pred.iter().zip(gt) {
        let (x, y) = (p.coords - mp, g.coords - mg);
        cov += y * x.transpose();
        scatter += x * x.transpose();
    }
    cov /= n;
    scatter /= n;
    let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("predicted points are coincident or collinear".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        d.z = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;
    let variance = scatter.trace();
    let scale = svd.singular_values.dot(&d) / variance;
    let translation = mg - scale * (rotation * mp);
    Ok(Similarity {
        rotation,
        scale,
        translation,
    })
}

/// Applies [`procrustes_transform`]. When rounding leaves the closed form
/// no better than the identity (e.g. `pred == gt`), `pred` is returned as is.
pub fn procrustes_align(pred: &[Point3<f64>], gt: &[Point3<f64>]) -> Result<Vec<Point3<f64>>> {
    let t = procrustes_transform(pred, gt)?;
    let aligned: Vec<_> = pred.iter().map(|p| t.apply(p)).collect();
    if position_error(pred, gt)? <= position_error(&aligned, gt)? {
        return Ok(pred.to_vec());
    }
    Ok(aligned)
}

/// Area under the fraction-of-errors-≤-t curve over `[0, t_max]` with
/// `steps` trapezoids, normalized to `[0, 1]`.
pub fn pck_auc(errors: &[f64], t_max: f64, steps: usize) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::invalid("PCK needs at least one error"));
    }
    if !(t_max > 0.0) || steps == 0 {
        return Err(Error::config(format!("invalid PCK range t_max={t_max}, steps={steps}")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let pck: Vec<f64> = (0..=steps)
        .map(|k| {
            let t = t_max * k as f64 / steps as f64;
            sorted.partition_point(|&e| e <= t) as f64 / n
        })
        .collect();
    let inner = pairwise_sum(&pck[1..steps]);
    Ok((inner + 0.5 * (pck[0] + pck[steps])) / steps as f64)
}

/// Mean over joints of the per-joint AUC. `errors[r][j]` is the error of
/// joint `j` in record `r`.
pub fn pck_auc_per_joint(errors: &[Vec<f64>], t_max: f64, steps: usize) -> Result<f64> {
    let joints = errors.first().map_or(0, Vec::len);
    if joints == 0 || errors.iter().any(|e| e.len() != joints) {
        return Err(Error::invalid("per-joint AUC needs equal, non-empty error rows"));
    }
    let per: Result<Vec<f64>> = (0..joints)
        .map(|j| pck_auc(&errors.iter().map(|e| e[j]).collect::<Vec<_>>(), t_max, steps))
        .collect();
    Ok(mean(&per?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matching {
    #[default]
    NearestNeighbor,
    Index,
}

fn nearest_within(from: &[Point3<f64>], to: &[Point3<f64>], t: f64) -> usize {
    let t2 = t * t;
    from.par_iter()
        .filter(|p| to.iter().any(|q| (*p - q).norm_squared() <= t2))
        .count()
}

/// Harmonic mean of precision and recall at distance `t`.
pub fn f_score(pred: &[Point3<f64>], gt: &[Point3<f64>], t: f64, matching: Matching) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::invalid("F-score needs non-empty point sets"));
    }
    let (precision, recall) = match matching {
        Matching::NearestNeighbor => (
            nearest_within(pred, gt, t) as f64 / pred.len() as f64,
            nearest_within(gt, pred, t) as f64 / gt.len() as f64,
        ),
        Matching::Index => {
            let errs = per_point_errors(pred, gt)?;
            let hit = errs.iter().filter(|&&e| e <= t).count() as f64 / errs.len() as f64;
            (hit, hit)
        }
    };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Predicted and ground-truth joints and vertices for one sample, with the
/// derived errors in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub pred_joints: Vec<Point3<f64>>,
    pub gt_joints: Vec<Point3<f64>>,
    pub pred_vertices: Vec<Point3<f64>>,
    pub gt_vertices: Vec<Point3<f64>>,
    pub j_pe: f64,
    pub v_pe: f64,
    pub j_pe_pa: f64,
    pub v_pe_pa: f64,
}

/// The four aligned point sets behind an [`EvalRecord`].
struct Aligned {
    joints_rr: (Vec<Point3<f64>>, Vec<Point3<f64>>),
    verts_rr: (Vec<Point3<f64>>, Vec<Point3<f64>>),
    joints_pa: Vec<Point3<f64>>,
    verts_pa: Vec<Point3<f64>>,
}

impl EvalRecord {
    /// Root is joint 0; vertices are made relative to it as well.
    pub fn new(
        id: impl Into<String>,
        pred_joints: Vec<Point3<f64>>,
        gt_joints: Vec<Point3<f64>>,
        pred_vertices: Vec<Point3<f64>>,
        gt_vertices: Vec<Point3<f64>>,
    ) -> Result<Self> {
        let mut r = EvalRecord {
            id: id.into(),
            pred_joints,
            gt_joints,
            pred_vertices,
            gt_vertices,
            j_pe: 0.0,
            v_pe: 0.0,
            j_pe_pa: 0.0,
            v_pe_pa: 0.0,
        };
        let a = r.aligned()?;
        r.j_pe = position_error(&a.joints_rr.0, &a.joints_rr.1)?;
        r.v_pe = position_error(&a.verts_rr.0, &a.verts_rr.1)?;
        r.j_pe_pa = position_error(&a.joints_pa, &r.gt_joints)?;
        r.v_pe_pa = position_error(&a.verts_pa, &r.gt_vertices)?;
        Ok(r)
    }

    fn aligned(&self) -> Result<Aligned> {
        check_shapes(&self.pred_joints, &self.gt_joints)?;
        check_shapes(&self.pred_vertices, &self.gt_vertices)?;
        let (pr, gr) = (self.pred_joints[0].coords, self.gt_joints[0].coords);
        let shift = |ps: &[Point3<f64>], r: Vector3<f64>| ps.iter().map(|p| p - r).collect::<Vec<_>>();
        Ok(Aligned {
            joints_rr: (shift(&self.pred_joints, pr), shift(&self.gt_joints, gr)),
            verts_rr: (shift(&self.pred_vertices, pr), shift(&self.gt_vertices, gr)),
            joints_pa: procrustes_align(&self.pred_joints, &self.gt_joints)?,
            verts_pa: procrustes_align(&self.pred_vertices, &self.gt_vertices)?,
        })
    }
}

/// Splits records into `(kept, dropped)`, preserving order. A record is
/// dropped when either error exceeds its threshold.
pub fn edge_case_filter(records: Vec<EvalRecord>, j_thresh: f64, v_thresh: f64) -> Result<(Vec<EvalRecord>, Vec<EvalRecord>)> {
    if !(j_thresh > 0.0 && v_thresh > 0.0) {
        return Err(Error::config(format!(
            "edge-case thresholds must be positive, got {j_thresh} and {v_thresh}"
        )));
    }
    Ok(records
        .into_iter()
        .partition(|r| !(r.j_pe > j_thresh || r.v_pe > v_thresh)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSettings {
    pub auc_max_mm: f64,
    pub auc_steps: usize,
    pub f_thresholds_mm: Vec<f64>,
    pub matching: Matching,
    pub per_joint_auc: bool,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            auc_max_mm: DEFAULT_AUC_MAX_MM,
            auc_steps: DEFAULT_AUC_STEPS,
            f_thresholds_mm: DEFAULT_F_THRESHOLDS_MM.to_vec(),
            matching: Matching::NearestNeighbor,
            per_joint_auc: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub threshold_mm: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub j_pe: f64,
    pub j_auc: f64,
    pub v_pe: f64,
    pub v_auc: f64,
    pub f_scores: Vec<FScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: usize,
    pub procrustes: MetricRow,
    pub root_relative: MetricRow,
}

struct RecordStats {
    j_errs: Vec<f64>,
    v_errs: Vec<f64>,
    f: Vec<f64>,
}

fn stats(pred_j: &[Point3<f64>], gt_j: &[Point3<f64>], pred_v: &[Point3<f64>], gt_v: &[Point3<f64>], s: &MetricSettings) -> Result<RecordStats> {
    let f = s
        .f_thresholds_mm
        .iter()
        .map(|&t| f_score(pred_v, gt_v, t, s.matching))
        .collect::<Result<_>>()?;
    Ok(RecordStats {
        j_errs: per_point_errors(pred_j, gt_j)?,
        v_errs: per_point_errors(pred_v, gt_v)?,
        f,
    })
}

fn row(all: &[RecordStats], s: &MetricSettings) -> Result<MetricRow> {
    let pe = |pick: fn(&RecordStats) -> &Vec<f64>| mean(&all.iter().map(|r| mean(pick(r))).collect::<Vec<_>>());
    let auc = |pick: fn(&RecordStats) -> &Vec<f64>| -> Result<f64> {
        if s.per_joint_auc {
            pck_auc_per_joint(&all.iter().map(|r| pick(r).clone()).collect::<Vec<_>>(), s.auc_max_mm, s.auc_steps)
        } else {
            pck_auc(&all.iter().flat_map(|r| pick(r).iter().copied()).collect::<Vec<_>>(), s.auc_max_mm, s.auc_steps)
        }
    };
    Ok(MetricRow {
        j_pe: pe(|r| &r.j_errs),
        j_auc: auc(|r| &r.j_errs)?,
        v_pe: pe(|r| &r.v_errs),
        v_auc: auc(|r| &r.v_errs)?,
        f_scores: s
            .f_thresholds_mm
            .iter()
            .enumerate()
            .map(|(k, &t)| FScore {
                threshold_mm: t,
                value: mean(&all.iter().map(|r| r.f[k]).collect::<Vec<_>>()),
            })
            .collect(),
    })
}

/// Aggregates errors over records; per-record results are combined in
/// input order.
pub fn evaluate(records: &[EvalRecord], settings: &MetricSettings) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::invalid("no records to evaluate"));
    }
    let per: Vec<(RecordStats, RecordStats)> = records
        .par_iter()
        .map(|r| {
            let a = r.aligned()?;
            let rr = stats(&a.joints_rr.0, &a.joints_rr.1, &a.verts_rr.0, &a.verts_rr.1, settings)?;
            let pa = stats(&a.joints_pa, &r.gt_joints, &a.verts_pa, &r.gt_vertices, settings)?;
            Ok((rr, pa))
        })
        .collect::<Result<_>>()?;
    let (rr, pa): (Vec<_>, Vec<_>) = per.into_iter().unzip();
    Ok(MetricReport {
        records: records.len(),
        procrustes: row(&pa, settings)?,
        root_relative: row(&rr, settings)?,
    })
}

impl MetricReport {
    /// Plain-text table: PA and root-relative blocks side by side.
    pub fn to_table(&self) -> String {
        let mut cols = vec!["J-PE".to_string(), "J-AUC".into(), "V-PE".into(), "V-AUC".into()];
        cols.extend(self.procrustes.f_scores.iter().map(|f| format!("F@{}", f.threshold_mm)));
        let cells = |r: &MetricRow| {
            let mut v = vec![
                format!("{:.2}", r.j_pe),
                format!("{:.3}", r.j_auc),
                format!("{:.2}", r.v_pe),
                format!("{:.3}", r.v_auc),
            ];
            v.extend(r.f_scores.iter().map(|f| format!("{:.3}", f.value)));
            v
        };
        let width = 8;
        let block = cols.len() * (width + 1);
        let mut out = String::new();
        let _ = writeln!(out, "{:<10}| {:^block$}| {:^block$}", "records", "PA", "Root-relative");
        let header: String = cols.iter().map(|c| format!("{c:>width$} ")).collect();
        let _ = writeln!(out, "{:<10}| {header}| {header}", "");
        let pa: String = cells(&self.procrustes).iter().map(|c| format!("{c:>width$} ")).collect();
        let rr: String = cells(&self.root_relative).iter().map(|c| format!("{c:>width$} ")).collect();
        let _ = writeln!(out, "{:<10}| {pa}| {rr}", self.records);
        out
    }
}
