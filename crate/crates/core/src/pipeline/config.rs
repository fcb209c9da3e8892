//! Pipeline configuration: a flat TOML key-value file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditions::{ConditionVariant, RenderSettings};
use crate::error::{Error, Result};
use crate::labeler::{LabelThresholds, MotionRule, DEFAULT_RRE_THRESHOLD_DEG, DEFAULT_RTE_THRESHOLD_MM};
use crate::metrics::{Matching, MetricSettings, DEFAULT_AUC_MAX_MM, DEFAULT_AUC_STEPS, DEFAULT_F_THRESHOLDS_MM};
use crate::render::{Camera, DEFAULT_RESOLUTION, MIN_RESOLUTION};
use crate::sampler::{DEFAULT_REAL_SAMPLES, DEFAULT_SYNTHETIC_SAMPLES};
use crate::validator::{ValidationThresholds, DEFAULT_CONTACT_MM, DEFAULT_VOLUME_CM3, DEFAULT_VOXEL_MM};

pub const DEFAULT_RETRY_CAP: usize = 10;
pub const DEFAULT_SYNTHETIC_DRAWS: usize = 20;
pub const DEFAULT_VIEWS_PER_POSE: u32 = 2;
pub const DEFAULT_MAX_PERTURB_DEG: f64 = 30.0;
pub const DEFAULT_FOCAL_PX: f64 = 400.0;

/// Name of the built-in procedural rig.
pub const TOY_RIG: &str = "toy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub real_manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_manifest: Option<PathBuf>,
    /// Overrides the asset directory named in the real manifest header.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assets: Option<PathBuf>,
    #[serde(default = "toy_rig")]
    pub rig: String,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,

    #[serde(default = "d_rre")]
    pub rre_threshold_deg: f64,
    #[serde(default = "d_rte")]
    pub rte_threshold_mm: f64,
    #[serde(default)]
    pub motion_rule: MotionRule,

    #[serde(default = "d_m")]
    pub real_samples: usize,
    #[serde(default = "d_n")]
    pub synthetic_samples: usize,
    #[serde(default = "d_draws")]
    pub synthetic_draws: usize,
    #[serde(default = "d_retry")]
    pub retry_cap: usize,

    #[serde(default = "d_contact")]
    pub contact_mm: f64,
    #[serde(default = "d_volume")]
    pub volume_cm3: f64,
    #[serde(default = "d_voxel")]
    pub voxel_mm: f64,

    #[serde(default = "d_views")]
    pub views_per_pose: u32,
    #[serde(default = "d_perturb")]
    pub max_perturb_deg: f64,
    #[serde(default = "d_resolution")]
    pub resolution: u32,
    #[serde(default = "d_focal")]
    pub focal_px: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_point: Option<[f64; 2]>,
    #[serde(default)]
    pub condition_variant: ConditionVariant,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    pub edge_j_threshold_mm: f64,
    pub edge_v_threshold_mm: f64,
    #[serde(default = "d_auc_max")]
    pub auc_max_mm: f64,
    #[serde(default = "d_auc_steps")]
    pub auc_steps: usize,
    #[serde(default = "d_f")]
    pub f_thresholds_mm: Vec<f64>,
    #[serde(default)]
    pub f_matching: Matching,
    #[serde(default)]
    pub per_joint_auc: bool,

    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn toy_rig() -> String {
    TOY_RIG.into()
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn d_rre() -> f64 {
    DEFAULT_RRE_THRESHOLD_DEG
}
fn d_rte() -> f64 {
    DEFAULT_RTE_THRESHOLD_MM
}
fn d_m() -> usize {
    DEFAULT_REAL_SAMPLES
}
fn d_n() -> usize {
    DEFAULT_SYNTHETIC_SAMPLES
}
fn d_draws() -> usize {
    DEFAULT_SYNTHETIC_DRAWS
}
fn d_retry() -> usize {
    DEFAULT_RETRY_CAP
}
fn d_contact() -> f64 {
    DEFAULT_CONTACT_MM
}
fn d_volume() -> f64 {
    DEFAULT_VOLUME_CM3
}
fn d_voxel() -> f64 {
    DEFAULT_VOXEL_MM
}
fn d_views() -> u32 {
    DEFAULT_VIEWS_PER_POSE
}
fn d_perturb() -> f64 {
    DEFAULT_MAX_PERTURB_DEG
}
fn d_resolution() -> u32 {
    DEFAULT_RESOLUTION
}
fn d_focal() -> f64 {
    DEFAULT_FOCAL_PX
}
fn d_auc_max() -> f64 {
    DEFAULT_AUC_MAX_MM
}
fn d_auc_steps() -> usize {
    DEFAULT_AUC_STEPS
}
fn d_f() -> Vec<f64> {
    DEFAULT_F_THRESHOLDS_MM.to_vec()
}

impl PipelineConfig {
    /// Minimal configuration with every optional key at its default.
    pub fn new(real_manifest: impl Into<PathBuf>, seed: u64, edge_j_mm: f64, edge_v_mm: f64) -> Self {
        let text = format!("real_manifest = \"x\"\nseed = {seed}\nedge_j_threshold_mm = {edge_j_mm:?}\nedge_v_threshold_mm = {edge_v_mm:?}\n");
        let mut cfg: PipelineConfig = toml::from_str(&text).expect("defaults parse");
        cfg.real_manifest = real_manifest.into();
        cfg
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        let positive = [
            ("rte_threshold_mm", self.rte_threshold_mm),
            ("rre_threshold_deg", self.rre_threshold_deg),
            ("voxel_mm", self.voxel_mm),
            ("focal_px", self.focal_px),
            ("edge_j_threshold_mm", self.edge_j_threshold_mm),
            ("edge_v_threshold_mm", self.edge_v_threshold_mm),
            ("auc_max_mm", self.auc_max_mm),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("`{k}` must be positive, got {v}"));
            }
        }
        for (k, v) in [("contact_mm", self.contact_mm), ("volume_cm3", self.volume_cm3)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("`{k}` must be non-negative, got {v}"));
            }
        }
        if !(self.max_perturb_deg > 0.0 && self.max_perturb_deg <= 180.0) {
            return bad(format!("`max_perturb_deg` must lie in (0, 180], got {}", self.max_perturb_deg));
        }
        for (k, v) in [
            ("real_samples", self.real_samples),
            ("synthetic_samples", self.synthetic_samples),
            ("retry_cap", self.retry_cap),
            ("auc_steps", self.auc_steps),
        ] {
            if v == 0 {
                return bad(format!("`{k}` must be at least 1"));
            }
        }
        if self.views_per_pose == 0 {
            return bad("`views_per_pose` must be at least 1".into());
        }
        if self.resolution < MIN_RESOLUTION {
            return bad(format!("`resolution` must be at least {MIN_RESOLUTION}"));
        }
        if self.f_thresholds_mm.is_empty() || self.f_thresholds_mm.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return bad("`f_thresholds_mm` needs positive thresholds".into());
        }
        if self.rig.is_empty() {
            return bad("`rig` must name `toy` or a rig file".into());
        }
        self.camera()?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    pub fn label_thresholds(&self) -> LabelThresholds {
        LabelThresholds {
            rre_deg: self.rre_threshold_deg,
            rte_mm: self.rte_threshold_mm,
            rule: self.motion_rule,
        }
    }

    pub fn validation_thresholds(&self) -> ValidationThresholds {
        ValidationThresholds {
            contact_mm: self.contact_mm,
            volume_cm3: self.volume_cm3,
            voxel_mm: self.voxel_mm,
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let centered = f64::from(self.resolution) / 2.0 - 0.5;
        let [cx, cy] = self.principal_point.unwrap_or([centered, centered]);
        Camera::new(self.focal_px, self.focal_px, cx, cy)
    }

    pub fn render_settings(&self) -> Result<RenderSettings> {
        Ok(RenderSettings {
            camera: self.camera()?,
            width: self.resolution,
            height: self.resolution,
            variant: self.condition_variant,
        })
    }

    pub fn metric_settings(&self) -> MetricSettings {
        MetricSettings {
            auc_max_mm: self.auc_max_mm,
            auc_steps: self.auc_steps,
            f_thresholds_mm: self.f_thresholds_mm.clone(),
            matching: self.f_matching,
            per_joint_auc: self.per_joint_auc,
        }
    }

    /// SHA-256 over every setting that can change outputs (`out` and
    /// `workers` excluded).
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out = PathBuf::new();
        canon.workers = 0;
        let json = serde_json::to_string(&canon).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Human-readable stage plan.
    pub fn plan(&self) -> String {
        let f: Vec<String> = self.f_thresholds_mm.iter().map(|t| format!("F@{t}")).collect();
        let rule = match self.motion_rule {
            MotionRule::Or => "or",
            MotionRule::And => "and",
        };
        let mut s = String::new();
        let _ = writeln!(s, "stage plan (seed {}, config {})", self.seed, &self.hash()[..12]);
        let _ = writeln!(
            s,
            "  1. label     RRE > {} deg {rule} RTE > {} mm",
            self.rre_threshold_deg, self.rte_threshold_mm
        );
        let _ = writeln!(s, "  2. prepare   canonicalize grasps, group by object");
        let _ = writeln!(
            s,
            "  3. sample    FPS M={} real, N={} synthetic per object; {} draws, retry cap {}",
            self.real_samples, self.synthetic_samples, self.synthetic_draws, self.retry_cap
        );
        let _ = writeln!(
            s,
            "  4. validate  contact <= {} mm, intersection <= {} cm3 at {} mm voxels, no self-penetration",
            self.contact_mm, self.volume_cm3, self.voxel_mm
        );
        let _ = writeln!(
            s,
            "  5. render    {r}x{r} {}, {} views per grasping pose, perturbation <= {} deg",
            self.condition_variant.name(),
            self.views_per_pose,
            self.max_perturb_deg,
            r = self.resolution
        );
        let _ = writeln!(
            s,
            "  6. filter    drop J-PE > {} mm or V-PE > {} mm{}",
            self.edge_j_threshold_mm,
            self.edge_v_threshold_mm,
            if self.predictions.is_some() { "" } else { " (no predictions configured: skipped)" }
        );
        let _ = writeln!(
            s,
            "  7. metrics   J/V-PE, J/V-AUC over [0, {}] mm in {} steps, {}",
            self.auc_max_mm,
            self.auc_steps,
            f.join(", ")
        );
        let _ = writeln!(s, "  8. report    {}", self.out_dir().join("report.json").display());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "real_manifest = \"real.jsonl\"\nseed = 1\nedge_j_threshold_mm = 20.0\nedge_v_threshold_mm = 20.0\n";

    #[test]
    fn defaults_carry_the_published_constants() {
        let c = PipelineConfig::parse(MINIMAL, Path::new("/cfg")).unwrap();
        assert_eq!((c.real_samples, c.synthetic_samples), (10, 500));
        assert_eq!(c.resolution, 256);
        assert_eq!(c.f_thresholds_mm, [5.0, 15.0]);
        assert_eq!((c.rre_threshold_deg, c.rte_threshold_mm), (5.0, 10.0));
        assert_eq!(c.retry_cap, 10);
        assert_eq!(c.out_dir(), Path::new("/cfg/out"));
        let plan = c.plan();
        for needle in ["M=10", "N=500", "256x256", "F@5", "F@15"] {
            assert!(plan.contains(needle), "{needle} missing from\n{plan}");
        }
    }

    #[test]
    fn unknown_and_missing_keys_are_config_errors() {
        let err = PipelineConfig::parse(&format!("{MINIMAL}colour = 3\n"), Path::new(".")).unwrap_err();
        assert!(err.is_config());
        let err = PipelineConfig::parse("seed = 1\n", Path::new(".")).unwrap_err();
        assert!(err.is_config());
        let err = PipelineConfig::parse(&format!("{MINIMAL}max_perturb_deg = 0.0\n"), Path::new(".")).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn hash_ignores_output_location_and_workers() {
        let a = PipelineConfig::parse(MINIMAL, Path::new(".")).unwrap();
        let mut b = a.clone();
        b.out = "elsewhere".into();
        b.workers = 8;
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
