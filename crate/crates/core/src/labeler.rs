//! Grasping status from object motion within a sequence.
//!
//! A frame counts as grasping once its object pose has moved away from the
//! sequence's first frame by more than a rotation or translation threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{rotation_angle, GraspRecord, ObjectPose};

pub const DEFAULT_RRE_THRESHOLD_DEG: f64 = 5.0;
pub const DEFAULT_RTE_THRESHOLD_MM: f64 = 10.0;

/// How the rotation and translation tests combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionRule {
    /// Either error above its threshold marks the frame as grasping.
    #[default]
    Or,
    /// Both errors must exceed their thresholds.
    And,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelThresholds {
    pub rre_deg: f64,
    pub rte_mm: f64,
    pub rule: MotionRule,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        LabelThresholds {
            rre_deg: DEFAULT_RRE_THRESHOLD_DEG,
            rte_mm: DEFAULT_RTE_THRESHOLD_MM,
            rule: MotionRule::Or,
        }
    }
}

/// Relative rotation error between two object poses, in degrees.
pub fn rre(first: &ObjectPose, current: &ObjectPose) -> Result<f64> {
    rotation_angle(&(current.rotation().transpose() * first.rotation()))
}

/// Relative translation error between two object poses, in millimeters.
pub fn rte(first: &ObjectPose, current: &ObjectPose) -> f64 {
    (current.translation() - first.translation()).norm()
}

/// Labels every frame of one sequence. Frames must share a sequence id and
/// are ordered by frame index before comparison against the first frame.
pub fn label_sequence(frames: &[GraspRecord], thresholds: &LabelThresholds) -> Result<Vec<GraspRecord>> {
    let Some(first) = frames.first() else {
        return Err(Error::invalid("cannot label an empty sequence"));
    };
    if let Some(other) = frames.iter().find(|f| f.sequence_id != first.sequence_id) {
        return Err(Error::invalid(format!(
            "sequence mixes ids `{}` and `{}`",
            first.sequence_id, other.sequence_id
        )));
    }
    let mut ordered: Vec<GraspRecord> = frames.to_vec();
    ordered.sort_by_key(|f| f.frame_index);
    if ordered.windows(2).any(|w| w[0].frame_index == w[1].frame_index) {
        return Err(Error::invalid(format!(
            "sequence `{}` repeats a frame index",
            first.sequence_id
        )));
    }
    let origin = ordered[0].object.clone();
    for frame in &mut ordered {
        let rot = rre(&origin, &frame.object)? > thresholds.rre_deg;
        let trans = rte(&origin, &frame.object) > thresholds.rte_mm;
        frame.grasping = Some(match thresholds.rule {
            MotionRule::Or => rot || trans,
            MotionRule::And => rot && trans,
        });
    }
    Ok(ordered)
}
