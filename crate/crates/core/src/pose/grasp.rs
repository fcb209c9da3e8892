use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::Quaternion;
use crate::error::{Error, Result};

/// Slack used to recognise a grasp that is already in the hand-root frame.
const CANONICAL_TOLERANCE: f64 = 1e-9;

/// Rigid object pose. Translation is in millimeters.
///
/// The quaternion is the stored state; the rotation matrix is always derived
/// from it so the two can never drift apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObjectPoseRepr", into = "ObjectPoseRepr")]
pub struct ObjectPose {
    rotation_quat: Quaternion,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct ObjectPoseRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quat: Option<Quaternion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<[[f64; 3]; 3]>,
    translation: [f64; 3],
}

impl TryFrom<ObjectPoseRepr> for ObjectPose {
    type Error = Error;

    fn try_from(r: ObjectPoseRepr) -> Result<Self> {
        let t = Vector3::from(r.translation);
        match (r.quat, r.matrix) {
            (Some(q), None) => Ok(ObjectPose::new(q, t)),
            (None, Some(m)) => {
                let m = Matrix3::from_fn(|i, j| m[i][j]);
                ObjectPose::from_rotation_matrix(&m, t)
            }
            _ => Err(Error::invalid(
                "object pose needs exactly one of `quat` or `matrix`",
            )),
        }
    }
}

impl From<ObjectPose> for ObjectPoseRepr {
    fn from(p: ObjectPose) -> Self {
        ObjectPoseRepr {
            quat: Some(p.rotation_quat),
            matrix: None,
            translation: p.translation.into(),
        }
    }
}

impl ObjectPose {
    pub fn new(rotation: Quaternion, translation: Vector3<f64>) -> Self {
        ObjectPose {
            rotation_quat: rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Quaternion::IDENTITY, Vector3::zeros())
    }

    pub fn from_rotation_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Ok(Self::new(Quaternion::from_rotation_matrix(rotation)?, translation))
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.rotation_quat.to_rotation_matrix()
    }

    pub fn rotation_quat(&self) -> &Quaternion {
        &self.rotation_quat
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Applies the world transform `x ↦ q·x + t` to this pose.
    pub fn transformed(&self, q: &Quaternion, t: &Vector3<f64>) -> Self {
        ObjectPose {
            rotation_quat: q.compose(&self.rotation_quat),
            translation: q.rotate(&self.translation) + t,
        }
    }
}

/// Articulated hand pose: a global orientation plus one local rotation per
/// non-root rig joint, in rig joint order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    pub global_orient: Quaternion,
    pub joint_rots: Vec<Quaternion>,
}

impl HandPose {
    /// Rest pose with `joints` articulated joints.
    pub fn neutral(joints: usize) -> Self {
        HandPose {
            global_orient: Quaternion::IDENTITY,
            joint_rots: vec![Quaternion::IDENTITY; joints],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

/// One hand-object configuration.
///
/// The hand occupies the world frame through `x ↦ global_orient·x +
/// hand_translation` applied to the articulated rig.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspRecord {
    pub sequence_id: String,
    pub frame_index: u64,
    pub object_id: String,
    pub source: Source,
    pub hand: HandPose,
    #[serde(with = "vec3")]
    pub hand_translation: Vector3<f64>,
    pub object: ObjectPose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasping: Option<bool>,
}

impl GraspRecord {
    /// Stable identifier `sequence/frame`.
    pub fn id(&self) -> String {
        format!("{}/{}", self.sequence_id, self.frame_index)
    }

    /// True when the hand sits at the origin with identity orientation.
    pub fn is_canonical(&self) -> bool {
        self.hand.global_orient.is_identity(CANONICAL_TOLERANCE)
            && self.hand_translation.amax() <= CANONICAL_TOLERANCE
    }

    /// Applies one world rigid transform to hand and object together.
    pub fn transformed(&self, q: &Quaternion, t: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        out.hand.global_orient = q.compose(&self.hand.global_orient);
        out.hand_translation = q.rotate(&self.hand_translation) + t;
        out.object = self.object.transformed(q, t);
        out
    }

    /// Rigidly moves hand and object so the hand root lands on `target`.
    pub fn translated_to(&self, target: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        let shift = target - self.hand_translation;
        out.hand_translation = *target;
        out.object.translation += shift;
        out
    }
}

/// Expresses the object in the hand-root frame and removes the hand's global
/// orientation and translation.
pub fn canonicalize(g: &GraspRecord) -> GraspRecord {
    if g.is_canonical() {
        return g.clone();
    }
    let inv = g.hand.global_orient.inverse();
    let mut out = g.clone();
    out.hand.global_orient = Quaternion::IDENTITY;
    out.hand_translation = Vector3::zeros();
    out.object = ObjectPose::new(
        inv.compose(g.object.rotation_quat()),
        inv.rotate(&(g.object.translation() - g.hand_translation)),
    );
    out
}

/// Replaces the hand's global orientation with `reference`, co-rotating the
/// object about the hand root so the hand-object configuration is kept.
pub fn align_orientation(g: &GraspRecord, reference: &Quaternion) -> GraspRecord {
    let delta = reference.compose(&g.hand.global_orient.inverse());
    let mut out = g.clone();
    out.hand.global_orient = *reference;
    let offset = g.object.translation() - g.hand_translation;
    out.object = ObjectPose::new(
        delta.compose(g.object.rotation_quat()),
        g.hand_translation + delta.rotate(&offset),
    );
    out
}

pub(crate) mod vec3 {
    use nalgebra::Vector3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector3<f64>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector3<f64>, D::Error> {
        Ok(Vector3::from(<[f64; 3]>::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn sample_grasp() -> GraspRecord {
        GraspRecord {
            sequence_id: "seq".into(),
            frame_index: 3,
            object_id: "mug".into(),
            source: Source::Real,
            hand: HandPose {
                global_orient: Quaternion::new(0.8, 0.2, -0.4, 0.1).unwrap(),
                joint_rots: vec![Quaternion::new(0.99, 0.1, 0.0, 0.0).unwrap(); 3],
            },
            hand_translation: Vector3::new(10.0, -20.0, 400.0),
            object: ObjectPose::new(
                Quaternion::new(0.3, 0.6, 0.1, -0.7).unwrap(),
                Vector3::new(40.0, 5.0, 380.0),
            ),
            grasping: None,
        }
    }

    #[test]
    fn canonical_hand_is_at_origin() {
        let c = canonicalize(&sample_grasp());
        assert!(c.is_canonical());
        assert_eq!(c.hand.global_orient.components(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_grasp_is_unchanged() {
        let mut g = sample_grasp();
        g.hand.global_orient = Quaternion::IDENTITY;
        g.hand_translation = Vector3::zeros();
        assert_eq!(canonicalize(&g), g);
    }

    #[test]
    fn object_matrix_input_is_accepted() {
        let json = r#"{"matrix":[[0,-1,0],[1,0,0],[0,0,1]],"translation":[1,2,3]}"#;
        let p: ObjectPose = serde_json::from_str(json).unwrap();
        let expected = Quaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        assert!(p.rotation_quat().same_rotation(&expected, 1e-12));
        assert!(serde_json::from_str::<ObjectPose>(r#"{"translation":[0,0,0]}"#).is_err());
    }

    #[test]
    fn align_to_own_orientation_is_identity() {
        let g = sample_grasp();
        let a = align_orientation(&g, &g.hand.global_orient);
        assert!(a.object.rotation_quat().same_rotation(g.object.rotation_quat(), 1e-12));
        assert!((a.object.translation() - g.object.translation()).amax() < 1e-9);
    }

    #[test]
    fn align_to_identity_resets_orientation() {
        let a = align_orientation(&sample_grasp(), &Quaternion::IDENTITY);
        assert!(a.hand.global_orient.is_identity(0.0));
    }

    #[test]
    fn translated_to_moves_both_parts() {
        let g = sample_grasp();
        let target = Vector3::new(0.0, 0.0, 500.0);
        let m = g.translated_to(&target);
        let before = g.object.translation() - g.hand_translation;
        let after = m.object.translation() - m.hand_translation;
        assert_eq!(m.hand_translation, target);
        assert!((before - after).amax() < 1e-12);
    }
}
