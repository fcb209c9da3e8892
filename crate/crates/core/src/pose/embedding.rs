use serde::{Deserialize, Serialize};

use super::grasp::GraspRecord;
use crate::error::{Error, Result};

/// Flattened grasp embedding: sign-normalized joint quaternions, the object
/// quaternion, then the object translation in millimeters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseVector(Vec<f64>);

impl PoseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("pose vector entry {i} is not finite")));
        }
        Ok(PoseVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        PoseVector(self.0.iter().map(|v| v * factor).collect())
    }
}

/// Embedding length for `joints` articulated joints.
pub const fn pose_vector_dim(joints: usize) -> usize {
    4 * joints + 4 + 3
}

/// Builds the similarity embedding of a canonicalized grasp.
pub fn build_pose_vector(g: &GraspRecord) -> Result<PoseVector> {
    if !g.is_canonical() {
        return Err(Error::ContractViolation(format!(
            "grasp {} must be canonicalized before embedding",
            g.id()
        )));
    }
    let mut values = Vec::with_capacity(pose_vector_dim(g.hand.joint_rots.len()));
    for q in &g.hand.joint_rots {
        values.extend(q.sign_normalized().components());
    }
    values.extend(g.object.rotation_quat().sign_normalized().components());
    values.extend(g.object.translation().iter());
    PoseVector::new(values)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn checked_norms(a: &PoseVector, b: &PoseVector) -> Result<(f64, f64)> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "pose vector dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((na, nb))
}

/// Similarity from precomputed norms. Every similarity in the crate goes
/// through here so cached and uncached paths agree bit for bit.
#[inline]
pub(crate) fn similarity_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

#[inline]
pub(crate) fn distance_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    1.0 - similarity_with_norms(a, b, na, nb)
}

/// `a·b / (‖a‖‖b‖)`, in `[-1, 1]`.
pub fn cosine_similarity(a: &PoseVector, b: &PoseVector) -> Result<f64> {
    let (na, nb) = checked_norms(a, b)?;
    Ok(similarity_with_norms(&a.0, &b.0, na, nb))
}

/// `1 − cosine_similarity`, in `[0, 2]`.
pub fn pose_distance(a: &PoseVector, b: &PoseVector) -> Result<f64> {
    let (na, nb) = checked_norms(a, b)?;
    Ok(distance_with_norms(&a.0, &b.0, na, nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{canonicalize, HandPose, ObjectPose, Quaternion, Source};
    use nalgebra::Vector3;
    use std::f64::consts::FRAC_PI_2;

    fn pv(v: &[f64]) -> PoseVector {
        PoseVector::new(v.to_vec()).unwrap()
    }

    fn neutral(joints: usize) -> GraspRecord {
        GraspRecord {
            sequence_id: "s".into(),
            frame_index: 0,
            object_id: "o".into(),
            source: Source::Synthetic,
            hand: HandPose::neutral(joints),
            hand_translation: Vector3::zeros(),
            object: ObjectPose::identity(),
            grasping: None,
        }
    }

    #[test]
    fn neutral_grasp_embedding() {
        let v = build_pose_vector(&neutral(15)).unwrap();
        assert_eq!(v.dim(), 67);
        let mut expected = Vec::new();
        for _ in 0..16 {
            expected.extend([1.0, 0.0, 0.0, 0.0]);
        }
        expected.extend([0.0, 0.0, 0.0]);
        assert_eq!(v.as_slice(), expected.as_slice());
    }

    #[test]
    fn translation_only_changes_tail() {
        let a = neutral(15);
        let mut b = a.clone();
        b.object = ObjectPose::new(Quaternion::IDENTITY, Vector3::new(10.0, 0.0, 0.0));
        let (va, vb) = (build_pose_vector(&a).unwrap(), build_pose_vector(&b).unwrap());
        let diff: Vec<usize> = (0..67).filter(|&i| va.as_slice()[i] != vb.as_slice()[i]).collect();
        assert_eq!(diff, vec![64]);
    }

    #[test]
    fn uncanonical_input_is_rejected() {
        let mut g = neutral(2);
        g.hand.global_orient = Quaternion::from_axis_angle(&Vector3::x(), 0.3);
        assert!(matches!(build_pose_vector(&g), Err(Error::ContractViolation(_))));
        assert!(build_pose_vector(&canonicalize(&g)).is_ok());
    }

    #[test]
    fn joint_sign_flip_is_invisible() {
        let mut a = neutral(3);
        a.hand.joint_rots[1] = Quaternion::new(0.6, 0.0, 0.8, 0.0).unwrap();
        let mut b = a.clone();
        b.hand.joint_rots[1] = Quaternion::new(-0.6, 0.0, -0.8, 0.0).unwrap();
        assert_eq!(build_pose_vector(&a).unwrap(), build_pose_vector(&b).unwrap());
    }

    #[test]
    fn global_rotation_is_removed() {
        let mut g = neutral(15);
        g.hand.joint_rots[4] = Quaternion::from_axis_angle(&Vector3::x(), 0.4);
        g.hand.global_orient = Quaternion::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0), 0.7);
        g.hand_translation = Vector3::new(5.0, 6.0, 300.0);
        g.object = ObjectPose::new(
            Quaternion::from_axis_angle(&Vector3::z(), 1.1),
            Vector3::new(30.0, -10.0, 280.0),
        );
        let world = Quaternion::from_axis_angle(&Vector3::y(), FRAC_PI_2);
        let moved = g.transformed(&world, &Vector3::new(-7.0, 2.0, 11.0));
        let a = build_pose_vector(&canonicalize(&g)).unwrap();
        let b = build_pose_vector(&canonicalize(&moved)).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn distinct_articulations_differ() {
        let a = neutral(15);
        let mut b = a.clone();
        b.hand.joint_rots[7] = Quaternion::from_axis_angle(&Vector3::x(), 0.2);
        assert_ne!(build_pose_vector(&a).unwrap(), build_pose_vector(&b).unwrap());
    }

    #[test]
    fn similarity_examples() {
        let e1 = pv(&[1.0, 0.0]);
        assert_eq!(cosine_similarity(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&e1, &pv(&[0.0, 3.0])).unwrap(), 0.0);
        let diag = pv(&[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]);
        assert!((cosine_similarity(&e1, &diag).unwrap() - 2f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn distance_examples() {
        let e1 = pv(&[1.0, 0.0]);
        assert_eq!(pose_distance(&e1, &e1).unwrap(), 0.0);
        assert_eq!(pose_distance(&e1, &pv(&[-2.0, 0.0])).unwrap(), 2.0);
        assert_eq!(pose_distance(&e1, &pv(&[0.0, 1.0])).unwrap(), 1.0);
    }

    #[test]
    fn zero_and_mismatched_vectors_fail() {
        let e1 = pv(&[1.0, 0.0]);
        assert!(cosine_similarity(&e1, &pv(&[0.0, 0.0])).is_err());
        assert!(pose_distance(&e1, &pv(&[1.0, 0.0, 0.0])).is_err());
        assert!(PoseVector::new(vec![f64::NAN]).is_err());
    }
}
