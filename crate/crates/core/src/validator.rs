//! Geometric grasp validation: contact, bounded hand-object overlap and no
//! hand self-penetration.

use std::fmt;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::AssetRegistry;
use crate::error::{Error, Result};
use crate::geometry::Bvh;
use crate::mesh::MeshGeometry;
use crate::pose::GraspRecord;
use crate::skinning::Rig;

pub const DEFAULT_CONTACT_MM: f64 = 2.0;
pub const DEFAULT_VOLUME_CM3: f64 = 4.0;
pub const DEFAULT_VOXEL_MM: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationThresholds {
    pub contact_mm: f64,
    pub volume_cm3: f64,
    pub voxel_mm: f64,
}

impl Default for ValidationThresholds {
    fn default() -> Self {
        ValidationThresholds {
            contact_mm: DEFAULT_CONTACT_MM,
            volume_cm3: DEFAULT_VOLUME_CM3,
            voxel_mm: DEFAULT_VOXEL_MM,
        }
    }
}

impl ValidationThresholds {
    pub fn check(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.contact_mm) || !ok(self.volume_cm3) || !(self.voxel_mm.is_finite() && self.voxel_mm > 0.0) {
            return Err(Error::config(format!("invalid validation thresholds {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    NoContact,
    Intersection,
    SelfPenetration,
}

impl Rejection {
    pub const ALL: [Rejection; 3] = [Rejection::NoContact, Rejection::Intersection, Rejection::SelfPenetration];

    pub fn tag(self) -> &'static str {
        match self {
            Rejection::NoContact => "no-contact",
            Rejection::Intersection => "intersection",
            Rejection::SelfPenetration => "self-penetration",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspVerdict {
    pub valid: bool,
    /// Millimeters.
    pub contact_distance: f64,
    /// Cubic centimeters.
    pub intersection_volume: f64,
    pub self_penetration_pairs: usize,
    pub reasons: Vec<Rejection>,
}

impl GraspVerdict {
    fn from_measurements(distance: f64, volume: f64, pairs: usize, t: &ValidationThresholds) -> Self {
        let mut reasons = Vec::new();
        if distance > t.contact_mm {
            reasons.push(Rejection::NoContact);
        }
        if volume > t.volume_cm3 {
            reasons.push(Rejection::Intersection);
        }
        if pairs > 0 {
            reasons.push(Rejection::SelfPenetration);
        }
        GraspVerdict {
            valid: reasons.is_empty(),
            contact_distance: distance,
            intersection_volume: volume,
            self_penetration_pairs: pairs,
            reasons,
        }
    }
}

/// Minimum distance between the two triangle surfaces, in millimeters.
pub fn min_surface_distance(a: &MeshGeometry, b: &MeshGeometry) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("surface distance needs two non-empty meshes"));
    }
    Ok(Bvh::new(a).min_distance(&Bvh::new(b)))
}

/// Volume inside both closed meshes, in cubic centimeters, estimated by
/// counting voxel centers inside both meshes on a grid over the overlap of
/// their bounding boxes with pitch at most `voxel` millimeters.
pub fn intersection_volume(a: &MeshGeometry, b: &MeshGeometry, voxel: f64) -> Result<f64> {
    intersection_volume_named(("first", a), ("second", b), voxel)
}

fn intersection_volume_named(
    (a_name, a): (&str, &MeshGeometry),
    (b_name, b): (&str, &MeshGeometry),
    voxel: f64,
) -> Result<f64> {
    if !(voxel.is_finite() && voxel > 0.0) {
        return Err(Error::invalid(format!("voxel pitch must be positive, got {voxel}")));
    }
    for (name, m) in [(a_name, a), (b_name, b)] {
        if !m.is_watertight() {
            return Err(Error::invalid(format!("{name} mesh is not watertight")));
        }
    }
    let (ba, bb) = (Bvh::new(a), Bvh::new(b));
    let Some(region) = ba.bounds().zip(bb.bounds()).and_then(|(x, y)| x.intersection(&y)) else {
        return Ok(0.0);
    };
    // The grid tiles the region exactly, so each axis pitch is at most
    // `voxel` and no partial cell hangs past the far faces.
    let ext = region.max - region.min;
    let cells = ext.map(|e| ((e / voxel).ceil() as usize).max(1));
    let (nx, ny, nz) = (cells.x, cells.y, cells.z);
    let pitch = Vector3::new(ext.x / nx as f64, ext.y / ny as f64, ext.z / nz as f64);
    let center = |lo: f64, i: usize, p: f64| lo + (i as f64 + 0.5) * p;

    let count: u64 = (0..ny * nz)
        .into_par_iter()
        .map(|col| {
            let (j, k) = (col / nz, col % nz);
            let (y, z) = (center(region.min.y, j, pitch.y), center(region.min.z, k, pitch.z));
            let xa = ba.crossings_along_x(y, z);
            if xa.is_empty() {
                return 0;
            }
            let xb = bb.crossings_along_x(y, z);
            let inside = |xs: &[f64], x: f64| (xs.len() - xs.partition_point(|&c| c <= x)) % 2 == 1;
            (0..nx)
                .filter(|&i| {
                    let x = center(region.min.x, i, pitch.x);
                    inside(&xa, x) && inside(&xb, x)
                })
                .count() as u64
        })
        .sum();
    Ok(count as f64 * pitch.x * pitch.y * pitch.z / 1000.0)
}

/// Number of intersecting triangle pairs that share no vertex.
pub fn self_penetration(mesh: &MeshGeometry) -> usize {
    Bvh::new(mesh).self_intersections().len()
}

/// Poses the hand, places the object and checks all three criteria.
pub fn validate_grasp(
    g: &GraspRecord,
    rig: &Rig,
    assets: &AssetRegistry,
    thresholds: &ValidationThresholds,
) -> Result<GraspVerdict> {
    let object = assets
        .mesh(&g.object_id)?
        .transformed(g.object.rotation_quat(), g.object.translation());
    let hand = rig.pose_mesh(&g.hand, &g.hand_translation)?;
    validate_meshes(&hand, &object, thresholds)
}

pub fn validate_meshes(
    hand: &MeshGeometry,
    object: &MeshGeometry,
    thresholds: &ValidationThresholds,
) -> Result<GraspVerdict> {
    thresholds.check()?;
    let distance = min_surface_distance(hand, object)?;
    let volume = intersection_volume_named(("hand", hand), ("object", object), thresholds.voxel_mm)?;
    let pairs = self_penetration(hand);
    Ok(GraspVerdict::from_measurements(distance, volume, pairs, thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use crate::pose::{HandPose, ObjectPose, Quaternion, Source};
    use crate::skinning::toy;
    use nalgebra::{Point3, Vector3};

    fn square(z: f64) -> MeshGeometry {
        MeshGeometry::new(
            vec![
                Point3::new(0.0, 0.0, z),
                Point3::new(1.0, 0.0, z),
                Point3::new(1.0, 1.0, z),
                Point3::new(0.0, 1.0, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn parallel_squares_and_coincident_triangles() {
        assert!((min_surface_distance(&square(0.0), &square(7.0)).unwrap() - 7.0).abs() < 1e-12);
        assert_eq!(min_surface_distance(&square(0.0), &square(0.0)).unwrap(), 0.0);
        assert!(min_surface_distance(&square(0.0), &MeshGeometry::default()).is_err());
    }

    #[test]
    fn slab_overlap_of_two_cubes() {
        let a = shapes::cube(Point3::new(0.0, 0.0, 0.0), 20.0);
        let b = shapes::cube(Point3::new(10.0, 0.0, 0.0), 20.0);
        let v = intersection_volume(&a, &b, 1.0).unwrap();
        assert!((v - 4.0).abs() <= 0.2, "{v}");
        let far = shapes::cube(Point3::new(100.0, 0.0, 0.0), 20.0);
        assert_eq!(intersection_volume(&a, &far, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn open_mesh_is_named() {
        let err = intersection_volume(&shapes::cube(Point3::origin(), 2.0), &square(0.0), 1.0).unwrap_err();
        assert!(err.to_string().contains("second mesh"), "{err}");
    }

    #[test]
    fn self_penetration_ignores_neighbours() {
        assert_eq!(self_penetration(&shapes::uv_sphere(Point3::origin(), 5.0, 8, 12)), 0);
        assert_eq!(self_penetration(&square(0.0)), 0);
        let slab = shapes::cuboid(Point3::new(-10.0, -10.0, -2.0), Point3::new(10.0, 10.0, 2.0));
        let rod = shapes::cylinder(Point3::new(0.0, 0.0, -8.0), 3.0, 16.0, 10);
        assert!(self_penetration(&slab.merged(&rod)) > 0);
    }

    fn grasp_at(object: Vector3<f64>) -> GraspRecord {
        GraspRecord {
            sequence_id: "s".into(),
            frame_index: 0,
            object_id: "ball".into(),
            source: Source::Synthetic,
            hand: HandPose::neutral(15),
            hand_translation: Vector3::zeros(),
            object: ObjectPose::new(Quaternion::IDENTITY, object),
            grasping: None,
        }
    }

    #[test]
    fn far_and_buried_hands_are_rejected() {
        let assets = AssetRegistry::from_meshes([(
            "ball".to_string(),
            shapes::uv_sphere(Point3::origin(), 25.0, 12, 16),
        )]);
        let rig = toy::rig();
        let t = ValidationThresholds::default();
        let far = validate_grasp(&grasp_at(Vector3::new(0.0, 40.0, 200.0)), &rig, &assets, &t).unwrap();
        assert!(!far.valid);
        assert_eq!(far.reasons, [Rejection::NoContact]);
        let buried = validate_grasp(&grasp_at(Vector3::new(0.0, 40.0, 0.0)), &rig, &assets, &t).unwrap();
        assert!(buried.reasons.contains(&Rejection::Intersection));
        // Ball resting 1 mm below the palm face.
        let touching = validate_grasp(&grasp_at(Vector3::new(0.0, 40.0, -36.0)), &rig, &assets, &t).unwrap();
        assert!(touching.valid, "{touching:?}");
        let mut missing = grasp_at(Vector3::zeros());
        missing.object_id = "mug".into();
        assert!(matches!(validate_grasp(&missing, &rig, &assets, &t), Err(Error::Lookup(_))));
    }
}
