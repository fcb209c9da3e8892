//! Procedural toy dataset for the built-in rig: three objects, a few
//! captured-style sequences and a pool of canonical synthetic grasps, some
//! of them deliberately broken.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{shapes, MeshGeometry};
use crate::pipeline::manifest::{write_atomic, Manifest, ManifestHeader};
use crate::pipeline::{read_annotation, ConditionEntry, ConditionsHeader, Prediction, CONDITIONS};
use crate::pose::{random_axis, GraspRecord, HandPose, ObjectPose, Quaternion, Source};
use crate::seed;
use crate::skinning::{toy, Rig};
use crate::validator::{min_surface_distance, validate_meshes, ValidationThresholds};

pub const OBJECTS: [&str; 3] = ["box", "can", "ball"];
/// Surface gap left between hand and object in a valid grasp, in mm.
pub const CONTACT_GAP_MM: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flaw {
    None,
    PushedIn,
    PulledAway,
    HyperCurled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyFixture {
    pub seed: u64,
    pub frames_per_sequence: usize,
    pub static_frames: usize,
    pub synthetic_per_object: usize,
    /// Fraction of synthetic grasps that are broken on purpose.
    pub flawed_fraction: f64,
    /// Largest rigid rotation of a lifted object, in degrees.
    pub max_motion_deg: f64,
    /// Largest rigid translation of a lifted object, in mm.
    pub max_motion_mm: f64,
}

impl Default for ToyFixture {
    fn default() -> Self {
        ToyFixture {
            seed: 2024,
            frames_per_sequence: 25,
            static_frames: 10,
            synthetic_per_object: 100,
            flawed_fraction: 0.2,
            max_motion_deg: 20.0,
            max_motion_mm: 40.0,
        }
    }
}

pub struct FixtureData {
    pub assets: Vec<(String, MeshGeometry)>,
    pub real: Manifest,
    pub synthetic: Manifest,
    /// Parallel to `synthetic.records`.
    pub flaws: Vec<Flaw>,
}

pub fn object_mesh(id: &str) -> Result<MeshGeometry> {
    let (mesh, color) = match id {
        "box" => (
            shapes::cuboid(Point3::new(-30.0, -35.0, -20.0), Point3::new(30.0, 35.0, 20.0)),
            [200, 60, 50],
        ),
        "can" => (shapes::cylinder(Point3::new(0.0, 0.0, -45.0), 30.0, 90.0, 24), [60, 120, 200]),
        "ball" => (shapes::uv_sphere(Point3::origin(), 30.0, 12, 24), [70, 180, 80]),
        _ => return Err(Error::Lookup(format!("no toy object named `{id}`"))),
    };
    // Shade by height so the texture map is not flat.
    let colors = mesh
        .vertices
        .iter()
        .map(|v| {
            let k = 0.75 + 0.25 * (v.z / 45.0).clamp(-1.0, 1.0);
            color.map(|c| (f64::from(c) * k).round() as u8)
        })
        .collect();
    Ok(MeshGeometry {
        colors: Some(colors),
        ..mesh
    })
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Quaternion {
    let axis = random_axis(rng);
    Quaternion::from_axis_angle(&axis, rng.random::<f64>() * PI)
}

fn curled_pose(rig: &Rig, rng: &mut ChaCha8Rng, max_deg: f64) -> HandPose {
    let mut pose = HandPose::neutral(rig.joint_count());
    for j in 1..=rig.joint_count() {
        let angle = rng.random::<f64>() * max_deg.to_radians();
        pose.joint_rots[j - 1] = Quaternion::from_axis_angle(&toy::flex_axis(j), angle);
    }
    pose
}

/// Slides the object toward the palm along +z until its surface is `gap`
/// away from the hand. Returns the object center.
fn place_against(hand: &MeshGeometry, object: &MeshGeometry, rot: &Quaternion, xy: [f64; 2], gap: f64) -> Result<Vector3<f64>> {
    let at = |z: f64| Vector3::new(xy[0], xy[1], z);
    let dist = |z: f64| min_surface_distance(hand, &object.transformed(rot, &at(z)));
    let (mut far, mut near) = (-250.0, toy::PALM_MIN[2] + toy::PALM_MAX[2]);
    if dist(far)? <= gap {
        return Err(Error::invalid("object cannot be placed clear of the hand"));
    }
    for _ in 0..32 {
        let mid = 0.5 * (far + near);
        if dist(mid)? > gap {
            far = mid;
        } else {
            near = mid;
        }
    }
    Ok(at(far))
}

/// One canonical grasp of `object_id` with the requested flaw.
pub fn canonical_grasp(rig: &Rig, object_id: &str, flaw: Flaw, rng: &mut ChaCha8Rng) -> Result<GraspRecord> {
    let object = object_mesh(object_id)?;
    let thresholds = ValidationThresholds::default();
    for _ in 0..64 {
        let pose = curled_pose(rig, rng, 25.0);
        let hand = rig.pose_mesh(&pose, &Vector3::zeros())?;
        let rot = random_rotation(rng);
        let xy = [rng.random_range(-10.0..10.0), rng.random_range(30.0..50.0)];
        let center = place_against(&hand, &object, &rot, xy, CONTACT_GAP_MM)?;
        let mut record = GraspRecord {
            sequence_id: String::new(),
            frame_index: 0,
            object_id: object_id.to_string(),
            source: Source::Synthetic,
            hand: pose,
            hand_translation: Vector3::zeros(),
            object: ObjectPose::new(rot, center),
            grasping: None,
        };
        let posed = object.transformed(&rot, &center);
        if !validate_meshes(&hand, &posed, &thresholds)?.valid {
            continue;
        }
        match flaw {
            Flaw::None => return Ok(record),
            Flaw::PushedIn => {
                // Push until the overlap is unambiguous; a fingertip contact
                // needs a deeper push than a palm contact.
                for depth in [15.0, 25.0, 35.0] {
                    let c = center + Vector3::new(0.0, 0.0, depth);
                    let v = validate_meshes(&hand, &object.transformed(&rot, &c), &thresholds)?;
                    if v.intersection_volume > 2.0 * thresholds.volume_cm3 {
                        record.object = ObjectPose::new(rot, c);
                        return Ok(record);
                    }
                }
            }
            Flaw::PulledAway => {
                record.object = ObjectPose::new(rot, center - Vector3::new(0.0, 0.0, 30.0));
                return Ok(record);
            }
            Flaw::HyperCurled => {
                for f in 0..4 {
                    for p in 0..3 {
                        let j = toy::joint_index(f, p);
                        record.hand.joint_rots[j - 1] = Quaternion::from_axis_angle(&toy::flex_axis(j), 0.5 * PI);
                    }
                }
                let curled = rig.pose_mesh(&record.hand, &Vector3::zeros())?;
                if validate_meshes(&curled, &posed, &thresholds)?.self_penetration_pairs > 0 {
                    return Ok(record);
                }
            }
        }
    }
    Err(Error::invalid(format!("could not build a {flaw:?} grasp of `{object_id}`")))
}

/// Camera-facing orientation for captured sequences: palm toward +x,
/// fingers pointing up the image.
fn base_orientation() -> Quaternion {
    Quaternion::from_axis_angle(&Vector3::z(), PI).compose(&Quaternion::from_axis_angle(&Vector3::y(), 0.5 * PI))
}

impl ToyFixture {
    pub fn generate(&self) -> Result<FixtureData> {
        let rig = toy::rig();
        let assets = OBJECTS
            .iter()
            .map(|id| Ok((id.to_string(), object_mesh(id)?)))
            .collect::<Result<Vec<_>>>()?;

        let mut real = Vec::new();
        for (s, object_id) in ["box", "box", "can", "ball"].iter().enumerate() {
            let mut rng = seed::rng(self.seed, "fixture/real", s as u64);
            let grasp = canonical_grasp(&rig, object_id, Flaw::None, &mut rng)?;
            let tilt = Quaternion::from_axis_angle(&random_axis(&mut rng), rng.random::<f64>() * 15f64.to_radians());
            let q = tilt.compose(&base_orientation());
            let target = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 450.0);
            let placed = grasp.transformed(&q, &(target - q.rotate(grasp.object.translation())));
            let axis = random_axis(&mut rng);
            let dir = random_axis(&mut rng);
            let moving = (self.frames_per_sequence - self.static_frames).max(1) as f64;
            for i in 0..self.frames_per_sequence {
                let k = (i + 1).saturating_sub(self.static_frames) as f64 / moving;
                let r = Quaternion::from_axis_angle(&axis, k * self.max_motion_deg.to_radians());
                let c = *placed.object.translation();
                let t = c + k * self.max_motion_mm * dir - r.rotate(&c);
                let mut frame = placed.transformed(&r, &t);
                frame.sequence_id = format!("{object_id}-{}", (b'a' + s as u8) as char);
                frame.frame_index = i as u64;
                frame.source = Source::Real;
                real.push(frame);
            }
        }

        let jobs: Vec<(&str, usize)> = OBJECTS
            .iter()
            .flat_map(|id| (0..self.synthetic_per_object).map(move |i| (*id, i)))
            .collect();
        let pool: Vec<(GraspRecord, Flaw)> = jobs
            .par_iter()
            .map(|&(object_id, i)| {
                let mut rng = seed::rng(self.seed, &format!("fixture/synthetic/{object_id}"), i as u64);
                let flaw = if rng.random::<f64>() < self.flawed_fraction {
                    [Flaw::PushedIn, Flaw::PulledAway, Flaw::HyperCurled][rng.random_range(0..3)]
                } else {
                    Flaw::None
                };
                let mut g = canonical_grasp(&rig, object_id, flaw, &mut rng)?;
                g.sequence_id = format!("pool-{object_id}");
                g.frame_index = i as u64;
                Ok((g, flaw))
            })
            .collect::<Result<_>>()?;
        let (synthetic, flaws): (Vec<_>, Vec<_>) = pool.into_iter().unzip();
        let joints = rig.joint_count();
        Ok(FixtureData {
            assets,
            real: Manifest::new(ManifestHeader::new(joints, Some("assets".into())), real)?,
            synthetic: Manifest::new(ManifestHeader::new(joints, Some("assets".into())), synthetic)?,
            flaws,
        })
    }
}

pub const FIXTURE_CONFIG: &str = "\
real_manifest = \"real.jsonl\"
synthetic_manifest = \"synthetic.jsonl\"
out = \"out\"
seed = 7
edge_j_threshold_mm = 20.0
edge_v_threshold_mm = 20.0
";

impl FixtureData {
    /// Writes `assets/*.obj`, `real.jsonl`, `synthetic.jsonl` and
    /// `config.toml` into `dir`; returns the config path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let assets = dir.join("assets");
        std::fs::create_dir_all(&assets).map_err(|e| Error::io(&assets, e))?;
        for (id, mesh) in &self.assets {
            write_atomic(&assets.join(format!("{id}.obj")), mesh.to_obj().as_bytes())?;
        }
        self.real.write(&dir.join("real.jsonl"))?;
        self.synthetic.write(&dir.join("synthetic.jsonl"))?;
        let config = dir.join("config.toml");
        write_atomic(&config, FIXTURE_CONFIG.as_bytes())?;
        Ok(config)
    }
}

/// Noisy reconstructions of every condition set in a pipeline output
/// directory. Every `outlier_every`-th sample (0 = none) is scaled about
/// its root so it fails any reasonable edge-case threshold.
pub fn simulate_predictions(dir: &Path, noise_mm: f64, outlier_every: usize, root_seed: u64) -> Result<Vec<Prediction>> {
    let (_, entries): (ConditionsHeader, Vec<ConditionEntry>) =
        crate::pipeline::manifest::read_jsonl(&dir.join(CONDITIONS))?;
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let (joints, vertices) = read_annotation(dir, &e.stem)?;
            let mut rng = seed::rng(root_seed, &format!("predict/{}", e.stem), 0);
            let root = joints[0];
            let scale = if outlier_every > 0 && i % outlier_every == outlier_every - 1 { 1.5 } else { 1.0 };
            let mut jitter = |p: &Point3<f64>| {
                let n = Vector3::from_fn(|_, _| rng.random_range(-noise_mm..=noise_mm));
                (root + scale * (p - root) + n).coords.into()
            };
            Ok(Prediction {
                id: e.stem.clone(),
                joints: joints.iter().map(&mut jitter).collect(),
                vertices: vertices.iter().map(&mut jitter).collect(),
            })
        })
        .collect()
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut text = String::new();
    for p in predictions {
        text.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::AssetRegistry;
    use crate::validator::validate_grasp;

    #[test]
    fn clean_and_flawed_grasps_validate_as_intended() {
        let rig = toy::rig();
        let reg = AssetRegistry::from_meshes(OBJECTS.iter().map(|id| (id.to_string(), object_mesh(id).unwrap())));
        let th = ValidationThresholds::default();
        for (i, flaw) in [Flaw::None, Flaw::PushedIn, Flaw::PulledAway, Flaw::HyperCurled].into_iter().enumerate() {
            for object_id in OBJECTS {
                let mut rng = seed::rng(1, "t", i as u64);
                let g = canonical_grasp(&rig, object_id, flaw, &mut rng).unwrap();
                let v = validate_grasp(&g, &rig, &reg, &th).unwrap();
                assert_eq!(v.valid, flaw == Flaw::None, "{object_id} {flaw:?}: {v:?}");
                if flaw == Flaw::None {
                    assert!((v.contact_distance - CONTACT_GAP_MM).abs() < 1e-6);
                }
            }
        }
    }
}
