//! Condition sets: rendered maps for one grasp under one view, paired with
//! the hand orientation and the exact 3D annotation.

use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::AssetRegistry;
use crate::error::{Error, Result};
use crate::image::{write_bytes, GrayImage, RgbImage};
use crate::mesh::MeshGeometry;
use crate::pose::{align_orientation, perturb_orientation, GraspRecord, Quaternion};
use crate::render::{rasterize, Camera, RenderBuffers, SceneMesh, HAND, OBJECT};
use crate::seed;
use crate::skinning::Rig;

/// Which maps accompany the always-rendered segmentation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionVariant {
    #[default]
    NormalTexture,
    Depth,
    Skeleton,
}

impl ConditionVariant {
    pub fn name(self) -> &'static str {
        match self {
            ConditionVariant::NormalTexture => "normal-texture",
            ConditionVariant::Depth => "depth",
            ConditionVariant::Skeleton => "skeleton",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSettings {
    pub camera: Camera,
    pub width: u32,
    pub height: u32,
    pub variant: ConditionVariant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSet {
    pub sequence_id: String,
    pub frame_index: u64,
    pub view: u32,
    pub normal_map: RgbImage,
    pub texture_map: RgbImage,
    pub segmentation: GrayImage,
    /// Depth or skeleton map when a non-default variant is selected.
    pub variant_map: Option<RgbImage>,
    pub variant: ConditionVariant,
    pub hand_orient: Quaternion,
    pub camera: Camera,
    pub joints: Vec<Point3<f64>>,
    pub hand_mesh: MeshGeometry,
    /// Camera-frame depth, kept in memory for checks; not written out.
    pub depth: Vec<f64>,
}

impl ConditionSet {
    pub fn record_id(&self) -> String {
        format!("{}/{}", self.sequence_id, self.frame_index)
    }

    /// File stem `{sequence}_{frame}_{view:03}`.
    pub fn stem(&self) -> String {
        format!("{}_{}_{:03}", file_safe(&self.sequence_id), self.frame_index, self.view)
    }
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn render_conditions(
    g: &GraspRecord,
    rig: &Rig,
    assets: &AssetRegistry,
    settings: &RenderSettings,
) -> Result<ConditionSet> {
    render_view(g, rig, Some(assets), settings, 0)
}

/// Renders the hand alone; the object is left out of every map.
pub fn render_hand_conditions(g: &GraspRecord, rig: &Rig, settings: &RenderSettings) -> Result<ConditionSet> {
    render_view(g, rig, None, settings, 0)
}

fn render_view(
    g: &GraspRecord,
    rig: &Rig,
    assets: Option<&AssetRegistry>,
    settings: &RenderSettings,
    view: u32,
) -> Result<ConditionSet> {
    let hand = rig.pose_mesh(&g.hand, &g.hand_translation)?;
    let joints = rig.joint_positions(&g.hand, &g.hand_translation)?;
    let object = match assets {
        Some(reg) => {
            let asset = reg.get(&g.object_id)?;
            let mesh = asset
                .mesh
                .transformed(g.object.rotation_quat(), g.object.translation());
            Some((mesh, asset.texture.as_ref()))
        }
        None => None,
    };
    let mut scene = vec![SceneMesh {
        mesh: &hand,
        label: HAND,
        texture: None,
    }];
    if let Some((mesh, texture)) = &object {
        scene.push(SceneMesh {
            mesh,
            label: OBJECT,
            texture: *texture,
        });
    }
    let cam = &settings.camera;
    let buf = rasterize(&scene, cam, settings.width, settings.height)?;
    let variant_map = match settings.variant {
        ConditionVariant::NormalTexture => None,
        ConditionVariant::Depth => Some(depth_map(&buf)),
        ConditionVariant::Skeleton => Some(skeleton_map(&joints, rig.parents(), cam, settings.width, settings.height)),
    };
    Ok(ConditionSet {
        sequence_id: g.sequence_id.clone(),
        frame_index: g.frame_index,
        view,
        segmentation: GrayImage {
            width: buf.width,
            height: buf.height,
            pixels: buf.segmentation,
        },
        normal_map: buf.normal,
        texture_map: buf.color,
        variant_map,
        variant: settings.variant,
        hand_orient: g.hand.global_orient,
        camera: cam.clone(),
        joints,
        hand_mesh: hand,
        depth: buf.depth,
    })
}

/// Nearest visible depth maps to 255, farthest to 1, background stays 0.
fn depth_map(buf: &RenderBuffers) -> RgbImage {
    let finite = buf.depth.iter().copied().filter(|d| d.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    let span = (hi - lo).max(1e-9);
    let pixels = buf
        .depth
        .iter()
        .map(|&d| {
            if d.is_finite() {
                let g = (255.0 - 254.0 * (d - lo) / span).round() as u8;
                [g; 3]
            } else {
                [0; 3]
            }
        })
        .collect();
    RgbImage {
        width: buf.width,
        height: buf.height,
        pixels,
    }
}

const BONE_COLORS: [[u8; 3]; 6] = [
    [255, 255, 255],
    [255, 64, 64],
    [64, 255, 64],
    [64, 128, 255],
    [255, 220, 64],
    [255, 64, 255],
];

/// Bones as one-pixel lines colored per chain off the root.
fn skeleton_map(joints: &[Point3<f64>], parents: &[i32], cam: &Camera, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::new(width, height);
    let projected: Vec<Option<(f64, f64)>> = joints.iter().map(|p| cam.project(p).map(|(u, v, _)| (u, v))).collect();
    let chain = |mut j: usize| {
        while parents[j] > 0 {
            j = parents[j] as usize;
        }
        j
    };
    let mut chains: Vec<usize> = (0..joints.len()).filter(|&j| parents[j] == 0).collect();
    chains.sort_unstable();
    for (j, &p) in parents.iter().enumerate() {
        let Ok(p) = usize::try_from(p) else { continue };
        let (Some(a), Some(b)) = (projected[p], projected[j]) else {
            continue;
        };
        let k = chains.iter().position(|&c| c == chain(j)).unwrap_or(0);
        let color = BONE_COLORS[(k + 1) % BONE_COLORS.len()];
        let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (x, y) = ((a.0 + (b.0 - a.0) * t).round(), (a.1 + (b.1 - a.1) * t).round());
            if x >= 0.0 && y >= 0.0 && x < f64::from(width) && y < f64::from(height) {
                img.put(x as u32, y as u32, color);
            }
        }
    }
    img
}

/// Grasping records get `views_per_pose` independently perturbed views;
/// every other record gets one unperturbed view. Output follows input order.
pub fn make_novel_view_batch(
    records: &[GraspRecord],
    rig: &Rig,
    assets: &AssetRegistry,
    settings: &RenderSettings,
    views_per_pose: u32,
    max_angle_deg: f64,
    root_seed: u64,
) -> Result<Vec<ConditionSet>> {
    let jobs = novel_view_jobs(records, views_per_pose, max_angle_deg, root_seed)?;
    jobs.into_par_iter()
        .map(|(g, view)| {
            render_view(&g, rig, Some(assets), settings, view).map_err(|e| e.in_stage("render", g.id()))
        })
        .collect()
}

/// The perturbed records and view numbers that [`make_novel_view_batch`]
/// renders.
pub fn novel_view_jobs(
    records: &[GraspRecord],
    views_per_pose: u32,
    max_angle_deg: f64,
    root_seed: u64,
) -> Result<Vec<(GraspRecord, u32)>> {
    let mut jobs = Vec::new();
    for g in records {
        if g.grasping == Some(true) {
            for view in 0..views_per_pose {
                let mut rng = seed::rng(root_seed, &format!("novel-view/{}", g.id()), u64::from(view));
                let q = perturb_orientation(&g.hand.global_orient, max_angle_deg, &mut rng)?;
                jobs.push((align_orientation(g, &q), view));
            }
        } else {
            jobs.push((g.clone(), 0));
        }
    }
    Ok(jobs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSidecar {
    pub record_id: String,
    pub view: u32,
    pub variant: ConditionVariant,
    pub hand_orient: Quaternion,
    pub camera: Camera,
    pub joints: Vec<[f64; 3]>,
    pub mesh: String,
    pub images: Vec<String>,
}

/// Writes the maps, the annotation mesh and a JSON sidecar into `dir`.
/// Returns the written file names in a fixed order.
pub fn write_condition_set(dir: &Path, set: &ConditionSet) -> Result<Vec<PathBuf>> {
    let stem = set.stem();
    let mut images: Vec<(String, Vec<u8>)> = Vec::new();
    match set.variant {
        ConditionVariant::NormalTexture => {
            images.push((format!("{stem}.normal.png"), set.normal_map.to_png()?));
            images.push((format!("{stem}.texture.png"), set.texture_map.to_png()?));
        }
        v => {
            let map = set
                .variant_map
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("{} map missing for {stem}", v.name())))?;
            images.push((format!("{stem}.{}.png", v.name()), map.to_png()?));
        }
    }
    images.push((format!("{stem}.seg.png"), set.segmentation.to_png()?));
    let mesh_name = format!("{stem}.mesh.obj");
    let sidecar = ConditionSidecar {
        record_id: set.record_id(),
        view: set.view,
        variant: set.variant,
        hand_orient: set.hand_orient,
        camera: set.camera.clone(),
        joints: set.joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
        mesh: mesh_name.clone(),
        images: images.iter().map(|(n, _)| n.clone()).collect(),
    };
    let mut written = Vec::new();
    for (name, bytes) in &images {
        let path = dir.join(name);
        write_bytes(&path, bytes)?;
        written.push(path);
    }
    let mesh_path = dir.join(&mesh_name);
    write_bytes(&mesh_path, set.hand_mesh.to_obj().as_bytes())?;
    written.push(mesh_path);
    let json_path = dir.join(format!("{stem}.json"));
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json("condition sidecar", e))?;
    write_bytes(&json_path, json.as_bytes())?;
    written.push(json_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use crate::pose::{HandPose, ObjectPose, Source};
    use crate::render::BACKGROUND;
    use crate::skinning::toy;
    use nalgebra::Vector3;

    fn settings(variant: ConditionVariant) -> RenderSettings {
        RenderSettings {
            camera: Camera::centered(300.0, 64).unwrap(),
            width: 64,
            height: 64,
            variant,
        }
    }

    fn grasp(grasping: bool, frame: u64) -> GraspRecord {
        GraspRecord {
            sequence_id: "seq".into(),
            frame_index: frame,
            object_id: "ball".into(),
            source: Source::Real,
            hand: HandPose::neutral(15),
            hand_translation: Vector3::new(0.0, -40.0, 450.0),
            object: ObjectPose::new(Quaternion::IDENTITY, Vector3::new(0.0, 0.0, 414.0)),
            grasping: Some(grasping),
        }
    }

    fn assets() -> AssetRegistry {
        AssetRegistry::from_meshes([("ball".to_string(), shapes::uv_sphere(Point3::origin(), 25.0, 10, 14))])
    }

    #[test]
    fn hand_only_has_no_object_label() {
        let set = render_hand_conditions(&grasp(false, 0), &toy::rig(), &settings(ConditionVariant::NormalTexture)).unwrap();
        assert!(set.segmentation.pixels.iter().all(|&l| l == BACKGROUND || l == HAND));
        assert!(set.segmentation.pixels.contains(&HAND));
    }

    #[test]
    fn annotation_is_camera_independent() {
        let rig = toy::rig();
        let a = render_conditions(&grasp(false, 0), &rig, &assets(), &settings(ConditionVariant::NormalTexture)).unwrap();
        let mut other = settings(ConditionVariant::NormalTexture);
        other.camera = other.camera.with_extrinsics(
            Quaternion::from_axis_angle(&Vector3::y(), 0.3),
            Vector3::new(10.0, 0.0, 30.0),
        );
        let b = render_conditions(&grasp(false, 0), &rig, &assets(), &other).unwrap();
        assert_eq!(a.joints, b.joints);
        assert_eq!(a.hand_mesh, b.hand_mesh);
        assert_ne!(a.normal_map, b.normal_map);
        assert!(a.segmentation.pixels.contains(&OBJECT));
    }

    #[test]
    fn novel_views_count_and_orientation() {
        let rig = toy::rig();
        let records = [grasp(true, 0), grasp(false, 1), grasp(true, 2), grasp(true, 3)];
        let jobs = novel_view_jobs(&records, 5, 30.0, 7).unwrap();
        assert_eq!(jobs.len(), 3 * 5 + 1);
        let s = settings(ConditionVariant::NormalTexture);
        let sets = make_novel_view_batch(&records[..2], &rig, &assets(), &s, 2, 30.0, 7).unwrap();
        assert_eq!(sets.len(), 3);
        assert_eq!(sets[0].hand_orient, jobs[0].0.hand.global_orient);
        assert!(sets[0].hand_orient.angle_to(&Quaternion::IDENTITY) <= 30.0 + 1e-9);
        assert_eq!(sets[2].hand_orient, Quaternion::IDENTITY);
        let again = make_novel_view_batch(&records[..2], &rig, &assets(), &s, 2, 30.0, 7).unwrap();
        assert_eq!(sets, again);
    }

    #[test]
    fn writes_named_files() {
        let dir = tempfile::tempdir().unwrap();
        for variant in [ConditionVariant::NormalTexture, ConditionVariant::Depth, ConditionVariant::Skeleton] {
            let set = render_conditions(&grasp(false, 12), &toy::rig(), &assets(), &settings(variant)).unwrap();
            let files = write_condition_set(dir.path(), &set).unwrap();
            let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
            assert!(names.iter().all(|n| n.starts_with("seq_12_000.")), "{names:?}");
            assert!(names.contains(&"seq_12_000.seg.png".to_string()));
            if variant != ConditionVariant::NormalTexture {
                assert!(names.contains(&format!("seq_12_000.{}.png", variant.name())));
            }
        }
    }
}
