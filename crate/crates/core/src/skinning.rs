//! Forward kinematics and linear blend skinning over a rig asset.
//!
//! A [`Rig`] turns a [`HandPose`] into a posed [`MeshGeometry`]. Joint `k`
//! of `HandPose::joint_rots` drives the `k`-th non-root joint in index order;
//! the global orientation and translation are applied last:
//!
//! ```text
//! world(x) = global_orient · Σ_j w_j (R_j (x − rest_j) + p_j) + translation
//! ```
//!
//! where `R_j` and `p_j` are the accumulated rotation and position of joint
//! `j` in the rig frame.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::MeshGeometry;
use crate::pose::HandPose;

/// Tolerance on each skinning-weight row summing to one.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-5;

pub const RIG_FORMAT: &str = "handbooster-rig";
pub const RIG_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Rig {
    template: MeshGeometry,
    rest_joints: Vec<Point3<f64>>,
    parents: Vec<i32>,
    /// Row-major `V × joints`.
    weights: Vec<f64>,
    /// Parents always precede children.
    order: Vec<usize>,
    /// Non-root joints in index order; `joint_rots[k]` drives `articulated[k]`.
    articulated: Vec<usize>,
}

impl Rig {
    pub fn new(
        template: MeshGeometry,
        rest_joints: Vec<Point3<f64>>,
        parents: Vec<i32>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        template.validate()?;
        let n = rest_joints.len();
        if n == 0 || parents.len() != n {
            return Err(Error::invalid(format!(
                "rig has {n} rest joints but {} parent entries",
                parents.len()
            )));
        }
        let v = template.vertices.len();
        if weights.len() != v * n {
            return Err(Error::invalid(format!(
                "weights hold {} entries, expected {v}×{n}",
                weights.len()
            )));
        }
        for (i, row) in weights.chunks(n).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "weights of vertex {i} must be non-negative and sum to 1 (sum {sum})"
                )));
            }
        }
        let order = topological_order(&parents)?;
        let articulated = (0..n).filter(|&j| parents[j] >= 0).collect();
        Ok(Rig {
            template,
            rest_joints,
            parents,
            weights,
            order,
            articulated,
        })
    }

    /// Number of articulated (non-root) joints, the expected length of
    /// `HandPose::joint_rots`.
    pub fn joint_count(&self) -> usize {
        self.articulated.len()
    }

    pub fn template(&self) -> &MeshGeometry {
        &self.template
    }

    pub fn rest_joints(&self) -> &[Point3<f64>] {
        &self.rest_joints
    }

    pub fn parents(&self) -> &[i32] {
        &self.parents
    }

    pub fn weight(&self, vertex: usize, joint: usize) -> f64 {
        self.weights[vertex * self.rest_joints.len() + joint]
    }

    /// Joint rotations and positions in the rig frame, before the global
    /// transform.
    fn articulate(&self, pose: &HandPose) -> Result<(Vec<Matrix3<f64>>, Vec<Point3<f64>>)> {
        if pose.joint_rots.len() != self.joint_count() {
            return Err(Error::invalid(format!(
                "pose has {} joint rotations, rig expects {}",
                pose.joint_rots.len(),
                self.joint_count()
            )));
        }
        let n = self.rest_joints.len();
        let mut local = vec![Matrix3::identity(); n];
        for (q, &j) in pose.joint_rots.iter().zip(&self.articulated) {
            local[j] = q.to_rotation_matrix();
        }
        let mut rot = vec![Matrix3::identity(); n];
        let mut pos = self.rest_joints.clone();
        for &j in &self.order {
            match usize::try_from(self.parents[j]) {
                Err(_) => rot[j] = local[j],
                Ok(p) => {
                    pos[j] = pos[p] + rot[p] * (self.rest_joints[j] - self.rest_joints[p]);
                    rot[j] = rot[p] * local[j];
                }
            }
        }
        Ok((rot, pos))
    }

    /// World-space joint positions, root first in rig index order.
    pub fn joint_positions(
        &self,
        pose: &HandPose,
        global_translation: &Vector3<f64>,
    ) -> Result<Vec<Point3<f64>>> {
        let (_, pos) = self.articulate(pose)?;
        let g = pose.global_orient.to_rotation_matrix();
        Ok(pos.iter().map(|p| g * p + global_translation).collect())
    }

    /// Skins the template. Faces, colors and UVs are reused; normals are
    /// recomputed from the posed geometry.
    pub fn pose_mesh(&self, pose: &HandPose, global_translation: &Vector3<f64>) -> Result<MeshGeometry> {
        let (rot, pos) = self.articulate(pose)?;
        let g = pose.global_orient.to_rotation_matrix();
        let n = self.rest_joints.len();
        let vertices = self
            .template
            .vertices
            .iter()
            .zip(self.weights.chunks(n))
            .map(|(v, row)| {
                let mut acc = Vector3::zeros();
                for (j, &w) in row.iter().enumerate().filter(|(_, w)| **w != 0.0) {
                    acc += w * (rot[j] * (v - self.rest_joints[j]) + pos[j].coords);
                }
                Point3::from(g * acc + global_translation)
            })
            .collect();
        let mesh = MeshGeometry {
            vertices,
            faces: self.template.faces.clone(),
            normals: None,
            colors: self.template.colors.clone(),
            uvs: self.template.uvs.clone(),
        };
        Ok(mesh.with_vertex_normals())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RigFile = serde_json::from_str(text).map_err(|e| Error::json("rig asset", e))?;
        file.into_rig()
    }

    pub fn to_json(&self) -> String {
        let file = RigFile::from_rig(self);
        serde_json::to_string_pretty(&file).expect("rig serialization is infallible")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn topological_order(parents: &[i32]) -> Result<Vec<usize>> {
    let n = parents.len();
    let roots: Vec<usize> = (0..n).filter(|&j| parents[j] < 0).collect();
    if roots.len() != 1 {
        return Err(Error::invalid(format!(
            "joint tree needs exactly one root, found {}",
            roots.len()
        )));
    }
    if let Some(j) = (0..n).find(|&j| parents[j] >= n as i32 || parents[j] < -1) {
        return Err(Error::invalid(format!("joint {j} has parent out of range")));
    }
    let mut children = vec![Vec::new(); n];
    for j in 0..n {
        if parents[j] >= 0 {
            children[parents[j] as usize].push(j);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![roots[0]];
    while let Some(j) = stack.pop() {
        order.push(j);
        stack.extend(children[j].iter().rev());
    }
    if order.len() != n {
        return Err(Error::invalid("joint tree contains a cycle"));
    }
    Ok(order)
}

/// On-disk rig: float arrays are base64 of little-endian `f32`, faces are
/// little-endian `u32`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigFile {
    format: String,
    version: u32,
    vertex_count: usize,
    face_count: usize,
    joint_count: usize,
    parents: Vec<i32>,
    template_vertices: String,
    faces: String,
    joint_rest_positions: String,
    weights: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vertex_colors: Option<String>,
}

fn encode_f32(values: impl Iterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_words(field: &str, text: &str, expected: usize) -> Result<Vec<[u8; 4]>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::invalid(format!("rig field `{field}`: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(Error::invalid(format!(
            "rig field `{field}` holds {} bytes, expected {}",
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
}

fn decode_f32(field: &str, text: &str, expected: usize) -> Result<Vec<f64>> {
    let words = decode_words(field, text, expected)?;
    let values: Vec<f64> = words.into_iter().map(|w| f64::from(f32::from_le_bytes(w))).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("rig field `{field}` has non-finite values")));
    }
    Ok(values)
}

fn points(flat: &[f64]) -> Vec<Point3<f64>> {
    flat.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect()
}

impl RigFile {
    fn from_rig(rig: &Rig) -> Self {
        let t = &rig.template;
        RigFile {
            format: RIG_FORMAT.into(),
            version: RIG_VERSION,
            vertex_count: t.vertices.len(),
            face_count: t.faces.len(),
            joint_count: rig.rest_joints.len(),
            parents: rig.parents.clone(),
            template_vertices: encode_f32(t.vertices.iter().flat_map(|p| [p.x, p.y, p.z])),
            faces: B64.encode(
                t.faces
                    .iter()
                    .flatten()
                    .flat_map(|i| i.to_le_bytes())
                    .collect::<Vec<u8>>(),
            ),
            joint_rest_positions: encode_f32(rig.rest_joints.iter().flat_map(|p| [p.x, p.y, p.z])),
            weights: encode_f32(rig.weights.iter().copied()),
            vertex_colors: t.colors.as_ref().map(|cs| {
                encode_f32(cs.iter().flatten().map(|&c| f64::from(c) / 255.0))
            }),
        }
    }

    fn into_rig(self) -> Result<Rig> {
        if self.format != RIG_FORMAT || self.version != RIG_VERSION {
            return Err(Error::invalid(format!(
                "unsupported rig format {} v{}",
                self.format, self.version
            )));
        }
        let (v, f, j) = (self.vertex_count, self.face_count, self.joint_count);
        let vertices = points(&decode_f32("template_vertices", &self.template_vertices, v * 3)?);
        let faces: Vec<[u32; 3]> = decode_words("faces", &self.faces, f * 3)?
            .into_iter()
            .map(u32::from_le_bytes)
            .collect::<Vec<_>>()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let rest = points(&decode_f32("joint_rest_positions", &self.joint_rest_positions, j * 3)?);
        let mut weights = decode_f32("weights", &self.weights, v * j)?;
        // Undo f32 rounding so rows sum to one in f64.
        for row in weights.chunks_mut(j) {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() <= WEIGHT_SUM_TOLERANCE {
                row.iter_mut().for_each(|w| *w /= s);
            }
        }
        let colors = self
            .vertex_colors
            .map(|c| decode_f32("vertex_colors", &c, v * 3))
            .transpose()?
            .map(|flat| {
                flat.chunks_exact(3)
                    .map(|c| [c[0], c[1], c[2]].map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8))
                    .collect()
            });
        let template = MeshGeometry {
            vertices,
            faces,
            colors,
            ..Default::default()
        };
        Rig::new(template, rest, self.parents, weights)
    }
}

/// Procedural stand-in hand: a palm slab and five capped finger tubes with
/// three joints each, 15 articulated joints in total.
///
/// Rest frame: wrist at the origin, fingers along `+y`, palm facing `−z`,
/// thumb along `+x`. Every part is a separate closed surface with a small
/// clearance to its neighbours, so the rest pose has no self-intersections.
pub mod toy {
    use super::*;
    use std::f64::consts::PI;

    pub const PALM_MIN: [f64; 3] = [-40.0, -10.0, -10.0];
    pub const PALM_MAX: [f64; 3] = [40.0, 90.0, 10.0];
    const SIDES: u32 = 12;
    const CLEARANCE: f64 = 2.0;

    struct Finger {
        base: Vector3<f64>,
        dir: Vector3<f64>,
        radius: f64,
        segments: [f64; 3],
        color: [u8; 3],
    }

    fn fingers() -> Vec<Finger> {
        let top = PALM_MAX[1] + CLEARANCE;
        let long = |x: f64, scale: f64, color| Finger {
            base: Vector3::new(x, top, 0.0),
            dir: Vector3::y(),
            radius: 8.0,
            segments: [40.0 * scale, 25.0 * scale, 20.0 * scale],
            color,
        };
        vec![
            long(27.0, 0.95, [232, 180, 150]),
            long(9.0, 1.0, [226, 172, 140]),
            long(-9.0, 0.95, [220, 166, 134]),
            long(-27.0, 0.8, [214, 160, 128]),
            Finger {
                base: Vector3::new(PALM_MAX[0] + CLEARANCE + 1.0, 20.0, 0.0),
                dir: Vector3::x(),
                radius: 9.0,
                segments: [35.0, 25.0, 22.0],
                color: [238, 186, 156],
            },
        ]
    }

    /// Axis about which a positive angle curls `joint` (1-based rig joint
    /// index) toward the palm side.
    pub fn flex_axis(joint: usize) -> Vector3<f64> {
        let finger = (joint - 1) / 3;
        if finger == 4 {
            Vector3::y()
        } else {
            -Vector3::x()
        }
    }

    /// Rig joint index of finger `finger` (0..5, thumb last), phalanx
    /// `phalanx` (0..3).
    pub fn joint_index(finger: usize, phalanx: usize) -> usize {
        1 + 3 * finger + phalanx
    }

    pub fn rig() -> Rig {
        let palm_color = [210, 160, 130];
        let mut mesh = crate::mesh::shapes::cuboid(Point3::from(PALM_MIN), Point3::from(PALM_MAX));
        let mut colors = vec![palm_color; mesh.vertices.len()];
        let mut rest = vec![Point3::origin()];
        let mut parents = vec![-1];
        // (vertex, [(joint, weight)])
        let mut skin: Vec<Vec<(usize, f64)>> = vec![vec![(0, 1.0)]; mesh.vertices.len()];

        for (fi, f) in fingers().iter().enumerate() {
            let j0 = joint_index(fi, 0);
            let joints = [j0, j0 + 1, j0 + 2];
            let mut s = 0.0;
            for (k, len) in f.segments.iter().enumerate() {
                rest.push(Point3::from(f.base + s * f.dir));
                parents.push(if k == 0 { 0 } else { joints[k - 1] as i32 });
                s += len;
            }
            let [l1, l2, l3] = f.segments;
            let rings: [(f64, Vec<(usize, f64)>); 7] = [
                (0.0, vec![(joints[0], 1.0)]),
                (l1 / 2.0, vec![(joints[0], 1.0)]),
                (l1, vec![(joints[0], 0.5), (joints[1], 0.5)]),
                (l1 + l2 / 2.0, vec![(joints[1], 1.0)]),
                (l1 + l2, vec![(joints[1], 0.5), (joints[2], 0.5)]),
                (l1 + l2 + l3 / 2.0, vec![(joints[2], 1.0)]),
                (l1 + l2 + l3, vec![(joints[2], 1.0)]),
            ];
            // Perpendicular frame; `u × w = dir` keeps faces outward.
            let u = if f.dir.x.abs() > 0.5 { Vector3::y() } else { Vector3::z() };
            let w = f.dir.cross(&u);
            let start = mesh.vertices.len() as u32;
            for (pos, ws) in &rings {
                for side in 0..SIDES {
                    let phi = 2.0 * PI * f64::from(side) / f64::from(SIDES);
                    let off = f.radius * (phi.cos() * u + phi.sin() * w);
                    mesh.vertices.push(Point3::from(f.base + *pos * f.dir + off));
                    skin.push(ws.clone());
                }
            }
            let base_cap = mesh.vertices.len() as u32;
            mesh.vertices.push(Point3::from(f.base));
            skin.push(vec![(joints[0], 1.0)]);
            let tip_cap = base_cap + 1;
            mesh.vertices.push(Point3::from(f.base + s * f.dir));
            skin.push(vec![(joints[2], 1.0)]);
            colors.extend(std::iter::repeat_n(f.color, (rings.len() as u32 * SIDES + 2) as usize));

            let ring = |r: u32, side: u32| start + r * SIDES + side % SIDES;
            let last = rings.len() as u32 - 1;
            for r in 0..last {
                for side in 0..SIDES {
                    let (a, b) = (ring(r, side), ring(r, side + 1));
                    let (c, d) = (ring(r + 1, side), ring(r + 1, side + 1));
                    mesh.faces.push([a, d, c]);
                    mesh.faces.push([a, b, d]);
                }
            }
            for side in 0..SIDES {
                mesh.faces.push([base_cap, ring(0, side + 1), ring(0, side)]);
                mesh.faces.push([tip_cap, ring(last, side), ring(last, side + 1)]);
            }
        }

        let n = rest.len();
        let mut weights = vec![0.0; mesh.vertices.len() * n];
        for (v, ws) in skin.iter().enumerate() {
            for &(j, w) in ws {
                weights[v * n + j] = w;
            }
        }
        mesh.colors = Some(colors);
        Rig::new(mesh, rest, parents, weights).expect("toy rig is well formed")
    }
}
