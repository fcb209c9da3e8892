//! Pinhole camera and a z-buffered software rasterizer producing normal,
//! color, segmentation and depth buffers.
//!
//! Geometry follows the OpenCV camera convention (`+z` forward, `+y` down,
//! pixel centers at integer coordinates). Normal maps are stored in the
//! OpenGL-style camera frame (`+z` toward the viewer), so a surface facing
//! the camera encodes as `(128, 128, 255)`.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::mesh::MeshGeometry;
use crate::pose::Quaternion;

/// Triangles with a vertex closer than this (mm) are skipped.
pub const NEAR_PLANE_MM: f64 = 1.0;
pub const DEFAULT_RESOLUTION: u32 = 256;
pub const MIN_RESOLUTION: u32 = 8;
const FALLBACK_COLOR: [u8; 3] = [180, 180, 180];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World to camera: `p_cam = rotation · p_world + translation`.
    #[serde(default = "identity")]
    pub rotation: Quaternion,
    #[serde(default, with = "crate::pose::vec3")]
    pub translation: Vector3<f64>,
}

fn identity() -> Quaternion {
    Quaternion::IDENTITY
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            rotation: Quaternion::IDENTITY,
            translation: Vector3::zeros(),
        };
        cam.check()?;
        Ok(cam)
    }

    /// Centered camera with identity extrinsics for a square image.
    pub fn centered(focal: f64, resolution: u32) -> Result<Self> {
        let c = f64::from(resolution) / 2.0 - 0.5;
        Self::new(focal, focal, c, c)
    }

    pub fn with_extrinsics(mut self, rotation: Quaternion, translation: Vector3<f64>) -> Self {
        self.rotation = rotation;
        self.translation = translation;
        self
    }

    pub fn check(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::config(format!(
                "camera needs positive finite focal lengths, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.rotate(&p.coords) + self.translation)
    }

    /// Pixel coordinates `(u, v)` and depth of a camera-frame point.
    pub fn project_camera(&self, p: &Point3<f64>) -> (f64, f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z)
    }

    /// Projects a world point; `None` behind the near plane.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        (c.z >= NEAR_PLANE_MM).then(|| self.project_camera(&c))
    }
}

/// Per-pixel labels.
pub const BACKGROUND: u8 = 0;
pub const HAND: u8 = 1;
pub const OBJECT: u8 = 2;

/// One mesh to draw. Colors come from per-vertex colors, else from `texture`
/// sampled at the vertex UVs, else a flat gray.
#[derive(Clone, Copy, Debug)]
pub struct SceneMesh<'a> {
    pub mesh: &'a MeshGeometry,
    pub label: u8,
    pub texture: Option<&'a RgbImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderBuffers {
    pub width: u32,
    pub height: u32,
    pub normal: RgbImage,
    pub color: RgbImage,
    pub segmentation: Vec<u8>,
    /// Camera-frame depth in mm; `INFINITY` where nothing was drawn.
    pub depth: Vec<f64>,
}

impl RenderBuffers {
    fn new(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        RenderBuffers {
            width,
            height,
            normal: RgbImage::new(width, height),
            color: RgbImage::new(width, height),
            segmentation: vec![BACKGROUND; n],
            depth: vec![f64::INFINITY; n],
        }
    }

    pub fn label_at(&self, x: u32, y: u32) -> u8 {
        self.segmentation[(y * self.width + x) as usize]
    }

    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        self.depth[(y * self.width + x) as usize]
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.segmentation.iter().filter(|&&l| l == label).count()
    }
}

/// Encodes a unit camera-frame (OpenCV) normal as an 8-bit color in the
/// OpenGL-style frame.
pub fn encode_normal(n_cv: &Vector3<f64>) -> [u8; 3] {
    let gl = [n_cv.x, -n_cv.y, -n_cv.z];
    gl.map(|c| ((c * 0.5 + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Inverse of [`encode_normal`] up to quantization, in the OpenGL frame.
pub fn decode_normal(rgb: [u8; 3]) -> Vector3<f64> {
    let [x, y, z] = rgb.map(|c| f64::from(c) / 255.0 * 2.0 - 1.0);
    Vector3::new(x, y, z)
}

fn quantize(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| v.round().clamp(0.0, 255.0) as u8)
}

struct Vert {
    screen: (f64, f64),
    inv_z: f64,
    normal: Vector3<f64>,
    color: [f64; 3],
    uv: [f64; 2],
}

pub fn rasterize(scene: &[SceneMesh<'_>], cam: &Camera, width: u32, height: u32) -> Result<RenderBuffers> {
    cam.check()?;
    if width < MIN_RESOLUTION || height < MIN_RESOLUTION {
        return Err(Error::config(format!(
            "resolution {width}x{height} is below {MIN_RESOLUTION}x{MIN_RESOLUTION}"
        )));
    }
    let mut out = RenderBuffers::new(width, height);
    let cam_rot = cam.rotation.to_rotation_matrix();
    for item in scene {
        let mesh = item.mesh;
        mesh.validate()?;
        let computed;
        let normals = match &mesh.normals {
            Some(n) => n,
            None => {
                computed = mesh.clone().with_vertex_normals().normals.unwrap_or_default();
                &computed
            }
        };
        let verts: Vec<Option<Vert>> = mesh
            .vertices
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let c = cam.to_camera(p);
                if !(c.z >= NEAR_PLANE_MM) {
                    return None;
                }
                let (u, v, z) = cam.project_camera(&c);
                let color = match &mesh.colors {
                    Some(cs) => cs[i].map(f64::from),
                    None => FALLBACK_COLOR.map(f64::from),
                };
                Some(Vert {
                    screen: (u, v),
                    inv_z: 1.0 / z,
                    normal: cam_rot * normals[i],
                    color,
                    uv: mesh.uvs.as_ref().map_or([0.0; 2], |uvs| uvs[i]),
                })
            })
            .collect();
        // Per-vertex colors take precedence over a UV texture.
        let texture = item.texture.filter(|_| mesh.colors.is_none() && mesh.uvs.is_some());
        for f in &mesh.faces {
            let [Some(a), Some(b), Some(c)] = f.map(|i| verts[i as usize].as_ref()) else {
                continue;
            };
            draw_triangle(&mut out, [a, b, c], item.label, texture);
        }
    }
    Ok(out)
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Whether pixels exactly on edge `a → b` belong to the triangle: the edge's
/// inward normal must point to `+x`, or to `+y` when vertical in normal.
/// Two triangles sharing an edge have opposite inward normals, so exactly
/// one of them claims it.
fn owns_edge(a: (f64, f64), b: (f64, f64)) -> bool {
    let n = (-(b.1 - a.1), b.0 - a.0);
    n.0 > 0.0 || (n.0 == 0.0 && n.1 > 0.0)
}

fn draw_triangle(out: &mut RenderBuffers, tri: [&Vert; 3], label: u8, texture: Option<&RgbImage>) {
    let [mut a, mut b, c] = tri;
    let mut area = edge(a.screen, b.screen, c.screen);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        std::mem::swap(&mut a, &mut b);
        area = -area;
    }
    let xs = [a.screen.0, b.screen.0, c.screen.0];
    let ys = [a.screen.1, b.screen.1, c.screen.1];
    let lo_x = xs.iter().copied().fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let hi_x = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).floor().min(f64::from(out.width - 1));
    let lo_y = ys.iter().copied().fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let hi_y = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max).floor().min(f64::from(out.height - 1));
    if lo_x > hi_x || lo_y > hi_y {
        return;
    }
    // Edge k is opposite vertex k.
    let edges = [(b.screen, c.screen), (c.screen, a.screen), (a.screen, b.screen)];
    let owns = edges.map(|(s, e)| owns_edge(s, e));
    let verts = [a, b, c];
    for py in lo_y as u32..=hi_y as u32 {
        for px in lo_x as u32..=hi_x as u32 {
            let p = (f64::from(px), f64::from(py));
            let mut l = [0.0; 3];
            let mut inside = true;
            for k in 0..3 {
                let w = edge(edges[k].0, edges[k].1, p);
                if w < 0.0 || (w == 0.0 && !owns[k]) {
                    inside = false;
                    break;
                }
                l[k] = w / area;
            }
            if !inside {
                continue;
            }
            let pw = [l[0] * verts[0].inv_z, l[1] * verts[1].inv_z, l[2] * verts[2].inv_z];
            let inv_z = pw[0] + pw[1] + pw[2];
            let z = 1.0 / inv_z;
            let idx = (py * out.width + px) as usize;
            if !(z < out.depth[idx]) {
                continue;
            }
            let bary = pw.map(|w| w * z);
            let n = verts
                .iter()
                .zip(bary)
                .fold(Vector3::zeros(), |acc, (v, t)| acc + v.normal * t);
            let n = n.try_normalize(1e-12).unwrap_or(-Vector3::z());
            let color = match texture {
                Some(tex) => {
                    let uv = verts.iter().zip(bary).fold([0.0; 2], |acc, (v, t)| {
                        [acc[0] + v.uv[0] * t, acc[1] + v.uv[1] * t]
                    });
                    tex.sample_bilinear(uv[0], uv[1])
                }
                None => verts.iter().zip(bary).fold([0.0; 3], |acc, (v, t)| {
                    [acc[0] + v.color[0] * t, acc[1] + v.color[1] * t, acc[2] + v.color[2] * t]
                }),
            };
            out.depth[idx] = z;
            out.segmentation[idx] = label;
            out.normal.pixels[idx] = encode_normal(&n);
            out.color.pixels[idx] = quantize(color);
        }
    }
}
