//! Triangle meshes and a minimal Wavefront OBJ reader/writer.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::pose::Quaternion;

/// Triangle mesh in millimeters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeshGeometry {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub uvs: Option<Vec<[f64; 2]>>,
}

impl MeshGeometry {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = MeshGeometry {
            vertices,
            faces,
            ..Default::default()
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Checks face indices, attribute lengths and normal lengths.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some((i, f)) = self
            .faces
            .iter()
            .enumerate()
            .find(|(_, f)| f.iter().any(|&v| v as usize >= n))
        {
            return Err(Error::invalid(format!(
                "face {i} {f:?} references a vertex beyond {n}"
            )));
        }
        let lens = [
            ("normals", self.normals.as_ref().map(Vec::len)),
            ("colors", self.colors.as_ref().map(Vec::len)),
            ("uvs", self.uvs.as_ref().map(Vec::len)),
        ];
        for (name, len) in lens {
            if let Some(len) = len.filter(|&l| l != n) {
                return Err(Error::invalid(format!("{len} {name} for {n} vertices")));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.iter().any(|v| (v.norm() - 1.0).abs() > 1e-4) {
                return Err(Error::invalid("vertex normals must be unit length"));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Point3<f64>; 3] {
        self.faces[i].map(|v| self.vertices[v as usize])
    }

    pub fn triangles(&self) -> impl Iterator<Item = [Point3<f64>; 3]> + '_ {
        (0..self.faces.len()).map(|i| self.triangle(i))
    }

    /// Axis-aligned bounds `(min, max)`; `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    /// Every undirected edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        let mut edges: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        edges.values().all(|&c| c == 2)
    }

    /// Replaces normals with area-weighted vertex normals.
    pub fn with_vertex_normals(mut self) -> Self {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = f.map(|v| self.vertices[v as usize]);
            let n = (b - a).cross(&(c - a));
            for &v in f {
                acc[v as usize] += n;
            }
        }
        let normals = acc
            .into_iter()
            .map(|n| n.try_normalize(1e-12).unwrap_or_else(Vector3::z))
            .collect();
        self.normals = Some(normals);
        self
    }

    /// Applies `x ↦ q·x + t` to vertices and rotates normals.
    pub fn transformed(&self, q: &Quaternion, t: &Vector3<f64>) -> Self {
        let m = q.to_rotation_matrix();
        MeshGeometry {
            vertices: self.vertices.iter().map(|p| m * p + t).collect(),
            faces: self.faces.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| m * n).collect()),
            colors: self.colors.clone(),
            uvs: self.uvs.clone(),
        }
    }

    /// Concatenates two meshes. Attributes survive only if both carry them.
    pub fn merged(&self, other: &MeshGeometry) -> Self {
        let offset = self.vertices.len() as u32;
        fn join<T: Clone>(a: &Option<Vec<T>>, b: &Option<Vec<T>>) -> Option<Vec<T>> {
            match (a, b) {
                (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
                _ => None,
            }
        }
        MeshGeometry {
            vertices: self.vertices.iter().chain(&other.vertices).copied().collect(),
            faces: self
                .faces
                .iter()
                .copied()
                .chain(other.faces.iter().map(|f| f.map(|v| v + offset)))
                .collect(),
            normals: join(&self.normals, &other.normals),
            colors: join(&self.colors, &other.colors),
            uvs: join(&self.uvs, &other.uvs),
        }
    }

    /// Parses `v`, `vt` and `f` records; polygons are fan-triangulated.
    pub fn parse_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut colors: Vec<[u8; 3]> = Vec::new();
        let mut uvs_raw = Vec::new();
        let mut faces = Vec::new();
        let mut face_uvs: Vec<[Option<usize>; 3]> = Vec::new();

        let bad = |line_no: usize, what: &str| {
            Error::invalid(format!("obj line {}: {what}", line_no + 1))
        };
        for (line_no, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let vals: Vec<f64> = it
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(line_no, "bad vertex"))?;
                    match vals.len() {
                        3 => {}
                        6 => colors.push([3, 4, 5].map(|i| (vals[i].clamp(0.0, 1.0) * 255.0).round() as u8)),
                        _ => return Err(bad(line_no, "vertex needs 3 or 6 values")),
                    }
                    vertices.push(Point3::new(vals[0], vals[1], vals[2]));
                }
                Some("vt") => {
                    let vals: Vec<f64> = it
                        .take(2)
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(line_no, "bad texture coordinate"))?;
                    if vals.len() != 2 {
                        return Err(bad(line_no, "texture coordinate needs 2 values"));
                    }
                    uvs_raw.push([vals[0], vals[1]]);
                }
                Some("f") => {
                    let mut corners = Vec::new();
                    for tok in it {
                        let mut parts = tok.split('/');
                        let v = resolve_index(parts.next(), vertices.len())
                            .ok_or_else(|| bad(line_no, "bad face index"))?;
                        let vt = parts.next().and_then(|s| resolve_index(Some(s), uvs_raw.len()));
                        corners.push((v, vt));
                    }
                    if corners.len() < 3 {
                        return Err(bad(line_no, "face needs at least 3 vertices"));
                    }
                    for k in 1..corners.len() - 1 {
                        let tri = [corners[0], corners[k], corners[k + 1]];
                        faces.push(tri.map(|c| c.0 as u32));
                        face_uvs.push(tri.map(|c| c.1));
                    }
                }
                _ => {}
            }
        }

        let mut mesh = MeshGeometry {
            colors: (colors.len() == vertices.len() && !colors.is_empty()).then_some(colors),
            vertices,
            faces,
            ..Default::default()
        };
        // Per-vertex UVs only when every corner agrees on its vertex's UV.
        if !uvs_raw.is_empty() {
            let mut per_vertex: Vec<Option<[f64; 2]>> = vec![None; mesh.vertices.len()];
            let mut consistent = true;
            for (f, fu) in mesh.faces.iter().zip(&face_uvs) {
                for k in 0..3 {
                    let Some(t) = fu[k] else {
                        consistent = false;
                        continue;
                    };
                    let slot = &mut per_vertex[f[k] as usize];
                    match slot {
                        Some(prev) if *prev != uvs_raw[t] => consistent = false,
                        _ => *slot = Some(uvs_raw[t]),
                    }
                }
            }
            if consistent && per_vertex.iter().all(Option::is_some) {
                mesh.uvs = Some(per_vertex.into_iter().flatten().collect());
            }
        }
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn read_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    /// Writes vertices (with colors when present) and faces.
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.vertices.iter().enumerate() {
            match &self.colors {
                Some(c) => {
                    let [r, g, b] = c[i].map(|x| f64::from(x) / 255.0);
                    let _ = writeln!(out, "v {} {} {} {r} {g} {b}", v.x, v.y, v.z);
                }
                None => {
                    let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
                }
            }
        }
        if let Some(uvs) = &self.uvs {
            for uv in uvs {
                let _ = writeln!(out, "vt {} {}", uv[0], uv[1]);
            }
        }
        for f in &self.faces {
            let [a, b, c] = f.map(|v| v + 1);
            if self.uvs.is_some() {
                let _ = writeln!(out, "f {a}/{a} {b}/{b} {c}/{c}");
            } else {
                let _ = writeln!(out, "f {a} {b} {c}");
            }
        }
        out
    }
}

fn resolve_index(tok: Option<&str>, len: usize) -> Option<usize> {
    let i: i64 = tok.filter(|s| !s.is_empty())?.parse().ok()?;
    let idx = if i < 0 { len as i64 + i } else { i - 1 };
    (0..len as i64).contains(&idx).then_some(idx as usize)
}

/// Closed, outward-facing primitives used by fixtures and tests.
pub mod shapes {
    use super::*;
    use std::f64::consts::PI;

    /// Axis-aligned box between `lo` and `hi`.
    pub fn cuboid(lo: Point3<f64>, hi: Point3<f64>) -> MeshGeometry {
        let v = |x: bool, y: bool, z: bool| {
            Point3::new(
                if x { hi.x } else { lo.x },
                if y { hi.y } else { lo.y },
                if z { hi.z } else { lo.z },
            )
        };
        let vertices = vec![
            v(false, false, false),
            v(true, false, false),
            v(true, true, false),
            v(false, true, false),
            v(false, false, true),
            v(true, false, true),
            v(true, true, true),
            v(false, true, true),
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [3, 6, 2],
            [3, 7, 6],
            [0, 4, 7],
            [0, 7, 3],
            [1, 2, 6],
            [1, 6, 5],
        ];
        MeshGeometry {
            vertices,
            faces,
            ..Default::default()
        }
    }

    /// Cube with edge `size` centered at `center`.
    pub fn cube(center: Point3<f64>, size: f64) -> MeshGeometry {
        let h = Vector3::repeat(size / 2.0);
        cuboid(center - h, center + h)
    }

    /// UV sphere with `rings` latitude bands and `segments` longitudes.
    pub fn uv_sphere(center: Point3<f64>, radius: f64, rings: u32, segments: u32) -> MeshGeometry {
        let mut vertices = vec![center + Vector3::new(0.0, 0.0, radius)];
        for r in 1..rings {
            let theta = PI * f64::from(r) / f64::from(rings);
            for s in 0..segments {
                let phi = 2.0 * PI * f64::from(s) / f64::from(segments);
                vertices.push(
                    center
                        + radius
                            * Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()),
                );
            }
        }
        vertices.push(center - Vector3::new(0.0, 0.0, radius));
        let south = vertices.len() as u32 - 1;
        let ring = |r: u32, s: u32| 1 + (r - 1) * segments + s % segments;
        let mut faces = Vec::new();
        for s in 0..segments {
            faces.push([0, ring(1, s), ring(1, s + 1)]);
            faces.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
                faces.push([a, c, d]);
                faces.push([a, d, b]);
            }
        }
        MeshGeometry {
            vertices,
            faces,
            ..Default::default()
        }
    }

    /// Capped cylinder along +z from `base`, with `segments` sides.
    pub fn cylinder(base: Point3<f64>, radius: f64, height: f64, segments: u32) -> MeshGeometry {
        let mut vertices = Vec::new();
        for level in [0.0, height] {
            for s in 0..segments {
                let phi = 2.0 * PI * f64::from(s) / f64::from(segments);
                vertices.push(base + Vector3::new(radius * phi.cos(), radius * phi.sin(), level));
            }
        }
        let bottom = vertices.len() as u32;
        vertices.push(base);
        let top = bottom + 1;
        vertices.push(base + Vector3::new(0.0, 0.0, height));
        let mut faces = Vec::new();
        for s in 0..segments {
            let n = (s + 1) % segments;
            faces.push([s, n, segments + n]);
            faces.push([s, segments + n, segments + s]);
            faces.push([bottom, n, s]);
            faces.push([top, segments + s, segments + n]);
        }
        MeshGeometry {
            vertices,
            faces,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::shapes::*;
    use super::*;

    #[test]
    fn primitives_are_watertight_and_outward() {
        for m in [
            cube(Point3::origin(), 2.0),
            uv_sphere(Point3::origin(), 1.0, 8, 12),
            cylinder(Point3::origin(), 1.0, 2.0, 10),
        ] {
            assert!(m.is_watertight());
            // Outward orientation gives a positive signed volume.
            let vol: f64 = m
                .triangles()
                .map(|[a, b, c]| a.coords.dot(&b.coords.cross(&c.coords)) / 6.0)
                .sum();
            assert!(vol > 0.0);
        }
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        let mut m = cube(Point3::origin(), 1.0);
        m.faces.pop();
        assert!(!m.is_watertight());
    }

    #[test]
    fn bad_face_index_is_rejected() {
        assert!(MeshGeometry::new(vec![Point3::origin(); 2], vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn obj_round_trip_with_quads_and_colors() {
        let text = "v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 1 1 0 0 0 1\nv 0 1 0 1 1 1\nf 1 2 3 4\n";
        let m = MeshGeometry::parse_obj(text).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.colors.as_ref().unwrap()[3], [255, 255, 255]);
        let again = MeshGeometry::parse_obj(&m.to_obj()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn vertex_normals_are_unit() {
        let m = uv_sphere(Point3::origin(), 3.0, 6, 8).with_vertex_normals();
        m.validate().unwrap();
        let n0 = m.normals.as_ref().unwrap()[0];
        assert!((n0 - Vector3::z()).norm() < 1e-9);
    }
}
