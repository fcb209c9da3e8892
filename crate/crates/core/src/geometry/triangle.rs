//! Exact triangle-level kernels.

use nalgebra::{Point3, Vector3};

pub type Tri = [Point3<f64>; 3];

/// Closest point to `p` on triangle `t` (region classification over the
/// Voronoi regions of the vertices, edges and face).
pub fn closest_point_on_triangle(p: &Point3<f64>, t: &Tri) -> Point3<f64> {
    let [a, b, c] = t;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + v * ab;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + w * ac;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + w * (c - b);
    }
    let denom = va + vb + vc;
    if denom.abs() < f64::MIN_POSITIVE {
        // Degenerate triangle: fall back to its edges.
        return [(a, b), (b, c), (c, a)]
            .into_iter()
            .map(|(s, e)| closest_point_on_segment(p, s, e))
            .min_by(|x, y| (x - p).norm_squared().total_cmp(&(y - p).norm_squared()))
            .unwrap_or(*a);
    }
    let v = vb / denom;
    let w = vc / denom;
    a + ab * v + ac * w
}

fn closest_point_on_segment(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> Point3<f64> {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    a + d * ((p - a).dot(&d) / len2).clamp(0.0, 1.0)
}

/// Squared distance between segments `p1q1` and `p2q2`.
pub fn segment_segment_distance_sq(
    p1: &Point3<f64>,
    q1: &Point3<f64>,
    p2: &Point3<f64>,
    q2: &Point3<f64>,
) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= f64::EPSILON * f64::EPSILON && e <= f64::EPSILON * f64::EPSILON {
        return r.norm_squared();
    }
    if a <= f64::EPSILON * f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON * f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm_squared()
}

fn project(t: &Tri, axis: &Vector3<f64>) -> (f64, f64) {
    let d = [axis.dot(&t[0].coords), axis.dot(&t[1].coords), axis.dot(&t[2].coords)];
    (d[0].min(d[1]).min(d[2]), d[0].max(d[1]).max(d[2]))
}

/// Separating-axis test. Touching triangles count as intersecting.
pub fn triangles_intersect(a: &Tri, b: &Tri) -> bool {
    let ea = [a[1] - a[0], a[2] - a[1], a[0] - a[2]];
    let eb = [b[1] - b[0], b[2] - b[1], b[0] - b[2]];
    let na = ea[0].cross(&ea[1]);
    let nb = eb[0].cross(&eb[1]);

    let separated = |axis: &Vector3<f64>| {
        // Skip numerically null axes; they carry no separation information.
        let scale = axis.norm_squared();
        if scale <= 1e-24 {
            return false;
        }
        let (amin, amax) = project(a, axis);
        let (bmin, bmax) = project(b, axis);
        amax < bmin || bmax < amin
    };

    if separated(&na) || separated(&nb) {
        return false;
    }
    for x in &ea {
        for y in &eb {
            let axis = x.cross(y);
            // Near-parallel edge pairs give unreliable axes.
            if axis.norm_squared() <= 1e-12 * x.norm_squared() * y.norm_squared() {
                continue;
            }
            if separated(&axis) {
                return false;
            }
        }
    }
    // Coplanar (or parallel) configurations also need in-plane edge normals.
    let cross = na.cross(&nb);
    if cross.norm_squared() <= 1e-12 * na.norm_squared() * nb.norm_squared() {
        for e in &ea {
            if separated(&na.cross(e)) {
                return false;
            }
        }
        for e in &eb {
            if separated(&nb.cross(e)) {
                return false;
            }
        }
    }
    true
}

/// Exact minimum distance between two triangles; zero when they intersect.
pub fn triangle_distance(a: &Tri, b: &Tri) -> f64 {
    if triangles_intersect(a, b) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for p in a {
        best = best.min((closest_point_on_triangle(p, b) - p).norm_squared());
    }
    for p in b {
        best = best.min((closest_point_on_triangle(p, a) - p).norm_squared());
    }
    for i in 0..3 {
        for j in 0..3 {
            best = best.min(segment_segment_distance_sq(
                &a[i],
                &a[(i + 1) % 3],
                &b[j],
                &b[(j + 1) % 3],
            ));
        }
    }
    best.sqrt()
}
