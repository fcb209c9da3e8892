use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Point3;

use super::triangle::{triangle_distance, triangles_intersect, Tri};
use crate::mesh::MeshGeometry;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn of_points<'a>(pts: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut it = pts.into_iter();
        let first = *it.next().expect("bounding box of no points");
        it.fold(Aabb { min: first, max: first }, |b, p| Aabb {
            min: b.min.inf(p),
            max: b.max.sup(p),
        })
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&o.min),
            max: self.max.sup(&o.max),
        }
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= o.max[k] && o.min[k] <= self.max[k])
    }

    pub fn distance_sq(&self, o: &Aabb) -> f64 {
        (0..3)
            .map(|k| {
                let gap = (o.min[k] - self.max[k]).max(self.min[k] - o.max[k]).max(0.0);
                gap * gap
            })
            .sum()
    }

    pub fn intersection(&self, o: &Aabb) -> Option<Aabb> {
        let b = Aabb {
            min: self.min.sup(&o.min),
            max: self.max.inf(&o.max),
        };
        (0..3).all(|k| b.min[k] <= b.max[k]).then_some(b)
    }

    fn covers_yz(&self, y: f64, z: f64) -> bool {
        self.min.y <= y && y <= self.max.y && self.min.z <= z && z <= self.max.z
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

/// Bounding volume hierarchy over the triangles of one mesh.
#[derive(Clone, Debug)]
pub struct Bvh {
    tris: Vec<Tri>,
    faces: Vec<[u32; 3]>,
    /// Triangle indices, permuted so every leaf covers a contiguous range.
    order: Vec<usize>,
    nodes: Vec<(Aabb, Node)>,
}

impl Bvh {
    pub fn new(mesh: &MeshGeometry) -> Self {
        let tris: Vec<Tri> = mesh.triangles().collect();
        let boxes: Vec<Aabb> = tris.iter().map(|t| Aabb::of_points(t)).collect();
        let centroids: Vec<Point3<f64>> = tris
            .iter()
            .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let mut bvh = Bvh {
            tris,
            faces: mesh.faces.clone(),
            order: (0..boxes.len()).collect(),
            nodes: Vec::new(),
        };
        if !boxes.is_empty() {
            let n = boxes.len();
            bvh.build(&boxes, &centroids, 0, n);
        }
        bvh
    }

    fn build(&mut self, boxes: &[Aabb], centroids: &[Point3<f64>], start: usize, end: usize) -> usize {
        let bounds = self.order[start..end]
            .iter()
            .map(|&i| boxes[i])
            .reduce(|a, b| a.union(&b))
            .expect("non-empty range");
        let id = self.nodes.len();
        self.nodes.push((bounds, Node::Leaf { start, end }));
        if end - start <= LEAF_SIZE {
            return id;
        }
        let cb = Aabb::of_points(self.order[start..end].iter().map(|&i| &centroids[i]));
        let ext = cb.max - cb.min;
        let axis = ext.imax();
        if ext[axis] <= 0.0 {
            return id;
        }
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let left = self.build(boxes, centroids, start, mid);
        let right = self.build(boxes, centroids, mid, end);
        self.nodes[id].1 = Node::Inner { left, right };
        id
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        self.nodes.first().map(|n| n.0)
    }

    fn leaf_tris(&self, start: usize, end: usize) -> &[usize] {
        &self.order[start..end]
    }

    /// Minimum distance between the surfaces of two meshes.
    pub fn min_distance(&self, other: &Bvh) -> f64 {
        if self.is_empty() || other.is_empty() {
            return f64::INFINITY;
        }
        #[derive(PartialEq)]
        struct Entry(f64, usize, usize);
        impl Eq for Entry {}
        impl PartialOrd for Entry {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Entry {
            // Min-heap on the lower bound.
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then((o.1, o.2).cmp(&(self.1, self.2)))
            }
        }

        let mut best = f64::INFINITY;
        let mut heap = BinaryHeap::new();
        heap.push(Entry(self.nodes[0].0.distance_sq(&other.nodes[0].0), 0, 0));
        while let Some(Entry(bound, a, b)) = heap.pop() {
            if bound >= best * best {
                break;
            }
            match (&self.nodes[a].1, &other.nodes[b].1) {
                (Node::Leaf { start: sa, end: ea }, Node::Leaf { start: sb, end: eb }) => {
                    for &i in self.leaf_tris(*sa, *ea) {
                        for &j in other.leaf_tris(*sb, *eb) {
                            best = best.min(triangle_distance(&self.tris[i], &other.tris[j]));
                        }
                    }
                    if best == 0.0 {
                        break;
                    }
                }
                (Node::Inner { left, right }, Node::Leaf { .. }) => {
                    for c in [*left, *right] {
                        heap.push(Entry(self.nodes[c].0.distance_sq(&other.nodes[b].0), c, b));
                    }
                }
                (Node::Leaf { .. }, Node::Inner { left, right }) => {
                    for c in [*left, *right] {
                        heap.push(Entry(self.nodes[a].0.distance_sq(&other.nodes[c].0), a, c));
                    }
                }
                (Node::Inner { left: la, right: ra }, Node::Inner { left: lb, right: rb }) => {
                    for ca in [*la, *ra] {
                        for cb in [*lb, *rb] {
                            let d = self.nodes[ca].0.distance_sq(&other.nodes[cb].0);
                            heap.push(Entry(d, ca, cb));
                        }
                    }
                }
            }
        }
        best
    }

    /// Pairs `(i, j)`, `i < j`, of intersecting triangles that share no
    /// vertex index.
    pub fn self_intersections(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if !self.is_empty() {
            self.self_pairs(0, 0, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn self_pairs(&self, a: usize, b: usize, out: &mut Vec<(usize, usize)>) {
        if !self.nodes[a].0.overlaps(&self.nodes[b].0) {
            return;
        }
        match (&self.nodes[a].1, &self.nodes[b].1) {
            (Node::Leaf { start: sa, end: ea }, Node::Leaf { start: sb, end: eb }) => {
                for &i in self.leaf_tris(*sa, *ea) {
                    for &j in self.leaf_tris(*sb, *eb) {
                        if a == b && i >= j {
                            continue;
                        }
                        let (i, j) = (i.min(j), i.max(j));
                        let (fi, fj) = (self.faces[i], self.faces[j]);
                        if fi.iter().any(|v| fj.contains(v)) {
                            continue;
                        }
                        if triangles_intersect(&self.tris[i], &self.tris[j]) {
                            out.push((i, j));
                        }
                    }
                }
            }
            (Node::Inner { left, right }, _) if a == b => {
                let (l, r) = (*left, *right);
                self.self_pairs(l, l, out);
                self.self_pairs(r, r, out);
                self.self_pairs(l, r, out);
            }
            (Node::Inner { left, right }, _) => {
                let (l, r) = (*left, *right);
                self.self_pairs(l, b, out);
                self.self_pairs(r, b, out);
            }
            (Node::Leaf { .. }, Node::Inner { left, right }) => {
                let (l, r) = (*left, *right);
                self.self_pairs(a, l, out);
                self.self_pairs(a, r, out);
            }
        }
    }

    /// x-coordinates where the line `{(t, y, z)}` crosses the surface, sorted.
    ///
    /// Edge and vertex hits are resolved by symbolic perturbation of the line
    /// to `(y + ε, z + ε²)`, so a closed mesh always yields an even count.
    pub fn crossings_along_x(&self, y: f64, z: f64) -> Vec<f64> {
        let mut xs = Vec::new();
        if self.is_empty() {
            return xs;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let (bb, node) = &self.nodes[n];
            if !bb.covers_yz(y, z) {
                continue;
            }
            match node {
                Node::Leaf { start, end } => {
                    for &i in self.leaf_tris(*start, *end) {
                        if let Some(x) = line_crossing_x(&self.tris[i], y, z) {
                            xs.push(x);
                        }
                    }
                }
                Node::Inner { left, right } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        xs
    }

    /// Ray parity along `+x`.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let xs = self.crossings_along_x(p.y, p.z);
        xs.iter().filter(|&&x| x > p.x).count() % 2 == 1
    }
}

/// Sign of the orientation of `q` against edge `a → b` in the yz plane,
/// under the perturbation `q ↦ (q.y + ε, q.z + ε²)`. Edges are evaluated in
/// a canonical endpoint order so both triangles sharing an edge agree.
fn perturbed_orient(a: (f64, f64), b: (f64, f64), q: (f64, f64)) -> (i8, f64) {
    let swapped = a > b;
    let (a, b) = if swapped { (b, a) } else { (a, b) };
    let (dy, dz) = (b.0 - a.0, b.1 - a.1);
    let raw = dy * (q.1 - a.1) - dz * (q.0 - a.0);
    let sign = if raw != 0.0 {
        raw.signum()
    } else if dz != 0.0 {
        -dz.signum()
    } else {
        dy.signum()
    };
    let flip = if swapped { -1.0 } else { 1.0 };
    ((sign * flip) as i8, raw * flip)
}

fn line_crossing_x(t: &Tri, y: f64, z: f64) -> Option<f64> {
    let yz = |p: &Point3<f64>| (p.y, p.z);
    let (a, b, c) = (yz(&t[0]), yz(&t[1]), yz(&t[2]));
    let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    if area == 0.0 {
        return None;
    }
    let q = (y, z);
    let (sc, wc) = perturbed_orient(a, b, q);
    let (sa, wa) = perturbed_orient(b, c, q);
    let (sb, wb) = perturbed_orient(c, a, q);
    if sa != sb || sb != sc {
        return None;
    }
    let total = wa + wb + wc;
    if total == 0.0 {
        return None;
    }
    Some((wa * t[0].x + wb * t[1].x + wc * t[2].x) / total)
}
