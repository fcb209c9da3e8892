//! Exact triangle kernels and a bounding volume hierarchy for distance,
//! overlap and inside queries.

mod bvh;
mod triangle;

pub use bvh::{Aabb, Bvh};
pub use triangle::{
    closest_point_on_triangle, segment_segment_distance_sq, triangle_distance, triangles_intersect, Tri,
};
