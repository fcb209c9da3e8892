//! Rotations, hand and object poses, and the grasp embedding used for all
//! similarity computations.

mod embedding;
mod grasp;
mod rotation;

pub use embedding::{
    build_pose_vector, cosine_similarity, pose_distance, pose_vector_dim, PoseVector,
};
pub(crate) use embedding::distance_with_norms;
pub(crate) use grasp::vec3;
pub use grasp::{
    align_orientation, canonicalize, GraspRecord, HandPose, ObjectPose, Source,
};
pub use rotation::{
    perturb_orientation, random_axis, rotation_angle, Quaternion, ROTATION_TOLERANCE,
};
