//! Data-side machinery for synthesizing hand-object training data: grasp
//! labeling from object motion, diversity-driven pose sampling, geometric
//! grasp validation, condition-map rendering and hand-mesh evaluation
//! metrics.

pub mod assets;
pub mod conditions;
pub mod error;
pub mod fixture;
pub mod geometry;
pub mod image;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod render;
pub mod labeler;
pub mod sampler;
pub mod seed;
pub mod skinning;
pub mod validator;

pub use error::{Error, Result};
