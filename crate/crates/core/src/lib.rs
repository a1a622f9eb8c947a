//! Gaussian avatar animation engine: canonical template construction from a
//! posed scan, skinning-driven re-posing, tile-based splat rendering, learned
//! refinement and evaluation metrics.

pub mod assets;
pub mod body_model;
pub mod error;
pub mod fixtures;
pub mod gaussian;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod nnet;
pub mod real;
pub mod refine;
pub mod render;
pub mod skinning;
pub mod spatial;
pub mod template;

pub use body_model::{BodyModel, JointTransforms, Joints, Pose, Shape, Skeleton};
pub use error::{Error, Result};
pub use gaussian::{AvatarState, Gaussian, GaussianSet, Stage};
pub use mesh::Mesh;
pub use skinning::{SkinningWeights, VertexTransforms};
