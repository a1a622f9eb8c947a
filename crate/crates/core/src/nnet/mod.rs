//! Tensors, a reverse-mode tape, the U-Net family used by template generation
//! and refinement, the multi-view loss, and Adam.

mod adam;
mod graph;
mod loss;
mod nets;
mod params;
mod tensor;

pub use adam::Adam;
pub use graph::{Gradients, Graph, Var};
pub use loss::{multiview_loss, MultiviewLoss};
pub use nets::{
    geo_encode, geo_encode_graph, geometry_input, heads_graph, image_tensor, template_graph, unet_forward, unet_graph,
};
pub use params::{
    NetConfig, NetworkParams, ShareMode, GEOMETRY_INPUT, HEAD_OUTPUT, NETWORKS, PARAMS_VERSION, POSE_INPUT,
    TEMPLATE_OUTPUT, TEXTURE_INPUT, VIEWS,
};
pub use tensor::{FeatureMap, Provenance, Tensor};

#[cfg(test)]
mod tests;
