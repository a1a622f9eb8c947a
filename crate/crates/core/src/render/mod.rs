//! Camera model, splat rasterizer with exact reverse pass, and mesh geometry renders.

mod camera;
mod image;
mod mesh_raster;
mod raster;

pub use camera::{four_view_rig, Camera};
pub use image::{Image, ImageBuf};
pub use mesh_raster::{rasterize_mesh_geometry, GeometryRender};
pub use raster::{
    project_gaussian, rasterize, rasterize_backward, rasterize_with, GaussianGrads, Projected, RasterConfig,
    RenderOutput, RenderWorkspace,
};
