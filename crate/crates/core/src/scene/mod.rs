//! Scene construction: perspective-consistent placement, rasterization,
//! compositing, SSIM, and relighting.

mod composite;
mod raster;
mod relight;
mod ssim;
mod timespace;

pub use crate::bbox::BoundingBox;
pub use composite::{composite, composite_backward};
pub use raster::{rasterize, Palette, RenderOutput, TexelTap, AMBIENT, DIFFUSE};
pub use relight::{relight_optimize, RelightConfig, RelightResult, Relighting};
pub use ssim::{ssim, ssim_with_grad, WINDOW as SSIM_WINDOW};
pub use timespace::{
    derive_render_params, place_boxes, timespace_sample, Camera, Placement, RenderParams,
    TimeSpaceBoxes, MAX_DISTANCE, MIN_BOX_HEIGHT, MIN_DISTANCE,
};
