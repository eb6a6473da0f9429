//! Voxel radiance fields: volume rendering, ROI-restricted triplet
//! rendering with density and colour mixing, pose sampling and blend
//! training.

mod blend;
mod camera;
mod field;
mod render;
mod scene;

pub use blend::{blend_radiance, evaluate_views, image_loss, mix_weights, ImageLoss, RadianceOutcome, RadianceSchedule};
pub use camera::{sample_pose, Camera, PoseSampler, Ray, RoiBox};
pub use field::{Aabb, Stencil, Vec3, VoxelRadianceField};
pub use render::{
    blend_color, blend_sigma, composite, render, render_roi, validate_roi, RoiRender, RoiScene, Sampling, MIX_EPSILON,
};
pub use scene::{BlendSpec, FieldSpec, Primitive, RadianceScene, RoiSpec};
