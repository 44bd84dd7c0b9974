//! Camera and depth recovery from pixel-aligned XYZ maps.
//!
//! Each frame is initialized by a direct linear solve and then refined by
//! minimizing pixel reprojection error over a single focal length, a
//! rotation and a translation. Depth is the camera-frame `z` of each point.
//! Pixel `(u, v)` is `(column, row)`; the principal point is fixed at the
//! image center.

mod camera;
mod dlt;
mod refine;
mod sequence;
pub mod synthetic;

pub use camera::{
    backproject, image_center, orthonormalize, project, rotation_error_deg, CameraModel, CameraRecord, Projection,
    PIXEL_CONVENTION, ROTATION_TOLERANCE,
};
pub use dlt::estimate_camera_dlt;
pub use refine::{
    depth_map, refine_camera, refine_camera_with, reprojection_rmse, FrameReport, RefineOptions, DEPTH_SENTINEL,
};
pub use sequence::{recover_sequence, FocalMode, RecoveryReport, SequenceRecovery};
