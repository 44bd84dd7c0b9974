//! The 6D video data model: paired RGB/XYZ frames, XYZ initialization and
//! scaling, the latent codec, latent normalization, guided masks and
//! point-cloud export.

mod codec;
pub mod io;
mod mask;
mod norm;
mod video;

pub use codec::{CodecConfig, LatentCodec, LatentGrid};
pub use mask::{build_guided_mask, GuidedMask, KNOWN, SOFT, UNKNOWN};
pub use norm::{compute_norm_stats, normalize_latent, Direction, NormStats, STD_FLOOR};
pub(crate) use video::percentile;
pub use video::{
    init_xyz, normalize_scene_extent, xyz_to_pointcloud, Modality, PointCloud, SceneTransform, SixDVideo,
    EXTENT_PERCENTILE,
};
