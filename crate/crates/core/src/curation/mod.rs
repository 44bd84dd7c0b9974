//! Clip filtering: brightness, reconstruction confidence and camera
//! smoothness metrics, top-r selection, and manifest-driven curation.

mod metrics;
mod pipeline;
mod record;
mod select;

pub use metrics::{camera_smoothness, confidence_metrics, curvature, mean_luma, trajectory_from_tensor, Smoothness};
pub use pipeline::{curate, measure_clip, reason, Combine, CurationConfig};
pub use record::{load_manifest, read_manifest, save_manifest, write_manifest, ClipFiles, ClipMetrics, ClipRecord};
pub use select::{select_top_r, top_r_count, Metric};
