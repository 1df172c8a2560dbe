//! Non-neural stages of a top-down pose pipeline for stitched panoramas.
//!
//! The crate covers keypoint schema transfer (and the matching surgery on a
//! pose head's final convolution), panorama-aware box geometry, heatmap
//! decoding, and set-based evaluation (OSPA over box IoU, OKS average
//! precision).
//!
//! Frame-level work (evaluation, batch decoding, NMS over a dataset) runs on
//! rayon when the `parallel` feature is enabled, and falls back to plain
//! iterators otherwise. See [`exec::Execution`].

pub mod dataio;
pub mod decode;
pub mod exec;
pub mod geometry;
pub mod metrics;
pub mod schema;
pub mod synth;
pub mod weights;

pub use dataio::{Dataset, FrameAnnotations, Keypoint, Person, Pose, Visibility};
pub use decode::{decode_heatmaps, DecodedPose, HeatmapStack};
pub use exec::Execution;
pub use geometry::{AffineTransform, BoundingBox, PanoramaSpec};
pub use metrics::{evaluate, EvalConfig, EvalReport, OksParams};
pub use schema::{KeypointSchema, SchemaMapping};
pub use weights::{TensorMap, TensorRecord};
