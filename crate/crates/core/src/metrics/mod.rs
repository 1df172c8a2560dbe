//! Set-based pose evaluation: OSPA with an IoU base distance and OKS average
//! precision, plus the assignment solver they rest on.

pub mod ap;
pub mod assignment;
pub mod eval;
pub mod oks;
pub mod ospa;

use thiserror::Error;

use crate::dataio::Dataset;

pub use ap::ap_at_oks;
pub use assignment::{brute_force_assignment, min_cost_assignment, Assignment, CostMatrix};
pub use eval::{evaluate, EvalConfig, EvalReport, FrameReport};
pub use oks::{oks, OksParams};
pub use ospa::{ospa, ospa_iou_frame, OspaConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("ground-truth pose has no labeled keypoints")]
    NoLabeledKeypoints,
    #[error("pose has {found} keypoints, OKS parameters cover {expected}")]
    KeypointCount { expected: usize, found: usize },
    #[error("cost matrix contains a non-finite entry")]
    NonFiniteCost,
    #[error("brute-force oracle limited to {limit} assignments per side, got {0}", limit = assignment::BRUTE_FORCE_LIMIT)]
    OracleTooLarge(usize),
    #[error("schema mismatch: predictions use {pred}, ground truth uses {gt}")]
    SchemaMismatch { pred: String, gt: String },
    #[error("panorama mismatch: predictions {pred:?}, ground truth {gt:?}")]
    PanoramaMismatch { pred: (u32, u32), gt: (u32, u32) },
    #[error("prediction frame {0:?} has no ground-truth frame")]
    UnknownFrame(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn check_compatible(preds: &Dataset, gts: &Dataset) -> Result<(), MetricsError> {
    if preds.schema_id() != gts.schema_id() {
        return Err(MetricsError::SchemaMismatch {
            pred: preds.schema_id().into(),
            gt: gts.schema_id().into(),
        });
    }
    let (p, g) = (preds.pano(), gts.pano());
    if p != g {
        return Err(MetricsError::PanoramaMismatch {
            pred: (p.width, p.height),
            gt: (g.width, g.height),
        });
    }
    if let Some(f) = preds.frames().iter().find(|f| gts.frame(&f.frame_id).is_none()) {
        return Err(MetricsError::UnknownFrame(f.frame_id.clone()));
    }
    Ok(())
}
