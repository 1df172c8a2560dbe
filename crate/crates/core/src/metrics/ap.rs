use std::cmp::Ordering;

use super::oks::{oks, OksParams};
use super::MetricsError;
use crate::dataio::{Dataset, FrameAnnotations, Pose};
use crate::exec::Execution;
use crate::geometry::BoundingBox;

/// Number of recall levels in the interpolated AP (0, 0.01, ..., 1).
pub const RECALL_LEVELS: usize = 101;

/// One prediction after matching, with its position in the global ranking
/// tie-break order (frame index, then index within the frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedDetection {
    pub score: f64,
    pub true_positive: bool,
    pub frame: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatches {
    pub detections: Vec<RankedDetection>,
    /// Ground-truth people that can be matched (pose with a labeled keypoint).
    pub num_gt: usize,
}

impl FrameMatches {
    pub fn num_matched(&self) -> usize {
        self.detections.iter().filter(|d| d.true_positive).count()
    }
}

fn by_rank(a: &RankedDetection, b: &RankedDetection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.frame.cmp(&b.frame))
        .then(a.index.cmp(&b.index))
}

/// Greedy OKS matching inside one frame: predictions in descending score
/// order each take the still-unmatched ground truth with the highest OKS,
/// provided it reaches `threshold`. Predictions without a pose never match.
pub fn match_frame(
    frame_index: usize,
    pred: &FrameAnnotations,
    gt: &FrameAnnotations,
    params: &OksParams,
    threshold: f64,
) -> Result<FrameMatches, MetricsError> {
    let targets: Vec<(&Pose, BoundingBox)> = gt
        .persons
        .iter()
        .filter_map(|p| {
            let pose = p.pose.as_ref().filter(|pose| pose.num_labeled() > 0)?;
            Some((pose, p.effective_box()?))
        })
        .collect();

    let mut detections: Vec<RankedDetection> = pred
        .persons
        .iter()
        .enumerate()
        .map(|(index, p)| RankedDetection {
            score: p.score.unwrap_or(0.0),
            true_positive: false,
            frame: frame_index,
            index,
        })
        .collect();
    detections.sort_by(by_rank);

    let mut taken = vec![false; targets.len()];
    for det in &mut detections {
        let Some(pose) = pred.persons[det.index].pose.as_ref() else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for (g, (gt_pose, gt_box)) in targets.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let s = oks(pose, gt_pose, params, gt_box)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((g, s));
            }
        }
        if let Some((g, s)) = best {
            if s >= threshold {
                taken[g] = true;
                det.true_positive = true;
            }
        }
    }
    Ok(FrameMatches {
        detections,
        num_gt: targets.len(),
    })
}

/// 101-point interpolated average precision over a global ranking.
pub fn average_precision(mut detections: Vec<RankedDetection>, num_gt: usize) -> f64 {
    if num_gt == 0 || detections.is_empty() {
        return 0.0;
    }
    detections.sort_by(by_rank);
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(detections.len());
    let mut precision = Vec::with_capacity(detections.len());
    for (rank, d) in detections.iter().enumerate() {
        tp += usize::from(d.true_positive);
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // precision envelope: best precision at any recall at or beyond this rank
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    let mut idx = 0;
    for level in 0..RECALL_LEVELS {
        let r = level as f64 / (RECALL_LEVELS - 1) as f64;
        while idx < recall.len() && recall[idx] < r {
            idx += 1;
        }
        if idx == recall.len() {
            break;
        }
        sum += precision[idx];
    }
    sum / RECALL_LEVELS as f64
}

/// Dataset-level AP at an OKS threshold. Prediction frames missing from the
/// ground truth are an error; ground-truth frames missing from the
/// predictions count as frames without detections.
pub fn ap_at_oks(
    preds: &Dataset,
    gts: &Dataset,
    params: &OksParams,
    threshold: f64,
    exec: Execution,
) -> Result<f64, MetricsError> {
    super::check_compatible(preds, gts)?;
    let empty = FrameAnnotations::default();
    let indexed: Vec<(usize, &FrameAnnotations)> = gts.frames().iter().enumerate().collect();
    let per_frame = exec.try_map(&indexed, |&(i, gt)| {
        let pred = preds.frame(&gt.frame_id).unwrap_or(&empty);
        match_frame(i, pred, gt, params, threshold)
    })?;
    let num_gt = per_frame.iter().map(|f| f.num_gt).sum();
    let dets = per_frame.into_iter().flat_map(|f| f.detections).collect();
    Ok(average_precision(dets, num_gt))
}
