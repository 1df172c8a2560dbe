use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ap::{average_precision, match_frame};
use super::oks::OksParams;
use super::ospa::{ospa_iou_frame, OspaConfig};
use super::MetricsError;
use crate::dataio::{Dataset, FrameAnnotations};
use crate::exec::Execution;

pub const DEFAULT_OKS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub oks: OksParams,
    pub oks_threshold: f64,
    pub ospa: OspaConfig,
    pub execution: Execution,
    /// Extra key/values copied verbatim into the report (seeds, file names).
    pub extra: BTreeMap<String, String>,
}

impl EvalConfig {
    pub fn new(oks: OksParams) -> Self {
        Self {
            oks,
            oks_threshold: DEFAULT_OKS_THRESHOLD,
            ospa: OspaConfig::default(),
            execution: Execution::default(),
            extra: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        self.ospa.validate()?;
        OksParams::new(self.oks.sigmas.clone())?;
        if !(0.0..=1.0).contains(&self.oks_threshold) {
            return Err(MetricsError::InvalidConfig(format!(
                "OKS threshold {} outside [0, 1]",
                self.oks_threshold
            )));
        }
        Ok(())
    }
}

/// Everything needed to re-run an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub schema: String,
    pub oks_threshold: f64,
    pub sigmas: Vec<f64>,
    pub ospa_order: f64,
    pub ospa_cutoff: f64,
    pub ospa_base_distance: String,
    pub ap_interpolation: String,
    pub ap_ranking: String,
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_id: String,
    pub ospa_iou: f64,
    pub num_pred: usize,
    pub num_gt: usize,
    pub oks_matches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean per-frame OSPA over all ground-truth frames.
    pub ospa_iou: f64,
    /// AP at `config.oks_threshold` (0.5 unless configured otherwise).
    pub ap_05: f64,
    pub num_frames: usize,
    pub num_pred: usize,
    pub num_gt: usize,
    pub per_frame: Vec<FrameReport>,
    pub config: ConfigEcho,
}

/// Scores `preds` against `gts`.
///
/// Work is split per ground-truth frame (OSPA plus OKS matching) and may run
/// in parallel; the OSPA mean is summed in frame-id order and AP uses one
/// global ranking, so the result does not depend on scheduling.
pub fn evaluate(preds: &Dataset, gts: &Dataset, config: &EvalConfig) -> Result<EvalReport, MetricsError> {
    config.validate()?;
    super::check_compatible(preds, gts)?;

    let empty = FrameAnnotations::default();
    let indexed: Vec<(usize, &FrameAnnotations)> = gts.frames().iter().enumerate().collect();
    let per_frame = config.execution.try_map(&indexed, |&(i, gt)| {
        let pred = preds.frame(&gt.frame_id).unwrap_or(&empty);
        let ospa = ospa_iou_frame(pred, gt, &config.ospa)?;
        let matches = match_frame(i, pred, gt, &config.oks, config.oks_threshold)?;
        let report = FrameReport {
            frame_id: gt.frame_id.clone(),
            ospa_iou: ospa,
            num_pred: pred.persons.len(),
            num_gt: gt.persons.len(),
            oks_matches: matches.num_matched(),
        };
        Ok::<_, MetricsError>((report, matches))
    })?;

    let num_frames = per_frame.len();
    let ospa_sum: f64 = per_frame.iter().map(|(r, _)| r.ospa_iou).sum();
    let ospa_iou = if num_frames == 0 { 0.0 } else { ospa_sum / num_frames as f64 };

    let matchable: usize = per_frame.iter().map(|(_, m)| m.num_gt).sum();
    let mut detections = Vec::new();
    let mut reports = Vec::with_capacity(num_frames);
    for (report, matches) in per_frame {
        detections.extend(matches.detections);
        reports.push(report);
    }
    let ap_05 = average_precision(detections, matchable);

    Ok(EvalReport {
        ospa_iou,
        ap_05,
        num_frames,
        num_pred: preds.num_persons(),
        num_gt: gts.num_persons(),
        per_frame: reports,
        config: ConfigEcho {
            schema: gts.schema_id().to_string(),
            oks_threshold: config.oks_threshold,
            sigmas: config.oks.sigmas.clone(),
            ospa_order: config.ospa.order,
            ospa_cutoff: config.ospa.cutoff,
            ospa_base_distance: "1 - IoU".into(),
            ap_interpolation: "101-point".into(),
            ap_ranking: "dataset-global, greedy best-OKS matching".into(),
            extra: config.extra.clone(),
        },
    })
}
