use serde::{Deserialize, Serialize};

use super::assignment::{min_cost_assignment, CostMatrix};
use super::MetricsError;
use crate::dataio::FrameAnnotations;
use crate::geometry::{iou, BoundingBox};

/// OSPA order `p` and cutoff `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OspaConfig {
    pub order: f64,
    pub cutoff: f64,
}

impl Default for OspaConfig {
    fn default() -> Self {
        Self { order: 1.0, cutoff: 1.0 }
    }
}

impl OspaConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.order.is_finite() && self.order >= 1.0) {
            return Err(MetricsError::InvalidConfig(format!("OSPA order {} < 1", self.order)));
        }
        if !(self.cutoff.is_finite() && self.cutoff > 0.0) {
            return Err(MetricsError::InvalidConfig(format!("OSPA cutoff {}", self.cutoff)));
        }
        Ok(())
    }
}

/// Optimal sub-pattern assignment distance between two finite sets.
///
/// With `n` the larger and `m` the smaller cardinality:
/// `((min_assignment Σ min(d, c)^p + c^p (n - m)) / n)^(1/p)`, and 0 when both
/// sets are empty. `base` must return values in `[0, ∞)`.
pub fn ospa<T, U>(
    preds: &[T],
    gts: &[U],
    base: impl Fn(&T, &U) -> f64,
    cfg: &OspaConfig,
) -> Result<f64, MetricsError> {
    cfg.validate()?;
    let (m, n) = (preds.len(), gts.len());
    let larger = m.max(n);
    if larger == 0 {
        return Ok(0.0);
    }
    let (p, c) = (cfg.order, cfg.cutoff);
    let cost = CostMatrix::from_fn(m, n, |i, j| base(&preds[i], &gts[j]).min(c).powf(p));
    let assigned = min_cost_assignment(&cost)?;
    let missing = (larger - m.min(n)) as f64;
    let mean = (assigned.total_cost + c.powf(p) * missing) / larger as f64;
    Ok(mean.powf(1.0 / p))
}

/// `1 - IoU`, the base distance used for boxes.
pub fn iou_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    1.0 - iou(a, b)
}

/// Boxes used for frame-level OSPA: the person's box, else the tight box
/// around its labeled keypoints. Persons with neither are skipped.
pub fn frame_boxes(frame: &FrameAnnotations) -> Vec<BoundingBox> {
    frame.persons.iter().filter_map(|p| p.effective_box()).collect()
}

/// OSPA between the predicted and ground-truth people of one frame with
/// `1 - IoU` as the base distance.
pub fn ospa_iou_frame(
    pred: &FrameAnnotations,
    gt: &FrameAnnotations,
    cfg: &OspaConfig,
) -> Result<f64, MetricsError> {
    ospa(&frame_boxes(pred), &frame_boxes(gt), iou_distance, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Person;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2, 1.0).unwrap()
    }

    fn frame(boxes: &[BoundingBox]) -> FrameAnnotations {
        FrameAnnotations {
            frame_id: "f".into(),
            persons: boxes
                .iter()
                .map(|b| Person { bbox: Some(*b), ..Default::default() })
                .collect(),
        }
    }

    fn table(d: &'static [&'static [f64]]) -> impl Fn(&usize, &usize) -> f64 {
        move |i, j| d[*i][*j]
    }

    #[test]
    fn identical_sets_are_zero() {
        let cfg = OspaConfig::default();
        let xs = [0usize, 1, 2];
        let v = ospa(&xs, &xs, |a, b| if a == b { 0.0 } else { 1.0 }, &cfg).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn empty_cases() {
        let cfg = OspaConfig::default();
        let none: [usize; 0] = [];
        let three = [0usize, 1, 2];
        assert_eq!(ospa(&none, &none, |_, _| 0.5, &cfg).unwrap(), 0.0);
        assert_eq!(ospa(&none, &three, |_, _| 0.5, &cfg).unwrap(), 1.0);
        assert_eq!(ospa(&three, &none, |_, _| 0.5, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn cardinality_penalty() {
        let cfg = OspaConfig::default();
        let v = ospa(&[0usize], &[0usize, 1], table(&[&[0.2, 0.6]]), &cfg).unwrap();
        assert!((v - 0.6).abs() < 1e-15);
    }

    #[test]
    fn cutoff_and_order() {
        let cfg = OspaConfig { order: 2.0, cutoff: 0.5 };
        // pair distance clipped to 0.5, plus one missing: sqrt((0.25 + 0.25) / 2)
        let v = ospa(&[0usize], &[0usize, 1], table(&[&[0.9, 0.9]]), &cfg).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(OspaConfig { order: 0.5, cutoff: 1.0 }.validate().is_err());
    }

    #[test]
    fn frame_examples() {
        let cfg = OspaConfig::default();
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(20.0, 0.0, 30.0, 10.0);
        let c = bx(100.0, 0.0, 110.0, 10.0);
        let d = bx(200.0, 0.0, 210.0, 10.0);
        assert_eq!(ospa_iou_frame(&frame(&[a, b]), &frame(&[a, b]), &cfg).unwrap(), 0.0);
        assert_eq!(ospa_iou_frame(&frame(&[a, b]), &frame(&[c, d]), &cfg).unwrap(), 1.0);
        assert_eq!(ospa_iou_frame(&frame(&[a]), &frame(&[a, c]), &cfg).unwrap(), 0.5);
    }
}
