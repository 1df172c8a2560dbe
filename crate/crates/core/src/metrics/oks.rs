use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::dataio::Pose;
use crate::geometry::BoundingBox;
use crate::schema::SchemaMapping;

/// COCO per-keypoint sigmas, in COCO keypoint order.
pub const COCO17_SIGMAS: [f64; 17] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
    0.087, 0.087, 0.089, 0.089,
];

/// Per-keypoint sigmas. The falloff of keypoint `i` is `k_i = 2 * sigma_i`,
/// matching the COCO evaluation code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OksParams {
    pub sigmas: Vec<f64>,
}

impl OksParams {
    pub fn new(sigmas: Vec<f64>) -> Result<Self, MetricsError> {
        if sigmas.is_empty() || sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(MetricsError::InvalidConfig(format!("sigmas must be positive: {sigmas:?}")));
        }
        Ok(Self { sigmas })
    }

    pub fn coco17() -> Self {
        Self { sigmas: COCO17_SIGMAS.to_vec() }
    }

    /// Sigmas carried through a counterpart mapping whose source is COCO;
    /// merged keypoints take the mean of their counterparts' sigmas.
    pub fn from_coco_mapping(mapping: &SchemaMapping) -> Result<Self, MetricsError> {
        let sigmas = mapping
            .entries
            .iter()
            .map(|srcs| {
                if srcs.is_empty() || srcs.iter().any(|&s| s >= COCO17_SIGMAS.len()) {
                    return Err(MetricsError::InvalidConfig(format!(
                        "mapping entry {srcs:?} is not a valid coco17 counterpart list"
                    )));
                }
                Ok(srcs.iter().map(|&s| COCO17_SIGMAS[s]).sum::<f64>() / srcs.len() as f64)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(sigmas)
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }
}

/// Object keypoint similarity: the mean over labeled ground-truth keypoints
/// of `exp(-d² / (2 s² k²))`, with `s²` the ground-truth box area.
pub fn oks(pred: &Pose, gt: &Pose, params: &OksParams, gt_box: &BoundingBox) -> Result<f64, MetricsError> {
    let k = params.len();
    for p in [pred, gt] {
        if p.len() != k {
            return Err(MetricsError::KeypointCount { expected: k, found: p.len() });
        }
    }
    let area = gt_box.area() + f64::EPSILON;
    let mut sum = 0.0;
    let mut labeled = 0usize;
    for ((g, p), sigma) in gt.keypoints.iter().zip(&pred.keypoints).zip(&params.sigmas) {
        if !g.is_labeled() {
            continue;
        }
        let (dx, dy) = (p.x - g.x, p.y - g.y);
        let falloff = 2.0 * sigma;
        sum += (-(dx * dx + dy * dy) / (2.0 * area * falloff * falloff)).exp();
        labeled += 1;
    }
    if labeled == 0 {
        return Err(MetricsError::NoLabeledKeypoints);
    }
    Ok(sum / labeled as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Keypoint, Visibility};
    use crate::schema::default_mapping;

    fn pose(points: &[(f64, f64, u8)]) -> Pose {
        Pose::new(
            points
                .iter()
                .map(|&(x, y, v)| Keypoint::new(x, y, Visibility::from_code(v).unwrap()))
                .collect(),
        )
    }

    fn unit_params(k: usize, sigma: f64) -> OksParams {
        OksParams::new(vec![sigma; k]).unwrap()
    }

    #[test]
    fn perfect_prediction_is_one() {
        let g = pose(&[(1.0, 2.0, 2), (3.0, 4.0, 1), (0.0, 0.0, 0)]);
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0, 1.0).unwrap();
        assert_eq!(oks(&g, &g, &unit_params(3, 0.05), &b).unwrap(), 1.0);
    }

    #[test]
    fn distant_prediction_vanishes() {
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0, 1.0).unwrap();
        let s = b.area().sqrt();
        let g = pose(&[(0.0, 0.0, 2)]);
        let p = pose(&[(1000.0 * s, 0.0, 2)]);
        assert!(oks(&p, &g, &unit_params(1, 0.05), &b).unwrap() < 1e-9);
    }

    #[test]
    fn one_over_e_point() {
        // d² = 2 s² k² with k = 2 sigma gives exp(-1)
        let sigma = 0.05;
        let b = BoundingBox::new(0.0, 0.0, 20.0, 5.0, 1.0).unwrap();
        let k = 2.0 * sigma;
        let d = (2.0 * b.area() * k * k).sqrt();
        let g = pose(&[(3.0, 4.0, 2), (100.0, 100.0, 0)]);
        let p = pose(&[(3.0 + d, 4.0, 0), (0.0, 0.0, 0)]);
        let v = oks(&p, &g, &unit_params(2, sigma), &b).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12, "{v}");
        assert!((v - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn errors() {
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        let g = pose(&[(0.0, 0.0, 0)]);
        assert!(matches!(oks(&g, &g, &unit_params(1, 0.1), &b), Err(MetricsError::NoLabeledKeypoints)));
        assert!(matches!(
            oks(&g, &g, &unit_params(2, 0.1), &b),
            Err(MetricsError::KeypointCount { expected: 2, found: 1 })
        ));
        assert!(OksParams::new(vec![0.1, 0.0]).is_err());
    }

    #[test]
    fn transferred_sigmas() {
        let p = OksParams::from_coco_mapping(&default_mapping()).unwrap();
        assert_eq!(p.len(), 17);
        assert_eq!(p.sigmas[0], (0.025 + 0.025) / 2.0); // head <- eyes
        assert_eq!(p.sigmas[4], 0.079); // neck <- shoulders
        assert_eq!(p.sigmas[8], 0.107); // center hip <- hips
        assert_eq!(p.sigmas[16], 0.089); // left foot <- left ankle
    }
}
