//! Heatmap → keypoint decoding.
//!
//! Cell `(row i, col j)` of a heatmap stands for the crop-input point
//! `((j + 0.5) * stride, (i + 0.5) * stride)`. The peak cell is refined by a
//! quarter cell toward its larger neighbor on each axis (only away from the
//! grid border), then mapped back through the inverse crop transform.

use thiserror::Error;

use crate::dataio::{Keypoint, Pose, Visibility};
use crate::exec::Execution;
use crate::geometry::{AffineTransform, GeometryError};
use crate::weights::{DType, TensorRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("empty heatmap grid ({keypoints}x{height}x{width})")]
    EmptyGrid { keypoints: usize, height: usize, width: usize },
    #[error("heatmap shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Transform(#[from] GeometryError),
}

/// `K` score grids of `height × width` cells, row-major, plus the number of
/// crop pixels per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    keypoints: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
    stride: f64,
}

impl HeatmapStack {
    pub fn new(
        keypoints: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
        stride: f64,
    ) -> Result<Self, DecodeError> {
        if keypoints == 0 || height == 0 || width == 0 {
            return Err(DecodeError::EmptyGrid { keypoints, height, width });
        }
        if values.len() != keypoints * height * width {
            return Err(DecodeError::Shape(format!(
                "{} values for {keypoints}x{height}x{width}",
                values.len()
            )));
        }
        if !(stride.is_finite() && stride > 0.0) {
            return Err(DecodeError::Shape(format!("stride {stride}")));
        }
        Ok(Self { keypoints, height, width, values, stride })
    }

    /// Wraps an `F32` tensor of shape `[K, h, w]`.
    pub fn from_tensor(t: &TensorRecord, stride: f64) -> Result<Self, DecodeError> {
        if t.dtype() != DType::F32 {
            return Err(DecodeError::Shape(format!("dtype {} (expected F32)", t.dtype())));
        }
        match *t.shape() {
            [k, h, w] => Self::new(k, h, w, t.to_f32().expect("F32 tensor"), stride),
            ref other => Err(DecodeError::Shape(format!("expected [K, h, w], got {other:?}"))),
        }
    }

    pub fn num_keypoints(&self) -> usize {
        self.keypoints
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn grid(&self, k: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[k * n..(k + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPose {
    pub pose: Pose,
    /// Peak value of each keypoint's grid.
    pub confidences: Vec<f64>,
}

impl DecodedPose {
    /// Mean keypoint confidence clamped to `[0, 1]`.
    pub fn mean_confidence(&self) -> f64 {
        if self.confidences.is_empty() {
            return 0.0;
        }
        let m = self.confidences.iter().sum::<f64>() / self.confidences.len() as f64;
        if m.is_nan() {
            0.0
        } else {
            m.clamp(0.0, 1.0)
        }
    }
}

/// Peak cell (first in row-major order among equal maxima; NaNs never win)
/// and its quarter-cell refinement `(drow, dcol)`.
pub fn locate_peak(grid: &[f32], height: usize, width: usize) -> ((usize, usize), (f64, f64), f32) {
    let mut best = 0;
    for (i, &v) in grid.iter().enumerate() {
        if v > grid[best] || grid[best].is_nan() && !v.is_nan() {
            best = i;
        }
    }
    let (row, col) = (best / width, best % width);
    let at = |r: usize, c: usize| grid[r * width + c];
    let nudge = |lo: f32, hi: f32| {
        if hi > lo {
            0.25
        } else if lo > hi {
            -0.25
        } else {
            0.0
        }
    };
    let dcol = if col > 0 && col + 1 < width {
        nudge(at(row, col - 1), at(row, col + 1))
    } else {
        0.0
    };
    let drow = if row > 0 && row + 1 < height {
        nudge(at(row - 1, col), at(row + 1, col))
    } else {
        0.0
    };
    ((row, col), (drow, dcol), grid[best])
}

/// Decodes every keypoint of `stack` into panorama coordinates, given the
/// transform that produced the network input crop.
pub fn decode_heatmaps(stack: &HeatmapStack, crop: &AffineTransform) -> Result<DecodedPose, DecodeError> {
    let back = crop.invert()?;
    let mut keypoints = Vec::with_capacity(stack.keypoints);
    let mut confidences = Vec::with_capacity(stack.keypoints);
    for k in 0..stack.keypoints {
        let ((row, col), (drow, dcol), peak) = locate_peak(stack.grid(k), stack.height, stack.width);
        let cx = (col as f64 + dcol + 0.5) * stack.stride;
        let cy = (row as f64 + drow + 0.5) * stack.stride;
        let (x, y) = back.apply((cx, cy));
        keypoints.push(Keypoint::new(x, y, Visibility::Visible));
        confidences.push(f64::from(peak));
    }
    Ok(DecodedPose {
        pose: Pose::new(keypoints),
        confidences,
    })
}

/// Decodes many detections, one `(heatmaps, crop)` pair each.
pub fn decode_batch(
    items: &[(HeatmapStack, AffineTransform)],
    exec: Execution,
) -> Vec<Result<DecodedPose, DecodeError>> {
    exec.map(items, |(stack, crop)| decode_heatmaps(stack, crop))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(h: usize, w: usize, r: usize, c: usize) -> Vec<f32> {
        let mut g = vec![0.0; h * w];
        g[r * w + c] = 1.0;
        g
    }

    #[test]
    fn one_hot_peak_lands_on_cell_center() {
        let s = HeatmapStack::new(1, 12, 10, one_hot(12, 10, 5, 5), 4.0).unwrap();
        let d = decode_heatmaps(&s, &AffineTransform::identity()).unwrap();
        let k = d.pose.keypoints[0];
        // (5 + 0 + 0.5) * 4
        assert_eq!((k.x, k.y), (22.0, 22.0));
        assert_eq!(d.confidences, vec![1.0]);
    }

    #[test]
    fn quarter_offset_toward_larger_neighbor() {
        let mut g = one_hot(12, 10, 5, 5);
        g[5 * 10 + 6] = 0.5;
        g[4 * 10 + 5] = 0.25;
        let s = HeatmapStack::new(1, 12, 10, g, 4.0).unwrap();
        let k = decode_heatmaps(&s, &AffineTransform::identity()).unwrap().pose.keypoints[0];
        assert_eq!(k.x, (5.0 + 0.25 + 0.5) * 4.0);
        assert_eq!(k.y, (5.0 - 0.25 + 0.5) * 4.0);
    }

    #[test]
    fn no_refinement_at_border() {
        let mut g = one_hot(4, 4, 0, 3);
        g[2] = 0.9;
        let s = HeatmapStack::new(1, 4, 4, g, 2.0).unwrap();
        let ((r, c), (dr, dc), _) = locate_peak(s.grid(0), 4, 4);
        assert_eq!((r, c, dr, dc), (0, 3, 0.0, 0.0));
    }

    #[test]
    fn uniform_grid_ties_to_first_cell() {
        let s = HeatmapStack::new(2, 3, 3, vec![0.3; 18], 1.0).unwrap();
        let d = decode_heatmaps(&s, &AffineTransform::identity()).unwrap();
        for (k, c) in d.pose.keypoints.iter().zip(&d.confidences) {
            assert_eq!((k.x, k.y), (0.5, 0.5));
            assert_eq!(*c, f64::from(0.3f32));
        }
    }

    #[test]
    fn nan_never_wins() {
        let g = vec![f32::NAN, 0.1, 0.7, f32::NAN];
        let ((r, c), _, v) = locate_peak(&g, 2, 2);
        assert_eq!((r, c, v), (1, 0, 0.7));
    }

    #[test]
    fn maps_back_through_crop() {
        let crop = AffineTransform::scale_translate(0.5, 0.5, -10.0, -20.0);
        let s = HeatmapStack::new(1, 8, 8, one_hot(8, 8, 2, 3), 4.0).unwrap();
        let k = decode_heatmaps(&s, &crop).unwrap().pose.keypoints[0];
        // crop point (14, 10) -> panorama ((14 + 10) / 0.5, (10 + 20) / 0.5)
        assert_eq!((k.x, k.y), (48.0, 60.0));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            HeatmapStack::new(1, 0, 3, vec![], 4.0),
            Err(DecodeError::EmptyGrid { .. })
        ));
        assert!(matches!(HeatmapStack::new(1, 2, 2, vec![0.0; 3], 4.0), Err(DecodeError::Shape(_))));
        assert!(matches!(HeatmapStack::new(1, 1, 1, vec![0.0], 0.0), Err(DecodeError::Shape(_))));
        let t = TensorRecord::from_f32(vec![4], &[0.0; 4]).unwrap();
        assert!(HeatmapStack::from_tensor(&t, 4.0).is_err());
        let singular = AffineTransform { m: [[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]] };
        let s = HeatmapStack::new(1, 1, 1, vec![1.0], 4.0).unwrap();
        assert!(matches!(decode_heatmaps(&s, &singular), Err(DecodeError::Transform(_))));
    }

    #[test]
    fn batch_matches_single() {
        let items: Vec<_> = (0..20)
            .map(|i| {
                let s = HeatmapStack::new(1, 6, 6, one_hot(6, 6, i % 6, (i * 5) % 6), 4.0).unwrap();
                (s, AffineTransform::translation(i as f64, 0.0))
            })
            .collect();
        let seq = decode_batch(&items, Execution::Sequential);
        let par = decode_batch(&items, Execution::Parallel);
        assert_eq!(seq, par);
    }
}
