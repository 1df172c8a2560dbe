//! Panorama box geometry.
//!
//! Boxes are half-open real-valued rectangles `[x1, x2) × [y1, y2)` in
//! panorama pixel coordinates. A stitched panorama wraps horizontally with
//! period equal to its width; stored boxes never wrap, so anything that would
//! straddle the seam after a shift is dropped instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{FrameAnnotations, Keypoint, Person, Pose};

/// Network input width used by the pose model.
pub const INPUT_WIDTH: u32 = 288;
/// Network input height used by the pose model.
pub const INPUT_HEIGHT: u32 = 384;

pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const DEFAULT_MARGIN: f64 = 0.1;
pub const DEFAULT_PADDING: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("no visible keypoints to derive a box from")]
    NoVisibleKeypoints,
    #[error("degenerate box ({x1}, {y1}, {x2}, {y2})")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid panorama size {width}x{height}")]
    InvalidPanorama { width: u32, height: u32 },
    #[error("singular transform (determinant {0})")]
    SingularTransform(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Width and height of the stitched panorama. The width is also the
/// horizontal wrap period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PanoramaSpec {
    pub width: u32,
    pub height: u32,
}

impl PanoramaSpec {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidPanorama { width, height });
        }
        Ok(Self { width, height })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl BoundingBox {
    /// Checked constructor: finite coordinates, positive extent, score in `[0, 1]`.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> Result<Self, GeometryError> {
        let b = Self { x1, y1, x2, y2, score };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite coordinate".into()));
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(GeometryError::DegenerateBox {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
            });
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(GeometryError::InvalidBox(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
            score: self.score,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    fn same_rect(&self, other: &Self) -> bool {
        self.x1 == other.x1 && self.y1 == other.y1 && self.x2 == other.x2 && self.y2 == other.y2
    }
}

/// Tight box around the labeled keypoints (visibility > 0), score 1.
///
/// Unlike [`bbox_from_pose`] this never fails on zero extent: a single
/// labeled keypoint yields a point box. Returns `None` when nothing is labeled.
pub fn enclosing_box(pose: &Pose) -> Option<BoundingBox> {
    let mut it = pose.keypoints.iter().filter(|k| k.is_labeled());
    let first = it.next()?;
    let init = (first.x, first.y, first.x, first.y);
    let (x1, y1, x2, y2) = it.fold(init, |(x1, y1, x2, y2), k| {
        (x1.min(k.x), y1.min(k.y), x2.max(k.x), y2.max(k.y))
    });
    Some(BoundingBox { x1, y1, x2, y2, score: 1.0 })
}

/// Box over the labeled keypoints, grown by `margin` times the side length on
/// every side and clamped to the panorama.
pub fn bbox_from_pose(
    pose: &Pose,
    margin: f64,
    pano: PanoramaSpec,
) -> Result<BoundingBox, GeometryError> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(GeometryError::InvalidParameter(format!("margin {margin}")));
    }
    let tight = enclosing_box(pose).ok_or(GeometryError::NoVisibleKeypoints)?;
    let dx = tight.width() * margin;
    let dy = tight.height() * margin;
    let (w, h) = (f64::from(pano.width), f64::from(pano.height));
    let b = BoundingBox {
        x1: (tight.x1 - dx).clamp(0.0, w),
        y1: (tight.y1 - dy).clamp(0.0, h),
        x2: (tight.x2 + dx).clamp(0.0, w),
        y2: (tight.y2 + dy).clamp(0.0, h),
        score: 1.0,
    };
    b.validate()?;
    Ok(b)
}

/// Intersection over union with continuous areas.
///
/// Two zero-area boxes have no union; they count as identical (1) when their
/// corners coincide and as disjoint (0) otherwise.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a.same_rect(b) { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy NMS returning the indices of kept boxes, highest score first.
/// Equal scores keep their input order.
pub fn nms_indices(dets: &[BoundingBox], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score));

    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&dets[i], &dets[j]) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

pub fn nms(dets: &[BoundingBox], iou_threshold: f64) -> Vec<BoundingBox> {
    nms_indices(dets, iou_threshold)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

fn wrap_x(x: f64, width: f64) -> f64 {
    let r = x.rem_euclid(width);
    // rem_euclid can round up to `width` for tiny negative inputs
    if r >= width {
        r - width
    } else {
        r
    }
}

/// Cyclically shifts every x coordinate of a frame by `shift` pixels and
/// drops persons whose box would straddle the seam afterwards.
///
/// The seam test uses the explicit box when present (half-open, so a box
/// ending exactly at the right edge survives) and otherwise the closed tight
/// box over labeled keypoints. Persons with neither are kept.
pub fn shift_frame(frame: &FrameAnnotations, shift: u32, pano: PanoramaSpec) -> FrameAnnotations {
    let s = shift % pano.width;
    if s == 0 {
        return frame.clone();
    }
    let w = f64::from(pano.width);
    let s = f64::from(s);

    let persons = frame
        .persons
        .iter()
        .filter_map(|p| {
            let bbox = match &p.bbox {
                Some(b) => {
                    let x1 = wrap_x(b.x1 + s, w);
                    let x2 = x1 + b.width();
                    if x2 > w {
                        return None;
                    }
                    Some(BoundingBox { x1, x2, ..*b })
                }
                None => {
                    if let Some(tight) = p.pose.as_ref().and_then(enclosing_box) {
                        let x1 = wrap_x(tight.x1 + s, w);
                        if x1 + tight.width() >= w {
                            return None;
                        }
                    }
                    None
                }
            };
            let pose = p.pose.as_ref().map(|pose| Pose {
                keypoints: pose
                    .keypoints
                    .iter()
                    .map(|k| Keypoint { x: wrap_x(k.x + s, w), ..*k })
                    .collect(),
            });
            Some(Person {
                id: p.id.clone(),
                bbox,
                pose,
                score: p.score,
            })
        })
        .collect();

    FrameAnnotations {
        frame_id: frame.frame_id.clone(),
        persons,
    }
}

/// 2×3 affine map `[a b c; d e f]` taking `(x, y)` to `(a x + b y + c, d x + e y + f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { m: [[1.0, 0.0, dx], [0.0, 1.0, dy]] }
    }

    pub fn scale_translate(sx: f64, sy: f64, dx: f64, dy: f64) -> Self {
        Self { m: [[sx, 0.0, dx], [0.0, sy, dy]] }
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let [r0, r1] = &self.m;
        (
            r0[0] * x + r0[1] * y + r0[2],
            r1[0] * x + r1[1] * y + r1[2],
        )
    }

    pub fn invert(&self) -> Result<Self, GeometryError> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(GeometryError::SingularTransform(det));
        }
        let [[a, b, c], [d, e, f]] = self.m;
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Ok(Self {
            m: [
                [ia, ib, -(ia * c + ib * f)],
                [id, ie, -(id * c + ie * f)],
            ],
        })
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &Self) -> Self {
        let [[a, b, c], [d, e, f]] = self.m;
        let [[p, q, r], [s, t, u]] = first.m;
        Self {
            m: [
                [a * p + b * s, a * q + b * t, a * r + b * u + c],
                [d * p + e * s, d * q + e * t, d * r + e * u + f],
            ],
        }
    }
}

/// The region of the panorama that [`crop_transform`] maps onto the network
/// input: the box grown about its center to the `out_w:out_h` aspect (only the
/// shorter side is padded) and then scaled by `padding`.
pub fn expanded_box(
    bbox: &BoundingBox,
    out_w: u32,
    out_h: u32,
    padding: f64,
) -> Result<BoundingBox, GeometryError> {
    if out_w == 0 || out_h == 0 {
        return Err(GeometryError::InvalidParameter(format!(
            "output size {out_w}x{out_h}"
        )));
    }
    if !(padding.is_finite() && padding > 0.0) {
        return Err(GeometryError::InvalidParameter(format!("padding {padding}")));
    }
    let (mut w, mut h) = (bbox.width(), bbox.height());
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return Err(GeometryError::DegenerateBox {
            x1: bbox.x1,
            y1: bbox.y1,
            x2: bbox.x2,
            y2: bbox.y2,
        });
    }
    let aspect = f64::from(out_w) / f64::from(out_h);
    if w > aspect * h {
        h = w / aspect;
    } else if w < aspect * h {
        w = h * aspect;
    }
    w *= padding;
    h *= padding;
    let (cx, cy) = bbox.center();
    Ok(BoundingBox {
        x1: cx - w * 0.5,
        y1: cy - h * 0.5,
        x2: cx + w * 0.5,
        y2: cy + h * 0.5,
        score: bbox.score,
    })
}

/// Transform from panorama pixels to network-input pixels for one detection.
pub fn crop_transform(
    bbox: &BoundingBox,
    out_w: u32,
    out_h: u32,
    padding: f64,
) -> Result<AffineTransform, GeometryError> {
    let region = expanded_box(bbox, out_w, out_h, padding)?;
    let sx = f64::from(out_w) / region.width();
    let sy = f64::from(out_h) / region.height();
    Ok(AffineTransform::scale_translate(
        sx,
        sy,
        -region.x1 * sx,
        -region.y1 * sy,
    ))
}
