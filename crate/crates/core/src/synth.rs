//! Seeded synthetic panorama scenes for tests and benchmarks.
//!
//! Ground-truth people are drawn from a coarse upright body template (17
//! keypoints) placed at random scales and positions, with boxes derived from
//! the keypoints. Keypoint coordinates are multiples of 1/16 px so cyclic
//! shifts by whole pixels are exact. Predictions are ground truth plus
//! Gaussian keypoint noise; the noise directions come from a seed-fixed
//! stream and are scaled by the noise level, so runs at different levels
//! differ only in magnitude.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataio::{Dataset, FrameAnnotations, Keypoint, Person, Pose, Visibility};
use crate::geometry::{bbox_from_pose, BoundingBox, PanoramaSpec};
use crate::schema::KeypointSchema;

// (x, y) as fractions of the person's width and height, in jrdb17 order
const BODY_TEMPLATE: [(f64, f64); 17] = [
    (0.50, 0.04),
    (0.44, 0.07),
    (0.56, 0.07),
    (0.30, 0.20),
    (0.50, 0.18),
    (0.70, 0.20),
    (0.22, 0.36),
    (0.78, 0.36),
    (0.50, 0.52),
    (0.18, 0.50),
    (0.38, 0.52),
    (0.62, 0.52),
    (0.82, 0.50),
    (0.38, 0.72),
    (0.62, 0.72),
    (0.38, 0.95),
    (0.62, 0.95),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub pano: PanoramaSpec,
    pub frames: usize,
    pub min_persons: usize,
    pub max_persons: usize,
    pub min_height: f64,
    pub max_height: f64,
    /// Box margin passed to [`bbox_from_pose`].
    pub margin: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            pano: PanoramaSpec { width: 3760, height: 480 },
            frames: 50,
            min_persons: 1,
            max_persons: 8,
            min_height: 60.0,
            max_height: 320.0,
            margin: 0.1,
            seed: 0,
        }
    }
}

fn quantize(v: f64) -> f64 {
    (v * 16.0).round() / 16.0
}

fn random_person(rng: &mut ChaCha8Rng, k: usize, cfg: &SceneConfig) -> Person {
    let (w, h) = (f64::from(cfg.pano.width), f64::from(cfg.pano.height));
    let height = rng.random_range(cfg.min_height..=cfg.max_height).min(h * 0.9);
    let width = height * rng.random_range(0.3..0.55);
    // keep the grown box clear of the panorama edges
    let pad_x = width * (cfg.margin + 0.1) + 2.0;
    let pad_y = height * (cfg.margin + 0.1) + 2.0;
    let x0 = rng.random_range(pad_x..(w - width - pad_x).max(pad_x + 1.0));
    let y0 = rng.random_range(pad_y..(h - height - pad_y).max(pad_y + 1.0));

    let keypoints = (0..k)
        .map(|i| {
            let (fx, fy) = if k == BODY_TEMPLATE.len() {
                BODY_TEMPLATE[i]
            } else {
                (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))
            };
            let jx: f64 = rng.random_range(-0.04..0.04);
            let jy: f64 = rng.random_range(-0.03..0.03);
            let visibility = match rng.random_range(0..20) {
                0 => Visibility::NotLabeled,
                1..=3 => Visibility::Invisible,
                _ => Visibility::Visible,
            };
            Keypoint::new(
                quantize(x0 + (fx + jx) * width),
                quantize(y0 + (fy + jy) * height),
                visibility,
            )
        })
        .collect();
    let pose = Pose::new(keypoints);
    let bbox = bbox_from_pose(&pose, cfg.margin, cfg.pano).ok();
    Person { id: None, bbox, pose: Some(pose), score: None }
}

/// A validated ground-truth dataset with `cfg.frames` frames named
/// `frame-000`, `frame-001`, ...
pub fn ground_truth(schema: &KeypointSchema, cfg: &SceneConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frames = (0..cfg.frames)
        .map(|f| {
            let n = rng.random_range(cfg.min_persons..=cfg.max_persons);
            let persons = (0..n)
                .map(|p| Person {
                    id: Some(p.to_string()),
                    ..random_person(&mut rng, schema.len(), cfg)
                })
                .collect();
            FrameAnnotations { frame_id: format!("frame-{f:03}"), persons }
        })
        .collect();
    Dataset::new(schema, cfg.pano, frames, false).expect("synthetic ground truth is valid")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Standard deviation of the per-coordinate keypoint noise, in pixels.
    pub sigma: f64,
    /// Spurious detections added per frame, each a random person.
    pub false_positives: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.0, false_positives: 0, margin: 0.1, seed: 1 }
    }
}

/// Predictions derived from `gt`: one per ground-truth person with a pose,
/// keypoints jittered by `sigma`, box re-derived from the jittered pose, and
/// a score in `[0.05, 1]` that depends only on the seed.
pub fn noisy_predictions(gt: &Dataset, schema: &KeypointSchema, noise: &NoiseConfig) -> Dataset {
    let mut dir_rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut score_rng = ChaCha8Rng::seed_from_u64(noise.seed ^ 0x5c0e_5eed);
    let mut fp_rng = ChaCha8Rng::seed_from_u64(noise.seed.wrapping_add(7));
    let scene = SceneConfig { pano: gt.pano(), margin: noise.margin, ..SceneConfig::default() };

    let frames = gt
        .frames()
        .iter()
        .map(|frame| {
            let mut persons: Vec<Person> = frame
                .persons
                .iter()
                .filter_map(|p| {
                    let pose = p.pose.as_ref()?;
                    let keypoints = pose
                        .keypoints
                        .iter()
                        .map(|k| {
                            let zx: f64 = dir_rng.sample(StandardNormal);
                            let zy: f64 = dir_rng.sample(StandardNormal);
                            if noise.sigma == 0.0 {
                                *k
                            } else {
                                Keypoint { x: k.x + noise.sigma * zx, y: k.y + noise.sigma * zy, ..*k }
                            }
                        })
                        .collect();
                    let pose = Pose::new(keypoints);
                    let score = score_rng.random_range(0.05..=1.0);
                    let bbox = bbox_from_pose(&pose, noise.margin, gt.pano())
                        .ok()
                        .map(|b: BoundingBox| b.with_score(score));
                    Some(Person { id: p.id.clone(), bbox, pose: Some(pose), score: Some(score) })
                })
                .collect();
            for i in 0..noise.false_positives {
                let score = fp_rng.random_range(0.05..=1.0);
                let mut p = random_person(&mut fp_rng, schema.len(), &scene);
                p.id = Some(format!("fp{i}"));
                p.score = Some(score);
                p.bbox = p.bbox.map(|b| b.with_score(score));
                persons.push(p);
            }
            FrameAnnotations { frame_id: frame.frame_id.clone(), persons }
        })
        .collect();
    Dataset::new(schema, gt.pano(), frames, true).expect("synthetic predictions are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::builtin_schemas;

    #[test]
    fn ground_truth_is_deterministic_and_in_bounds() {
        let (_, jrdb) = builtin_schemas();
        let cfg = SceneConfig { frames: 10, seed: 3, ..SceneConfig::default() };
        let a = ground_truth(&jrdb, &cfg);
        assert_eq!(a, ground_truth(&jrdb, &cfg));
        assert_eq!(a.frames().len(), 10);
        for p in a.frames().iter().flat_map(|f| &f.persons) {
            let b = p.bbox.expect("box");
            assert!(b.x1 >= 0.0 && b.x2 < f64::from(cfg.pano.width));
            assert!(b.y1 >= 0.0 && b.y2 <= f64::from(cfg.pano.height));
        }
    }

    #[test]
    fn zero_noise_copies_geometry() {
        let (_, jrdb) = builtin_schemas();
        let gt = ground_truth(&jrdb, &SceneConfig { frames: 5, ..SceneConfig::default() });
        let pred = noisy_predictions(&gt, &jrdb, &NoiseConfig::default());
        for (g, p) in gt.frames().iter().zip(pred.frames()) {
            for (gp, pp) in g.persons.iter().zip(&p.persons) {
                assert_eq!(gp.pose, pp.pose);
                let (gb, pb) = (gp.bbox.unwrap(), pp.bbox.unwrap());
                assert_eq!((gb.x1, gb.y1, gb.x2, gb.y2), (pb.x1, pb.y1, pb.x2, pb.y2));
            }
        }
    }
}
