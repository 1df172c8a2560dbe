use panopose::dataio::{parse_ground_truth, parse_predictions, to_canonical_json};
use panopose::decode::{decode_heatmaps, locate_peak, HeatmapStack};
use panopose::geometry::AffineTransform;
use panopose::schema::{builtin_schemas, default_mapping, SchemaMapping};
use panopose::synth::{ground_truth, noisy_predictions, NoiseConfig, SceneConfig};
use panopose::weights::{from_bytes, remap_head_weights, to_bytes};
use panopose::{TensorMap, TensorRecord};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_text_round_trip(seed in any::<u64>(), sigma in 0.0..20.0f64) {
        let (_, jrdb) = builtin_schemas();
        let gt = ground_truth(&jrdb, &SceneConfig { frames: 4, seed, ..SceneConfig::default() });
        let pred = noisy_predictions(&gt, &jrdb, &NoiseConfig { sigma, false_positives: 1, seed, ..NoiseConfig::default() });
        let text = to_canonical_json(&pred);
        let back = parse_predictions(&text, &jrdb).unwrap();
        prop_assert_eq!(&back, &pred);
        prop_assert_eq!(to_canonical_json(&back), text);
        let gtext = to_canonical_json(&gt);
        prop_assert_eq!(parse_ground_truth(&gtext, &jrdb).unwrap(), gt);
    }

    #[test]
    fn container_round_trip(
        tensors in prop::collection::vec(
            (prop::collection::vec(1usize..5, 0..4), any::<u64>()),
            1..=50,
        ),
    ) {
        let mut map = TensorMap::new();
        for (i, (shape, seed)) in tensors.iter().enumerate() {
            let n: usize = shape.iter().product();
            let vals: Vec<f32> = (0..n).map(|j| f32::from_bits((*seed as u32).wrapping_add((j as u32).wrapping_mul(2_654_435_761)))).collect();
            map.insert(format!("t{i}"), TensorRecord::from_f32(shape.clone(), &vals).unwrap()).unwrap();
        }
        let bytes = to_bytes(&map);
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(to_bytes(&back), bytes);
        for (name, rec) in map.iter() {
            prop_assert_eq!(back.get(name).unwrap().bytes(), rec.bytes());
        }
    }

    #[test]
    fn surgery_is_linear(
        a in prop::collection::vec(-10.0..10.0f32, 17 * 4),
        b in prop::collection::vec(-10.0..10.0f32, 17 * 4),
        alpha in -3.0..3.0f32,
        beta in -3.0..3.0f32,
    ) {
        let mapping = default_mapping();
        let apply = |v: &[f32]| {
            let mut m = TensorMap::new();
            m.insert("w", TensorRecord::from_f32(vec![17, 4, 1, 1], v).unwrap()).unwrap();
            remap_head_weights(&m, "w", None, &mapping).unwrap().get("w").unwrap().to_f32().unwrap()
        };
        let combo: Vec<f32> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
        let (ra, rb, rc) = (apply(&a), apply(&b), apply(&combo));
        for i in 0..rc.len() {
            let want = f64::from(alpha) * f64::from(ra[i]) + f64::from(beta) * f64::from(rb[i]);
            prop_assert!((f64::from(rc[i]) - want).abs() <= 1e-5 * want.abs().max(1.0));
        }
    }

    #[test]
    fn identity_surgery_is_exact(a in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 17 * 2)) {
        let (coco, _) = builtin_schemas();
        let mut m = TensorMap::new();
        m.insert("w", TensorRecord::from_f32(vec![17, 2, 1, 1], &a).unwrap()).unwrap();
        let out = remap_head_weights(&m, "w", None, &SchemaMapping::identity(&coco)).unwrap();
        prop_assert_eq!(out, m);
    }

    #[test]
    fn refinement_offset_is_bounded(grid in prop::collection::vec(-1.0..1.0f32, 6 * 5)) {
        let ((row, col), (dr, dc), peak) = locate_peak(&grid, 6, 5);
        prop_assert!(dr.abs() <= 0.25 && dc.abs() <= 0.25);
        prop_assert_eq!(grid[row * 5 + col], peak);
        prop_assert!(grid.iter().all(|&v| v <= peak));
    }

    #[test]
    fn decode_is_translation_equivariant(
        grid in prop::collection::vec(0.0..1.0f32, 8 * 6),
        dx in -500.0..500.0f64,
        dy in -500.0..500.0f64,
    ) {
        let stack = HeatmapStack::new(1, 8, 6, grid, 4.0).unwrap();
        let crop = AffineTransform::scale_translate(0.5, 0.5, -30.0, -10.0);
        let base = decode_heatmaps(&stack, &crop).unwrap();
        // moving the panorama by (dx, dy) moves the crop origin with it
        let moved_crop = crop.after(&AffineTransform::translation(-dx, -dy));
        let moved = decode_heatmaps(&stack, &moved_crop).unwrap();
        let (p, q) = (base.pose.keypoints[0], moved.pose.keypoints[0]);
        prop_assert!((q.x - p.x - dx).abs() < 1e-9 && (q.y - p.y - dy).abs() < 1e-9);
        prop_assert_eq!(base.confidences, moved.confidences);
    }
}
