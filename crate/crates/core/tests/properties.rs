//! Properties of the public API that cut across modules.

use facecascade::geometry::{apply_regression, BBox, RegOffsets};
use facecascade::nets::{init_weights, Stage, WeightStore};
use facecascade::pipeline::{detect, pyramid_scales, CascadeConfig, CascadeNets, PyramidConfig};
use facecascade::synth::{scenes, SceneConfig};
use facecascade::tensor::{softmax_channels, Tensor};
use facecascade::training::{cls_loss, ohem_select, total_loss, LossWeights, SampleKind, TaskLosses};
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_sums_to_one(data in prop::collection::vec(-20.0f32..20.0, 2 * 3 * 4)) {
        let y = softmax_channels(&Tensor::new(vec![2, 3, 2, 2], data).unwrap()).unwrap();
        let d = y.data();
        for n in 0..2 {
            for k in 0..4 {
                let s: f32 = (0..3).map(|c| d[n * 12 + c * 4 + k]).sum();
                prop_assert!((s - 1.0).abs() < 1e-5);
            }
        }
        prop_assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ohem_keeps_the_hardest(losses in prop::collection::vec(0.0f32..5.0, 1..60), ratio in 0.05f32..=1.0) {
        let kept = ohem_select(&losses, ratio);
        prop_assert_eq!(kept.len(), (ratio * losses.len() as f32).ceil() as usize);
        let min_kept = kept.iter().map(|&i| losses[i]).fold(f32::INFINITY, f32::min);
        for (i, l) in losses.iter().enumerate() {
            if !kept.contains(&i) {
                prop_assert!(*l <= min_kept);
            }
        }
    }

    #[test]
    fn cls_loss_is_convex_and_nonnegative(p in 0.02f32..0.98, y in 0u8..2) {
        let h = 0.01;
        let (a, b, c) = (cls_loss(p - h, y), cls_loss(p, y), cls_loss(p + h, y));
        prop_assert!(b >= 0.0);
        prop_assert!(a + c - 2.0 * b >= -1e-5);
    }

    #[test]
    fn gated_tasks_do_not_move_the_total(d in 0.0f32..3.0, b in 0.0f32..3.0, l in 0.0f32..3.0, junk in 0.0f32..100.0) {
        let w = LossWeights::new(1.0, 0.5, 1.0).unwrap();
        let cases = [
            (SampleKind::Negative, TaskLosses { det: Some(d), bbox: None, landmark: None }, TaskLosses { det: Some(d), bbox: Some(junk), landmark: Some(junk) }),
            (SampleKind::Part, TaskLosses { det: None, bbox: Some(b), landmark: None }, TaskLosses { det: Some(junk), bbox: Some(b), landmark: Some(junk) }),
            (SampleKind::Landmark, TaskLosses { det: None, bbox: None, landmark: Some(l) }, TaskLosses { det: Some(junk), bbox: Some(junk), landmark: Some(l) }),
            (SampleKind::Positive, TaskLosses { det: Some(d), bbox: Some(b), landmark: None }, TaskLosses { det: Some(d), bbox: Some(b), landmark: Some(junk) }),
        ];
        for (kind, clean, noisy) in cases {
            prop_assert_eq!(total_loss(&clean, kind, &w).unwrap(), total_loss(&noisy, kind, &w).unwrap());
        }
    }

    #[test]
    fn pyramid_is_geometric(h in 12usize..400, w in 12usize..400, min_face in 12.0f32..60.0, factor in 0.5f32..0.9) {
        let cfg = PyramidConfig { min_face_size: min_face, scale_factor: factor };
        let scales = pyramid_scales(h, w, &cfg).unwrap();
        prop_assert!(!scales.is_empty());
        for pair in scales.windows(2) {
            prop_assert!(pair[1] < pair[0]);
            prop_assert!((pair[1] / pair[0] - factor).abs() < 1e-4);
            prop_assert!(h.min(w) as f32 * pair[1] >= 12.0);
        }
    }

    #[test]
    fn zero_offsets_leave_boxes_alone(x in -50.0f32..50.0, y in -50.0f32..50.0, bw in 1.0f32..80.0, bh in 1.0f32..80.0) {
        let b = BBox::new(x, y, x + bw, y + bh).unwrap();
        let zero = RegOffsets { dx1: 0.0, dy1: 0.0, dx2: 0.0, dy2: 0.0 };
        prop_assert_eq!(apply_regression(&b, &zero).unwrap(), b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pipeline_bounds_and_stage_counts(seed in 0u64..1000) {
        let mut w = WeightStore::new();
        for s in Stage::ALL {
            w.merge(init_weights(&s.spec(), seed));
        }
        let nets = CascadeNets::new(w).unwrap();
        let cfg = CascadeConfig { thresholds: [0.3, 0.3, 0.3], ..CascadeConfig::default() };
        let scene_cfg = SceneConfig { width: 64, height: 48, ..SceneConfig::default() };
        let image = &scenes(1, seed, &scene_cfg)[0].image;
        let first = detect(image, &nets, &cfg).unwrap();
        let again = detect(image, &nets, &cfg).unwrap();
        prop_assert_eq!(&first.detections, &again.detections);
        let c = first.counts;
        prop_assert!(c.stage3 <= c.stage2 && c.stage2 <= c.stage1);
        prop_assert_eq!(c.stage3, first.detections.len());
        let (lo, hi) = (-0.5 * 64.0, 1.5 * 64.0);
        for d in &first.detections {
            let b = d.bbox;
            prop_assert!(b.width() > 0.0 && b.height() > 0.0);
            prop_assert!([b.x1, b.y1, b.x2, b.y2].iter().all(|v| (lo..=hi).contains(v)));
            prop_assert!((0.0..=1.0).contains(&d.score));
        }
    }
}
