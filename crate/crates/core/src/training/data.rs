//! Labelled training patches cut from procedural scenes.

use rand::Rng;

use super::{SampleKind, TrainingSample};
use crate::geometry::{crop_geometry, iou, BBox, IouMode, RegOffsets};
use crate::imageio::{resize_bilinear, Image};
use crate::pipeline::normalize;
use crate::synth::{draw_face, scene_rng, texture, SynthFace};

const CANVAS: usize = 96;
const FACE_SIZE: (usize, usize) = (24, 64);
/// Positive, three negatives, part, two landmark samples.
const KIND_CYCLE: [SampleKind; 7] = [
    SampleKind::Positive,
    SampleKind::Negative,
    SampleKind::Negative,
    SampleKind::Negative,
    SampleKind::Part,
    SampleKind::Landmark,
    SampleKind::Landmark,
];

pub const POSITIVE_IOU: f32 = 0.65;
pub const PART_IOU: f32 = 0.4;
pub const NEGATIVE_IOU: f32 = 0.3;

fn jittered(truth: &BBox, shift: f32, rng: &mut impl Rng) -> BBox {
    let side = truth.width();
    let s = (side * rng.gen_range(0.8..1.25)).round().max(4.0);
    let (cx, cy) = truth.center();
    let x = (cx + rng.gen_range(-shift..shift) * side - s / 2.0).round();
    let y = (cy + rng.gen_range(-shift..shift) * side - s / 2.0).round();
    BBox::square(x, y, s).expect("positive side")
}

fn random_box(rng: &mut impl Rng) -> BBox {
    let s = rng.gen_range(12..=80);
    let x = rng.gen_range(0..=CANVAS - s) as f32;
    let y = rng.gen_range(0..=CANVAS - s) as f32;
    BBox::square(x, y, s as f32).expect("positive side")
}

/// Rejection-samples a box whose IoU with `truth` lies in `range`.
fn sample_box(truth: &BBox, range: std::ops::Range<f32>, shift: f32, rng: &mut impl Rng) -> BBox {
    loop {
        let b = if shift > 0.0 { jittered(truth, shift, rng) } else { random_box(rng) };
        if range.contains(&iou(&b, truth, IouMode::Union)) {
            return b;
        }
    }
}

/// Crops `b` (zero-filling outside), resizes to `size`² and normalizes.
pub(crate) fn patch(image: &Image, b: &BBox, size: usize) -> crate::tensor::Tensor {
    let plan = crop_geometry(b, image.width(), image.height()).expect("crop overlaps the canvas");
    normalize(&resize_bilinear(&image.crop(&plan), size, size))
}

fn landmark_target(face: &SynthFace, crop: &BBox) -> [f32; 10] {
    let mut t = [0.0; 10];
    for (k, &(x, y)) in face.landmarks.iter().enumerate() {
        t[2 * k] = (x - crop.x1) / crop.width();
        t[2 * k + 1] = (y - crop.y1) / crop.height();
    }
    t
}

fn one_sample(index: usize, patch_size: usize, seed: u64) -> TrainingSample {
    let mut rng = scene_rng(seed, index);
    let kind = KIND_CYCLE[index % KIND_CYCLE.len()];
    let mut canvas = texture(CANVAS, CANVAS, &mut rng);
    if kind == SampleKind::Negative && rng.gen_bool(0.5) {
        let crop = random_box(&mut rng);
        return TrainingSample {
            patch: patch(&canvas, &crop, patch_size),
            kind,
            y_det: 0,
            y_box: None,
            y_landmark: None,
            crop_box: crop,
            truth: None,
        };
    }
    let size = rng.gen_range(FACE_SIZE.0..=FACE_SIZE.1);
    let x = rng.gen_range(0..=CANVAS - size) as f32;
    let y = rng.gen_range(0..=CANVAS - size) as f32;
    let face = draw_face(&mut canvas, x, y, size as f32, &mut rng);
    let truth = face.bbox;
    let crop = match kind {
        SampleKind::Positive | SampleKind::Landmark => sample_box(&truth, POSITIVE_IOU..1.01, 0.2, &mut rng),
        SampleKind::Part => sample_box(&truth, PART_IOU..POSITIVE_IOU, 0.45, &mut rng),
        SampleKind::Negative => sample_box(&truth, 0.0..NEGATIVE_IOU, 0.0, &mut rng),
    };
    let offsets = RegOffsets::between(&crop, &truth).to_array();
    TrainingSample {
        patch: patch(&canvas, &crop, patch_size),
        kind,
        y_det: u8::from(matches!(kind, SampleKind::Positive | SampleKind::Landmark)),
        y_box: matches!(kind, SampleKind::Positive | SampleKind::Part).then_some(offsets),
        y_landmark: (kind == SampleKind::Landmark).then(|| landmark_target(&face, &crop)),
        crop_box: crop,
        truth: Some(truth),
    }
}

/// `n` patches of `patch_size`² in the repeating kind order
/// positive, 3 × negative, part, 2 × landmark. Sample `i` depends only on
/// `(seed, i)`.
pub fn synth_dataset(n: usize, patch_size: usize, seed: u64) -> Vec<TrainingSample> {
    (0..n).map(|i| one_sample(i, patch_size, seed)).collect()
}
