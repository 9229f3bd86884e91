//! Box arithmetic shared by the cascade, the Haar baseline and evaluation.
//!
//! Coordinates are continuous `f32` pixels with the origin at the top-left
//! corner; width is `x2 - x1`. Rounding to whole pixels happens only in
//! [`crop_geometry`].

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box ({0}, {1}, {2}, {3}): needs finite coordinates with x2 > x1 and y2 > y1")]
    InvalidBox(f32, f32, f32, f32),
    #[error("box {0:?} lies entirely outside the {1}x{2} image")]
    OutsideImage(BBox, usize, usize),
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Result<Self, GeometryError> {
        let b = BBox { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::InvalidBox(x1, y1, x2, y2))
        }
    }

    /// Square box from its top-left corner and side.
    pub fn square(x: f32, y: f32, side: f32) -> Result<Self, GeometryError> {
        BBox::new(x, y, x + side, y + side)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x2 > self.x1 && self.y2 > self.y1
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f32 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn intersection(&self, other: &BBox) -> f32 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn scaled(&self, factor: f32) -> BBox {
        BBox {
            x1: self.x1 * factor,
            y1: self.y1 * factor,
            x2: self.x2 * factor,
            y2: self.y2 * factor,
        }
    }

    /// True when the box lies within `[0, w] × [0, h]`.
    pub fn inside(&self, w: f32, h: f32) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= w && self.y2 <= h
    }
}

/// Five (x, y) points: left eye, right eye, nose, left and right mouth corner.
pub type Landmarks = [(f32, f32); 5];

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f32,
    pub landmarks: Option<Landmarks>,
}

impl Detection {
    pub fn new(bbox: BBox, score: f32) -> Self {
        Detection {
            bbox,
            score,
            landmarks: None,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let b = self.bbox;
        if !b.is_valid() {
            return Err(GeometryError::InvalidBox(b.x1, b.y1, b.x2, b.y2));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(GeometryError::InvalidScore(self.score));
        }
        Ok(())
    }
}

/// Box corrections normalized by the box width (x terms) and height (y terms).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegOffsets {
    pub dx1: f32,
    pub dy1: f32,
    pub dx2: f32,
    pub dy2: f32,
}

impl RegOffsets {
    pub fn from_slice(v: &[f32]) -> Self {
        RegOffsets {
            dx1: v[0],
            dy1: v[1],
            dx2: v[2],
            dy2: v[3],
        }
    }

    pub fn to_array(self) -> [f32; 4] {
        [self.dx1, self.dy1, self.dx2, self.dy2]
    }

    /// Offsets that move `from` onto `to`; inverse of [`apply_regression`].
    pub fn between(from: &BBox, to: &BBox) -> Self {
        let (w, h) = (from.width(), from.height());
        RegOffsets {
            dx1: (to.x1 - from.x1) / w,
            dy1: (to.y1 - from.y1) / h,
            dx2: (to.x2 - from.x2) / w,
            dy2: (to.y2 - from.y2) / h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouMode {
    /// Intersection over union.
    Union,
    /// Intersection over the smaller area.
    Min,
}

pub fn iou(a: &BBox, b: &BBox, mode: IouMode) -> f32 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let denom = match mode {
        IouMode::Union => a.area() + b.area() - inter,
        IouMode::Min => a.area().min(b.area()),
    };
    (inter / denom).clamp(0.0, 1.0)
}

/// Indices ordered by descending score; equal scores keep ascending index.
pub fn rank_by_score(scores: impl Iterator<Item = f32>) -> Vec<usize> {
    let scores: Vec<f32> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Greedy non-maximum suppression. Returns the kept indices in descending
/// score order; a detection is dropped when its overlap with an already kept
/// one exceeds `threshold`.
pub fn nms(dets: &[Detection], threshold: f32, mode: IouMode) -> Vec<usize> {
    let order = rank_by_score(dets.iter().map(|d| d.score));
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[rank + 1..] {
            if !suppressed[j] && iou(&dets[i].bbox, &dets[j].bbox, mode) > threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// `x1 + dx1·w, y1 + dy1·h, x2 + dx2·w, y2 + dy2·h`. Fails when the corrected
/// box is degenerate.
pub fn apply_regression(b: &BBox, off: &RegOffsets) -> Result<BBox, GeometryError> {
    let (w, h) = (b.width(), b.height());
    BBox::new(b.x1 + off.dx1 * w, b.y1 + off.dy1 * h, b.x2 + off.dx2 * w, b.y2 + off.dy2 * h)
}

/// Grows the shorter side so the box becomes square around the same center.
pub fn to_square(b: &BBox) -> BBox {
    let side = b.width().max(b.height());
    let (cx, cy) = b.center();
    let half = side * 0.5;
    BBox {
        x1: cx - half,
        y1: cy - half,
        x2: cx + half,
        y2: cy + half,
    }
}

/// A candidate window with the regression it has not yet had applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub detection: Detection,
    pub offsets: RegOffsets,
}

/// P-Net output stride and receptive field, in pixels of the scaled image.
pub const PNET_STRIDE: f32 = 2.0;
pub const PNET_CELL: f32 = 12.0;

/// Maps every P-Net cell with face probability ≥ `threshold` back to a window
/// in original image coordinates. `face_prob` is `[1, 1, m, n]` and
/// `box_offsets` `[1, 4, m, n]`.
pub fn decode_pnet_map(face_prob: &Tensor, box_offsets: &Tensor, scale: f32, threshold: f32) -> Vec<Proposal> {
    let (m, n) = match face_prob.shape() {
        [_, _, m, n] => (*m, *n),
        _ => return Vec::new(),
    };
    debug_assert_eq!(box_offsets.shape(), &[1, 4, m, n]);
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let p = face_prob.at4(0, 0, i, j);
            if p < threshold {
                continue;
            }
            let (x, y) = (PNET_STRIDE * j as f32, PNET_STRIDE * i as f32);
            let bbox = BBox {
                x1: x / scale,
                y1: y / scale,
                x2: (x + PNET_CELL) / scale,
                y2: (y + PNET_CELL) / scale,
            };
            let offsets = RegOffsets {
                dx1: box_offsets.at4(0, 0, i, j),
                dy1: box_offsets.at4(0, 1, i, j),
                dx2: box_offsets.at4(0, 2, i, j),
                dy2: box_offsets.at4(0, 3, i, j),
            };
            out.push(Proposal {
                detection: Detection::new(bbox, p),
                offsets,
            });
        }
    }
    out
}

/// Where a (possibly out-of-bounds) box lands when cropped out of an image.
///
/// The destination buffer is `width × height` (the rounded box extent); the
/// clamped source rectangle `src_*` is copied to `(dst_x, dst_y)` and the rest
/// is zero-filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropPlan {
    pub src_x: usize,
    pub src_y: usize,
    pub src_w: usize,
    pub src_h: usize,
    pub dst_x: usize,
    pub dst_y: usize,
    pub width: usize,
    pub height: usize,
}

impl CropPlan {
    pub fn needs_padding(&self) -> bool {
        self.src_w != self.width || self.src_h != self.height
    }
}

pub fn crop_geometry(b: &BBox, image_w: usize, image_h: usize) -> Result<CropPlan, GeometryError> {
    // f32::round is half-away-from-zero
    let (x1, y1, x2, y2) = (b.x1.round() as i64, b.y1.round() as i64, b.x2.round() as i64, b.y2.round() as i64);
    if x2 <= x1 || y2 <= y1 {
        return Err(GeometryError::InvalidBox(b.x1, b.y1, b.x2, b.y2));
    }
    let sx1 = x1.max(0);
    let sy1 = y1.max(0);
    let sx2 = x2.min(image_w as i64);
    let sy2 = y2.min(image_h as i64);
    if sx2 <= sx1 || sy2 <= sy1 {
        return Err(GeometryError::OutsideImage(*b, image_w, image_h));
    }
    Ok(CropPlan {
        src_x: sx1 as usize,
        src_y: sy1 as usize,
        src_w: (sx2 - sx1) as usize,
        src_h: (sy2 - sy1) as usize,
        dst_x: (sx1 - x1) as usize,
        dst_y: (sy1 - y1) as usize,
        width: (x2 - x1) as usize,
        height: (y2 - y1) as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x1: f32, y1: f32, x2: f32, y2: f32) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(b: BBox, s: f32) -> Detection {
        Detection::new(b, s)
    }

    // Repeated linear scans for the best remaining detection.
    pub(crate) fn nms_oracle(dets: &[Detection], t: f32, mode: IouMode) -> Vec<usize> {
        let mut alive: Vec<bool> = vec![true; dets.len()];
        let mut keep = Vec::new();
        loop {
            let mut best: Option<usize> = None;
            for i in 0..dets.len() {
                if alive[i] && best.map_or(true, |b| dets[i].score > dets[b].score) {
                    best = Some(i);
                }
            }
            let Some(b) = best else { break };
            keep.push(b);
            alive[b] = false;
            for j in 0..dets.len() {
                if alive[j] && iou(&dets[b].bbox, &dets[j].bbox, mode) > t {
                    alive[j] = false;
                }
            }
        }
        keep
    }

    #[test]
    fn iou_examples() {
        let a = bb(0., 0., 10., 10.);
        let b = bb(5., 5., 15., 15.);
        assert_eq!(iou(&a, &a, IouMode::Union), 1.0);
        assert_eq!(iou(&a, &a, IouMode::Min), 1.0);
        assert_eq!(iou(&a, &bb(20., 20., 30., 30.), IouMode::Union), 0.0);
        assert!((iou(&a, &b, IouMode::Union) - 25.0 / 175.0).abs() < 1e-6);
        assert!((iou(&a, &b, IouMode::Min) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn nms_examples() {
        assert!(nms(&[], 0.5, IouMode::Union).is_empty());
        let a = bb(0., 0., 10., 10.);
        assert_eq!(nms(&[det(a, 0.3)], 0.5, IouMode::Union), vec![0]);
        assert_eq!(nms(&[det(a, 0.8), det(a, 0.9)], 0.5, IouMode::Union), vec![1]);
        // equal scores: lower index wins
        assert_eq!(nms(&[det(a, 0.9), det(a, 0.9)], 0.5, IouMode::Union), vec![0]);
    }

    #[test]
    fn regression_examples() {
        let b = bb(0., 0., 10., 10.);
        assert_eq!(apply_regression(&b, &RegOffsets::default()).unwrap(), b);
        let off = RegOffsets { dx1: 0.1, dy1: 0.1, dx2: 0.1, dy2: 0.1 };
        let r = apply_regression(&b, &off).unwrap();
        for (got, want) in [r.x1, r.y1, r.x2, r.y2].iter().zip([1., 1., 11., 11.]) {
            assert!((got - want).abs() < 1e-6);
        }
        let off = RegOffsets { dx1: -0.5, dy1: 0.0, dx2: 0.6, dy2: 0.0 };
        let r = apply_regression(&b, &off).unwrap();
        assert!((r.x1 + 5.0).abs() < 1e-6 && (r.x2 - 16.0).abs() < 1e-6);
        assert_eq!((r.y1, r.y2), (0.0, 10.0));
        let collapse = RegOffsets { dx1: 0.6, dy1: 0.0, dx2: -0.6, dy2: 0.0 };
        assert!(apply_regression(&b, &collapse).is_err());
    }

    #[test]
    fn square_examples() {
        let s = bb(2., 3., 12., 13.);
        assert_eq!(to_square(&s), s);
        assert_eq!(to_square(&bb(0., 0., 10., 20.)), bb(-5., 0., 15., 20.));
        assert_eq!(to_square(&bb(0., 0., 20., 10.)), bb(0., -5., 20., 15.));
    }

    #[test]
    fn decode_examples() {
        let prob = Tensor::full(&[1, 1, 3, 4], 0.2);
        let offs = Tensor::zeros(&[1, 4, 3, 4]);
        assert!(decode_pnet_map(&prob, &offs, 1.0, 0.6).is_empty());

        let mut prob = Tensor::full(&[1, 1, 3, 4], 0.2);
        prob.data_mut()[0] = 0.9;
        let got = decode_pnet_map(&prob, &offs, 1.0, 0.6);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].detection.bbox, bb(0., 0., 12., 12.));
        assert_eq!(got[0].detection.score, 0.9);

        let mut prob = Tensor::full(&[1, 1, 3, 4], 0.2);
        let idx = prob.offset4(0, 0, 1, 2);
        prob.data_mut()[idx] = 0.7;
        let mut offs = Tensor::zeros(&[1, 4, 3, 4]);
        let o = offs.offset4(0, 3, 1, 2);
        offs.data_mut()[o] = 0.25;
        let got = decode_pnet_map(&prob, &offs, 0.5, 0.6);
        assert_eq!(got[0].detection.bbox, bb(8., 4., 32., 28.));
        assert_eq!(got[0].offsets.dy2, 0.25);
    }

    #[test]
    fn crop_examples() {
        let p = crop_geometry(&bb(10., 20., 30., 50.), 100, 100).unwrap();
        assert_eq!(
            p,
            CropPlan { src_x: 10, src_y: 20, src_w: 20, src_h: 30, dst_x: 0, dst_y: 0, width: 20, height: 30 }
        );
        assert!(!p.needs_padding());
        let p = crop_geometry(&bb(-5., -5., 15., 15.), 100, 100).unwrap();
        assert_eq!((p.src_x, p.src_y, p.src_w, p.src_h), (0, 0, 15, 15));
        assert_eq!((p.dst_x, p.dst_y, p.width, p.height), (5, 5, 20, 20));
        assert!(matches!(
            crop_geometry(&bb(200., 200., 210., 210.), 100, 100),
            Err(GeometryError::OutsideImage(..))
        ));
        // half-away-from-zero rounding
        let p = crop_geometry(&bb(0.5, 1.49, 10.5, 11.5), 100, 100).unwrap();
        assert_eq!((p.src_x, p.src_y, p.width, p.height), (1, 1, 10, 11));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0f32..100.0, 0.0f32..100.0, 1.0f32..50.0, 1.0f32..50.0).prop_map(|(x, y, w, h)| bb(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_properties(a in arb_box(), b in arb_box()) {
            let u = iou(&a, &b, IouMode::Union);
            let m = iou(&a, &b, IouMode::Min);
            prop_assert!((0.0..=1.0).contains(&u));
            prop_assert!((u - iou(&b, &a, IouMode::Union)).abs() < 1e-6);
            prop_assert!(m + 1e-6 >= u);
            prop_assert!((iou(&a, &a, IouMode::Union) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn square_is_idempotent(b in arb_box()) {
            let s = to_square(&b);
            prop_assert!((s.width() - s.height()).abs() < 1e-3);
            let s2 = to_square(&s);
            prop_assert!((s2.x1 - s.x1).abs() < 1e-3 && (s2.y2 - s.y2).abs() < 1e-3);
        }

        #[test]
        fn nms_matches_oracle_and_is_antichain(
            boxes in proptest::collection::vec((arb_box(), 0u8..20), 0..60),
            t in 0.1f32..0.9,
        ) {
            // coarse scores force plenty of ties
            let dets: Vec<Detection> = boxes.iter().map(|(b, s)| det(*b, *s as f32 / 20.0)).collect();
            for mode in [IouMode::Union, IouMode::Min] {
                let kept = nms(&dets, t, mode);
                prop_assert_eq!(&kept, &nms_oracle(&dets, t, mode));
                for (i, &a) in kept.iter().enumerate() {
                    for &b in &kept[i + 1..] {
                        prop_assert!(iou(&dets[a].bbox, &dets[b].bbox, mode) <= t);
                    }
                }
            }
        }

        #[test]
        fn decode_count_matches_cells(vals in proptest::collection::vec(0.0f32..1.0, 12), t in 0.0f32..1.0) {
            let prob = Tensor::new(vec![1, 1, 3, 4], vals.clone()).unwrap();
            let got = decode_pnet_map(&prob, &Tensor::zeros(&[1, 4, 3, 4]), 0.7, t);
            prop_assert_eq!(got.len(), vals.iter().filter(|&&v| v >= t).count());
        }
    }
}
