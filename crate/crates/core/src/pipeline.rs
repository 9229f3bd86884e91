//! Coarse-to-fine detection: image pyramid → P-Net proposals → R-Net
//! refinement → O-Net boxes with five landmarks.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::geometry::{
    apply_regression, crop_geometry, decode_pnet_map, nms, to_square, BBox, Detection, IouMode, Landmarks, Proposal,
    RegOffsets,
};
pub use crate::imageio::resize_bilinear;
use crate::imageio::Image;
use crate::nets::{forward, NetError, NetworkSpec, Stage, WeightStore};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("image {0}x{1} is smaller than the 12 px detector window")]
    ImageTooSmall(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidConfig {
    /// Smallest face side, in pixels, the pyramid is built to find.
    pub min_face_size: f32,
    pub scale_factor: f32,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            min_face_size: 20.0,
            scale_factor: 0.709,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.min_face_size >= 12.0) {
            return Err(PipelineError::Config(format!("min_face_size {} < 12", self.min_face_size)));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(PipelineError::Config(format!("scale_factor {} outside (0, 1)", self.scale_factor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsPass {
    pub threshold: f32,
    pub mode: IouMode,
}

impl NmsPass {
    pub const fn new(threshold: f32, mode: IouMode) -> Self {
        NmsPass { threshold, mode }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeConfig {
    /// Score thresholds of P-Net, R-Net and O-Net.
    pub thresholds: [f32; 3],
    pub nms_per_scale: NmsPass,
    pub nms_cross_scale: NmsPass,
    pub nms_stage2: NmsPass,
    pub nms_stage3: NmsPass,
    pub pyramid: PyramidConfig,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            thresholds: [0.6, 0.7, 0.7],
            nms_per_scale: NmsPass::new(0.5, IouMode::Union),
            nms_cross_scale: NmsPass::new(0.7, IouMode::Union),
            nms_stage2: NmsPass::new(0.7, IouMode::Union),
            nms_stage3: NmsPass::new(0.7, IouMode::Min),
            pyramid: PyramidConfig::default(),
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.pyramid.validate()?;
        for t in self.thresholds {
            if !(t > 0.0 && t < 1.0) {
                return Err(PipelineError::Config(format!("stage threshold {t} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Weights for all three stages, validated once.
#[derive(Debug, Clone)]
pub struct CascadeNets {
    weights: WeightStore,
    specs: [NetworkSpec; 3],
}

impl CascadeNets {
    pub fn new(weights: WeightStore) -> Result<Self, NetError> {
        let specs = Stage::ALL.map(Stage::spec);
        for spec in &specs {
            weights.validate(spec)?;
        }
        Ok(CascadeNets { weights, specs })
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn spec(&self, stage: Stage) -> &NetworkSpec {
        &self.specs[stage as usize]
    }

    fn run(&self, stage: Stage, input: &Tensor) -> Result<crate::nets::StageOutput, NetError> {
        forward(self.spec(stage), &self.weights, input)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageCounts {
    /// Proposals left after stage 1's cross-scale suppression.
    pub stage1: usize,
    pub stage2: usize,
    pub stage3: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub detections: Vec<Detection>,
    pub counts: StageCounts,
    /// Wall time of stages 1, 2 and 3.
    pub timings: [Duration; 3],
}

/// Scales `12/min_face · factor^k` while `min(h, w)·scale ≥ 12`.
pub fn pyramid_scales(height: usize, width: usize, cfg: &PyramidConfig) -> Result<Vec<f32>, PipelineError> {
    cfg.validate()?;
    let min_side = height.min(width) as f32;
    if min_side < 12.0 {
        return Err(PipelineError::ImageTooSmall(width, height));
    }
    let mut scales = Vec::new();
    let mut scale = 12.0 / cfg.min_face_size;
    // a face as large as the image still needs one level
    while min_side * scale >= 12.0 {
        scales.push(scale);
        scale *= cfg.scale_factor;
    }
    if scales.is_empty() {
        scales.push(12.0 / min_side);
    }
    Ok(scales)
}

fn scaled_extent(extent: usize, scale: f32) -> usize {
    ((extent as f32 * scale).ceil() as usize).max(12)
}

pub fn build_pyramid(image: &Image, cfg: &PyramidConfig) -> Result<Vec<(f32, Image)>, PipelineError> {
    let scales = pyramid_scales(image.height(), image.width(), cfg)?;
    Ok(scales
        .into_iter()
        .map(|s| {
            let h = scaled_extent(image.height(), s);
            let w = scaled_extent(image.width(), s);
            (s, resize_bilinear(image, h, w))
        })
        .collect())
}

/// `(v − 127.5) / 128` per channel, RGB order, as a `[1, 3, H, W]` tensor.
/// Gray images are replicated into three channels.
pub fn normalize(image: &Image) -> Tensor {
    let (w, h) = (image.width(), image.height());
    let c = image.channels();
    let mut out = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = image.get(x, y, if c == 3 { ch } else { 0 });
                out[(ch * h + y) * w + x] = (v as f32 - 127.5) / 128.0;
            }
        }
    }
    Tensor::new(vec![1, 3, h, w], out).expect("non-empty image")
}

fn finalize(dets: Vec<Detection>, pass: NmsPass) -> Vec<Detection> {
    let keep = nms(&dets, pass.threshold, pass.mode);
    keep.into_iter().map(|i| dets[i].clone()).collect()
}

fn within_sanity_bounds(b: &BBox, max_extent: f32) -> bool {
    let lo = -0.5 * max_extent;
    let hi = 1.5 * max_extent;
    [b.x1, b.y1, b.x2, b.y2].iter().all(|v| (lo..=hi).contains(v))
}

/// Proposal stage over the whole pyramid.
pub fn stage1(image: &Image, nets: &CascadeNets, cfg: &CascadeConfig) -> Result<Vec<Detection>, PipelineError> {
    cfg.validate()?;
    let mut proposals: Vec<Proposal> = Vec::new();
    for (scale, scaled) in build_pyramid(image, &cfg.pyramid)? {
        let out = nets.run(Stage::PNet, &normalize(&scaled))?;
        let found = decode_pnet_map(&out.face_prob, &out.box_offsets, scale, cfg.thresholds[0]);
        let dets: Vec<Detection> = found.iter().map(|p| p.detection.clone()).collect();
        let keep = nms(&dets, cfg.nms_per_scale.threshold, cfg.nms_per_scale.mode);
        let mut found: Vec<Option<Proposal>> = found.into_iter().map(Some).collect();
        proposals.extend(keep.into_iter().map(|i| found[i].take().expect("kept once")));
    }
    let dets: Vec<Detection> = proposals.iter().map(|p| p.detection.clone()).collect();
    let keep = nms(&dets, cfg.nms_cross_scale.threshold, cfg.nms_cross_scale.mode);
    let max_extent = image.width().max(image.height()) as f32;
    Ok(keep
        .into_iter()
        .filter_map(|i| {
            let p = &proposals[i];
            let refined = apply_regression(&p.detection.bbox, &p.offsets).ok()?;
            let squared = to_square(&refined);
            within_sanity_bounds(&squared, max_extent).then(|| Detection::new(squared, p.detection.score))
        })
        .collect())
}

struct Refined {
    crop_box: BBox,
    score: f32,
    offsets: RegOffsets,
    landmarks: [f32; 10],
}

const BATCH: usize = 64;

/// Crops every candidate, resizes to the stage input and runs the network in
/// batches. Candidates entirely outside the image are dropped.
fn score_crops(image: &Image, candidates: &[Detection], nets: &CascadeNets, stage: Stage) -> Result<Vec<Refined>, PipelineError> {
    let size = stage.input_size();
    let mut crops = Vec::new();
    for cand in candidates {
        let Ok(plan) = crop_geometry(&cand.bbox, image.width(), image.height()) else {
            continue;
        };
        let patch = resize_bilinear(&image.crop(&plan), size, size);
        crops.push((cand.bbox, normalize(&patch)));
    }
    let mut out = Vec::with_capacity(crops.len());
    for chunk in crops.chunks(BATCH) {
        let batch = Tensor::stack(&chunk.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>()).map_err(NetError::from)?;
        let res = nets.run(stage, &batch)?;
        for (k, (crop_box, _)) in chunk.iter().enumerate() {
            let mut landmarks = [0.0f32; 10];
            landmarks.copy_from_slice(&res.landmark_offsets.data()[k * 10..(k + 1) * 10]);
            out.push(Refined {
                crop_box: *crop_box,
                score: res.face_prob.data()[k],
                offsets: RegOffsets::from_slice(&res.box_offsets.data()[k * 4..(k + 1) * 4]),
                landmarks,
            });
        }
    }
    Ok(out)
}

/// Refinement stage: 24×24 crops through R-Net.
pub fn stage2(
    image: &Image,
    candidates: &[Detection],
    nets: &CascadeNets,
    cfg: &CascadeConfig,
) -> Result<Vec<Detection>, PipelineError> {
    let max_extent = image.width().max(image.height()) as f32;
    let kept: Vec<Detection> = score_crops(image, candidates, nets, Stage::RNet)?
        .into_iter()
        .filter(|r| r.score >= cfg.thresholds[1])
        .filter_map(|r| {
            let b = apply_regression(&r.crop_box, &r.offsets).ok()?;
            within_sanity_bounds(&b, max_extent).then(|| Detection::new(b, r.score))
        })
        .collect();
    Ok(finalize(kept, cfg.nms_stage2)
        .into_iter()
        .map(|d| Detection::new(to_square(&d.bbox), d.score))
        .collect())
}

/// Maps landmark offsets (interleaved x, y, normalized to the crop) back to
/// image coordinates.
pub fn map_landmarks(crop_box: &BBox, offsets: &[f32; 10]) -> Landmarks {
    let mut pts = [(0.0, 0.0); 5];
    for (k, p) in pts.iter_mut().enumerate() {
        *p = (
            crop_box.x1 + offsets[2 * k] * crop_box.width(),
            crop_box.y1 + offsets[2 * k + 1] * crop_box.height(),
        );
    }
    pts
}

/// Output stage: 48×48 crops through O-Net, with landmarks.
pub fn stage3(
    image: &Image,
    candidates: &[Detection],
    nets: &CascadeNets,
    cfg: &CascadeConfig,
) -> Result<Vec<Detection>, PipelineError> {
    let max_extent = image.width().max(image.height()) as f32;
    let (lo, hi) = (-0.5 * max_extent, 1.5 * max_extent);
    let kept: Vec<Detection> = score_crops(image, candidates, nets, Stage::ONet)?
        .into_iter()
        .filter(|r| r.score >= cfg.thresholds[2])
        .filter_map(|r| {
            let b = apply_regression(&r.crop_box, &r.offsets).ok()?;
            if !within_sanity_bounds(&b, max_extent) {
                return None;
            }
            let lms = map_landmarks(&r.crop_box, &r.landmarks).map(|(x, y)| (x.clamp(lo, hi), y.clamp(lo, hi)));
            Some(Detection {
                bbox: b,
                score: r.score,
                landmarks: Some(lms),
            })
        })
        .collect();
    Ok(finalize(kept, cfg.nms_stage3))
}

pub fn detect(image: &Image, nets: &CascadeNets, cfg: &CascadeConfig) -> Result<PipelineResult, PipelineError> {
    let t0 = Instant::now();
    let s1 = stage1(image, nets, cfg)?;
    let t1 = Instant::now();
    let s2 = stage2(image, &s1, nets, cfg)?;
    let t2 = Instant::now();
    let s3 = stage3(image, &s2, nets, cfg)?;
    let t3 = Instant::now();
    Ok(PipelineResult {
        counts: StageCounts {
            stage1: s1.len(),
            stage2: s2.len(),
            stage3: s3.len(),
        },
        detections: s3,
        timings: [t1 - t0, t2 - t1, t3 - t2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_weights, zero_weights};

    fn zero_nets() -> CascadeNets {
        let mut w = WeightStore::new();
        for s in Stage::ALL {
            w.merge(zero_weights(&s.spec()));
        }
        CascadeNets::new(w).unwrap()
    }

    #[test]
    fn pyramid_scale_sequence() {
        let scales = pyramid_scales(224, 224, &PyramidConfig::default()).unwrap();
        let expect = [0.6f32, 0.4254, 0.301_608_6];
        for (s, e) in scales.iter().zip(expect) {
            assert!((s - e).abs() < 1e-5, "{s} vs {e}");
        }
        let last = *scales.last().unwrap();
        assert!(224.0 * last >= 12.0 && 224.0 * last * 0.709 < 12.0);
        for w in scales.windows(2) {
            assert!(w[1] < w[0]);
            assert!((w[1] / w[0] - 0.709).abs() < 1e-5);
        }

        let cfg = PyramidConfig {
            min_face_size: 12.0,
            ..Default::default()
        };
        assert_eq!(pyramid_scales(100, 80, &cfg).unwrap()[0], 1.0);
        assert_eq!(pyramid_scales(12, 12, &cfg).unwrap(), vec![1.0]);
        assert!(matches!(
            pyramid_scales(11, 40, &cfg),
            Err(PipelineError::ImageTooSmall(..))
        ));
        let bad = PyramidConfig {
            min_face_size: 8.0,
            ..Default::default()
        };
        assert!(pyramid_scales(100, 100, &bad).is_err());
    }

    #[test]
    fn pyramid_images_never_shrink_below_window() {
        let img = Image::filled(97, 61, 3, 10);
        for (s, level) in build_pyramid(&img, &PyramidConfig::default()).unwrap() {
            assert!(level.min_extent() >= 12, "scale {s}");
        }
    }

    #[test]
    fn normalization_values() {
        let img = Image::new(3, 1, 1, vec![0, 255, 128]).unwrap();
        let t = normalize(&img);
        assert_eq!(t.shape(), &[1, 3, 1, 3]);
        assert_eq!(t.data()[0], -0.99609375);
        assert_eq!(t.data()[1], 0.99609375);
        assert_eq!(t.data()[2], 0.00390625);
        assert_eq!((127.5f32 - 127.5) / 128.0, 0.0);
    }

    #[test]
    fn blank_image_with_zero_weights_finds_nothing() {
        let nets = zero_nets();
        let img = Image::filled(64, 48, 3, 128);
        let cfg = CascadeConfig::default();
        assert!(stage1(&img, &nets, &cfg).unwrap().is_empty());
        let r = detect(&img, &nets, &cfg).unwrap();
        assert!(r.detections.is_empty());
        assert_eq!(r.counts, StageCounts::default());
    }

    #[test]
    fn zero_weight_rnet_rejects_everything() {
        let nets = zero_nets();
        let img = Image::filled(64, 64, 3, 90);
        let cands = vec![Detection::new(BBox::new(5.0, 5.0, 30.0, 30.0).unwrap(), 0.9)];
        assert!(stage2(&img, &cands, &nets, &CascadeConfig::default()).unwrap().is_empty());
        assert!(stage2(&img, &[], &nets, &CascadeConfig::default()).unwrap().is_empty());
        assert!(stage3(&img, &[], &nets, &CascadeConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn landmark_mapping() {
        let b = BBox::new(0.0, 0.0, 48.0, 48.0).unwrap();
        assert!(map_landmarks(&b, &[0.5; 10]).iter().all(|&p| p == (24.0, 24.0)));
    }

    #[test]
    fn stage3_outputs_carry_five_landmarks() {
        // random weights with a permissive threshold so something survives
        let mut w = WeightStore::new();
        for s in Stage::ALL {
            w.merge(init_weights(&s.spec(), 3));
        }
        let nets = CascadeNets::new(w).unwrap();
        let cfg = CascadeConfig {
            thresholds: [0.6, 0.7, 0.01],
            ..Default::default()
        };
        let img = Image::filled(64, 64, 3, 90);
        let cands: Vec<Detection> = (0..5)
            .map(|i| Detection::new(BBox::square(i as f32 * 7.0, 3.0, 30.0).unwrap(), 0.9))
            .collect();
        let out = stage3(&img, &cands, &nets, &cfg).unwrap();
        assert!(!out.is_empty());
        assert!(out.iter().all(|d| d.landmarks.is_some()));
    }

    #[test]
    fn default_config_is_valid() {
        CascadeConfig::default().validate().unwrap();
        let mut c = CascadeConfig::default();
        c.thresholds[1] = 1.0;
        assert!(c.validate().is_err());
    }
}
