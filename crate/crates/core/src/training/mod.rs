//! Multi-task training: classification, box and landmark losses, per-batch
//! online hard-example mining on the classification task, and plain
//! mini-batch SGD.
//!
//! The classification loss is standard binary cross-entropy
//! `−(y·ln p + (1−y)·ln(1−p))` with `p` clamped to `[ε, 1−ε]`.

mod data;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use data::{synth_dataset, NEGATIVE_IOU, PART_IOU, POSITIVE_IOU};

use crate::geometry::BBox;
use crate::nets::{backward, forward, forward_train, NetError, NetworkSpec, WeightStore};
use crate::tensor::Tensor;

pub const EPS: f32 = 1e-7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{kind:?} sample is missing its {task} target")]
    MissingTarget { kind: SampleKind, task: &'static str },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (det {det}, box {bbox}, landmark {landmark})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        det: f32,
        bbox: f32,
        landmark: f32,
    },
    #[error("gradient for unknown parameter {0}")]
    UnknownParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleKind {
    Positive,
    Negative,
    Part,
    Landmark,
}

impl SampleKind {
    /// Which of (classification, box, landmark) this kind trains.
    pub fn gates(self) -> [bool; 3] {
        match self {
            SampleKind::Positive => [true, true, false],
            SampleKind::Negative => [true, false, false],
            SampleKind::Part => [false, true, false],
            SampleKind::Landmark => [false, false, true],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSample {
    /// `[1, 3, S, S]`, normalized.
    pub patch: Tensor,
    pub kind: SampleKind,
    pub y_det: u8,
    pub y_box: Option<[f32; 4]>,
    pub y_landmark: Option<[f32; 10]>,
    /// Where the patch was cut from its canvas.
    pub crop_box: BBox,
    /// Generator truth, when the canvas held a face.
    pub truth: Option<BBox>,
}

impl TrainingSample {
    pub fn check_targets(&self) -> Result<(), TrainError> {
        let [_, b, l] = self.kind.gates();
        if b && self.y_box.is_none() {
            return Err(TrainError::MissingTarget {
                kind: self.kind,
                task: "box",
            });
        }
        if l && self.y_landmark.is_none() {
            return Err(TrainError::MissingTarget {
                kind: self.kind,
                task: "landmark",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha_det: f32,
    pub alpha_box: f32,
    pub alpha_landmark: f32,
}

impl LossWeights {
    pub fn new(alpha_det: f32, alpha_box: f32, alpha_landmark: f32) -> Result<Self, TrainError> {
        let w = LossWeights {
            alpha_det,
            alpha_box,
            alpha_landmark,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let a = [self.alpha_det, self.alpha_box, self.alpha_landmark];
        if a.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || a.iter().all(|&v| v == 0.0) {
            return Err(TrainError::Config(format!("loss weights {a:?} must be ≥ 0 and not all zero")));
        }
        Ok(())
    }

    /// (1, 0.5, 0.5) for P-Net and R-Net, (1, 0.5, 1) for O-Net.
    pub fn for_stage(stage: crate::nets::Stage) -> Self {
        match stage {
            crate::nets::Stage::ONet => LossWeights {
                alpha_det: 1.0,
                alpha_box: 0.5,
                alpha_landmark: 1.0,
            },
            _ => LossWeights {
                alpha_det: 1.0,
                alpha_box: 0.5,
                alpha_landmark: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub ohem_keep_ratio: f32,
    pub rng_seed: u64,
    /// Heavy-ball momentum; 0 gives plain SGD.
    pub momentum: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 64,
            epochs: 30,
            ohem_keep_ratio: 0.7,
            rng_seed: 42,
            momentum: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size 0".into()));
        }
        if !(self.ohem_keep_ratio > 0.0 && self.ohem_keep_ratio <= 1.0) {
            return Err(TrainError::Config(format!("OHEM keep ratio {} outside (0, 1]", self.ohem_keep_ratio)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// Binary cross-entropy on a clamped face probability.
pub fn cls_loss(p: f32, y: u8) -> f32 {
    let p = p.clamp(EPS, 1.0 - EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `∂cls_loss/∂p` inside the clamp range.
pub fn cls_loss_grad(p: f32, y: u8) -> f32 {
    let p = p.clamp(EPS, 1.0 - EPS);
    if y == 1 {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// Face probability from (not-face, face) logits.
pub fn face_probability(logits: [f32; 2]) -> f32 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

/// Gradient of `cls_loss(softmax(z)₁, y)` with respect to the logits:
/// `softmax(z) − onehot(y)`.
pub fn cls_logit_grad(logits: [f32; 2], y: u8) -> [f32; 2] {
    let p = face_probability(logits);
    let y = f32::from(y);
    [(1.0 - p) - (1.0 - y), p - y]
}

/// Squared Euclidean distance.
pub fn squared_error(pred: &[f32], target: &[f32]) -> f32 {
    pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn squared_error_grad(pred: &[f32], target: &[f32]) -> Vec<f32> {
    pred.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect()
}

pub fn box_loss(pred: &[f32; 4], target: &[f32; 4]) -> f32 {
    squared_error(pred, target)
}

pub fn landmark_loss(pred: &[f32; 10], target: &[f32; 10]) -> f32 {
    squared_error(pred, target)
}

/// Per-task losses of one sample; `None` where the sample has no target.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TaskLosses {
    pub det: Option<f32>,
    pub bbox: Option<f32>,
    pub landmark: Option<f32>,
}

/// `Σ α_j·β_j·L_j` with β gating tasks by sample kind.
pub fn total_loss(losses: &TaskLosses, kind: SampleKind, w: &LossWeights) -> Result<f32, TrainError> {
    let [d, b, l] = kind.gates();
    let mut total = 0.0;
    for (on, loss, alpha, task) in [
        (d, losses.det, w.alpha_det, "classification"),
        (b, losses.bbox, w.alpha_box, "box"),
        (l, losses.landmark, w.alpha_landmark, "landmark"),
    ] {
        if on {
            total += alpha * loss.ok_or(TrainError::MissingTarget { kind, task })?;
        }
    }
    Ok(total)
}

/// Indices of the `⌈ratio·n⌉` largest losses, largest first; equal losses
/// prefer the lower index.
pub fn ohem_select(losses: &[f32], keep_ratio: f32) -> Vec<usize> {
    let keep = ((keep_ratio * losses.len() as f32).ceil() as usize).min(losses.len());
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order
}

/// `w ← w − lr·g` for every parameter that has a gradient.
pub fn sgd_step(weights: &mut WeightStore, grads: &WeightStore, lr: f32) -> Result<(), TrainError> {
    for (name, g) in grads.iter() {
        let w = weights.get_mut(name).ok_or_else(|| TrainError::UnknownParameter(name.clone()))?;
        if w.shape() != g.shape() {
            return Err(TrainError::UnknownParameter(format!("{name} (shape {:?} vs {:?})", w.shape(), g.shape())));
        }
        for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
            *wv -= lr * gv;
        }
    }
    Ok(())
}

/// Mean losses of one batch or epoch. Each task is averaged over the samples
/// that train it (classification over the OHEM selection).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossRecord {
    pub det: f32,
    pub bbox: f32,
    pub landmark: f32,
    pub total: f32,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub grads: WeightStore,
    pub losses: LossRecord,
    /// Batch positions whose classification loss was kept by OHEM.
    pub selected: Vec<usize>,
    /// Unmined per-sample losses, in batch order.
    pub per_sample: Vec<TaskLosses>,
}

/// Mean squared error over the rows `idx` of `pred` (row width taken from
/// the targets), writing `alpha`-scaled gradients of that mean into `d`.
fn regression_terms(idx: &[usize], targets: &[&[f32]], pred: &[f32], alpha: f32, d: &mut [f32]) -> f32 {
    if idx.is_empty() {
        return 0.0;
    }
    let scale = alpha / idx.len() as f32;
    let mut sum = 0.0;
    for (&i, t) in idx.iter().zip(targets) {
        let k = t.len();
        let p = &pred[k * i..k * (i + 1)];
        sum += squared_error(p, t);
        for (dst, g) in d[k * i..k * (i + 1)].iter_mut().zip(squared_error_grad(p, t)) {
            *dst = scale * g;
        }
    }
    sum / idx.len() as f32
}

/// Forward, loss and backward over one batch.
pub fn batch_gradients(
    spec: &NetworkSpec,
    weights: &WeightStore,
    batch: &[&TrainingSample],
    keep_ratio: f32,
    w: &LossWeights,
) -> Result<BatchOutcome, TrainError> {
    let n = batch.len();
    for s in batch {
        s.check_targets()?;
    }
    let input = Tensor::stack(&batch.iter().map(|s| s.patch.clone()).collect::<Vec<_>>()).map_err(NetError::from)?;
    let pass = forward_train(spec, weights, &input)?;
    let logits = pass.cls_logits.data();
    let boxes = pass.box_offsets.data();
    let lms = pass.landmark_offsets.data();

    let det_idx: Vec<usize> = (0..n).filter(|&i| batch[i].kind.gates()[0]).collect();
    let det_losses: Vec<f32> = det_idx
        .iter()
        .map(|&i| cls_loss(face_probability([logits[2 * i], logits[2 * i + 1]]), batch[i].y_det))
        .collect();
    let selected: Vec<usize> = ohem_select(&det_losses, keep_ratio).into_iter().map(|k| det_idx[k]).collect();
    let box_idx: Vec<usize> = (0..n).filter(|&i| batch[i].kind.gates()[1]).collect();
    let lm_idx: Vec<usize> = (0..n).filter(|&i| batch[i].kind.gates()[2]).collect();

    let mut d_cls = vec![0.0f32; n * 2];
    let mut d_box = vec![0.0f32; n * 4];
    let mut d_lm = vec![0.0f32; n * 10];
    let mut losses = LossRecord::default();

    if !selected.is_empty() {
        let scale = w.alpha_det / selected.len() as f32;
        for &i in &selected {
            let z = [logits[2 * i], logits[2 * i + 1]];
            losses.det += cls_loss(face_probability(z), batch[i].y_det);
            let g = cls_logit_grad(z, batch[i].y_det);
            d_cls[2 * i] = scale * g[0];
            d_cls[2 * i + 1] = scale * g[1];
        }
        losses.det /= selected.len() as f32;
    }
    let box_targets: Vec<&[f32]> = box_idx.iter().map(|&i| &batch[i].y_box.as_ref().expect("checked")[..]).collect();
    let lm_targets: Vec<&[f32]> = lm_idx.iter().map(|&i| &batch[i].y_landmark.as_ref().expect("checked")[..]).collect();
    losses.bbox = regression_terms(&box_idx, &box_targets, boxes, w.alpha_box, &mut d_box);
    losses.landmark = regression_terms(&lm_idx, &lm_targets, lms, w.alpha_landmark, &mut d_lm);
    losses.total = w.alpha_det * losses.det + w.alpha_box * losses.bbox + w.alpha_landmark * losses.landmark;

    let per_sample = (0..n)
        .map(|i| {
            let [gd, gb, gl] = batch[i].kind.gates();
            TaskLosses {
                det: gd.then(|| cls_loss(face_probability([logits[2 * i], logits[2 * i + 1]]), batch[i].y_det)),
                bbox: gb.then(|| squared_error(&boxes[4 * i..4 * i + 4], batch[i].y_box.as_ref().expect("checked"))),
                landmark: gl.then(|| squared_error(&lms[10 * i..10 * i + 10], batch[i].y_landmark.as_ref().expect("checked"))),
            }
        })
        .collect();
    let t = |shape: [usize; 2], v: Vec<f32>| Tensor::new(shape.to_vec(), v).map_err(NetError::from);
    let grads = backward(
        spec,
        weights,
        &pass,
        &t([n, 2], d_cls)?,
        &t([n, 4], d_box)?,
        &t([n, 10], d_lm)?,
    )?;
    Ok(BatchOutcome {
        grads,
        losses,
        selected,
        per_sample,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: WeightStore,
    /// One record per epoch: each task's loss averaged over every sample
    /// that trains it, before mining, at the weights the sample was seen with.
    pub history: Vec<LossRecord>,
}

/// Mini-batch SGD over `dataset`, reshuffled every epoch from `cfg.rng_seed`.
pub fn train_stage(
    spec: &NetworkSpec,
    init: &WeightStore,
    dataset: &[TrainingSample],
    cfg: &TrainConfig,
    w: &LossWeights,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    w.validate()?;
    init.validate(spec).map_err(NetError::from)?;
    let size = spec.stage.input_size();
    if let Some(bad) = dataset.iter().find(|s| s.patch.shape() != [1, 3, size, size]) {
        return Err(TrainError::Config(format!(
            "patch shape {:?} does not fit the {}x{size} {} input",
            bad.patch.shape(),
            size,
            spec.stage
        )));
    }
    let mut weights = init.clone();
    let mut velocity: Option<WeightStore> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let out = batch_gradients(spec, &weights, &batch, cfg.ohem_keep_ratio, w)?;
            let l = out.losses;
            if !l.total.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    det: l.det,
                    bbox: l.bbox,
                    landmark: l.landmark,
                });
            }
            let step = if cfg.momentum > 0.0 {
                let v = velocity.get_or_insert_with(|| zeroed_like(&out.grads));
                for (name, g) in out.grads.iter() {
                    let vt = v.get_mut(name).ok_or_else(|| TrainError::UnknownParameter(name.clone()))?;
                    for (a, gv) in vt.data_mut().iter_mut().zip(g.data()) {
                        *a = cfg.momentum * *a + gv;
                    }
                }
                v.clone()
            } else {
                out.grads
            };
            sgd_step(&mut weights, &step, cfg.learning_rate)?;
            for t in &out.per_sample {
                for (k, v) in [t.det, t.bbox, t.landmark].into_iter().enumerate() {
                    if let Some(v) = v {
                        sums[k] += f64::from(v);
                        counts[k] += 1;
                    }
                }
            }
        }
        let mean = |k: usize| if counts[k] == 0 { 0.0 } else { (sums[k] / counts[k] as f64) as f32 };
        let (det, bbox, landmark) = (mean(0), mean(1), mean(2));
        history.push(LossRecord {
            det,
            bbox,
            landmark,
            total: w.alpha_det * det + w.alpha_box * bbox + w.alpha_landmark * landmark,
        });
    }
    Ok(TrainOutcome { weights, history })
}

fn zeroed_like(store: &WeightStore) -> WeightStore {
    store.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect()
}

/// Fraction of classification samples (positives and negatives) whose face
/// probability lands on the right side of 0.5. `None` without such samples.
pub fn classification_accuracy(
    spec: &NetworkSpec,
    weights: &WeightStore,
    samples: &[TrainingSample],
) -> Result<Option<f32>, TrainError> {
    let det: Vec<&TrainingSample> = samples.iter().filter(|s| s.kind.gates()[0]).collect();
    if det.is_empty() {
        return Ok(None);
    }
    let mut correct = 0usize;
    for chunk in det.chunks(128) {
        let input = Tensor::stack(&chunk.iter().map(|s| s.patch.clone()).collect::<Vec<_>>()).map_err(NetError::from)?;
        let out = forward(spec, weights, &input)?;
        for (s, &p) in chunk.iter().zip(out.face_prob.data()) {
            if (p >= 0.5) == (s.y_det == 1) {
                correct += 1;
            }
        }
    }
    Ok(Some(correct as f32 / det.len() as f32))
}

/// `epoch,det_loss,box_loss,landmark_loss,total`, epochs numbered from 1.
pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("epoch,det_loss,box_loss,landmark_loss,total\n");
    for (i, r) in history.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{},{}", i + 1, r.det, r.bbox, r.landmark, r.total);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_weights, Stage};

    #[test]
    fn cross_entropy_values() {
        assert!(cls_loss(1.0 - EPS, 1) < 1e-6);
        assert!((cls_loss(0.5, 0) - std::f32::consts::LN_2).abs() < 1e-6);
        assert!((cls_loss(0.5, 1) - std::f32::consts::LN_2).abs() < 1e-6);
        assert!((cls_loss(0.9, 0) - 2.302585).abs() < 1e-4);
        assert!(cls_loss(0.0, 1).is_finite());
    }

    #[test]
    fn squared_error_values() {
        assert_eq!(box_loss(&[0.0; 4], &[1.0; 4]), 4.0);
        assert_eq!(box_loss(&[0.3; 4], &[0.3; 4]), 0.0);
        let mut t = [0.0; 10];
        t[7] = 1.0;
        assert_eq!(landmark_loss(&[0.0; 10], &t), 1.0);
    }

    #[test]
    fn gating() {
        let w = LossWeights::new(1.0, 0.5, 0.5).unwrap();
        let l = TaskLosses {
            det: Some(0.6),
            bbox: Some(0.2),
            landmark: Some(9.0),
        };
        assert!((total_loss(&l, SampleKind::Positive, &w).unwrap() - 0.7).abs() < 1e-6);
        assert_eq!(total_loss(&l, SampleKind::Negative, &w).unwrap(), 0.6);
        assert_eq!(total_loss(&l, SampleKind::Part, &w).unwrap(), 0.1);
        assert_eq!(total_loss(&l, SampleKind::Landmark, &w).unwrap(), 4.5);
        let missing = TaskLosses {
            det: Some(0.6),
            ..Default::default()
        };
        assert!(matches!(
            total_loss(&missing, SampleKind::Positive, &w),
            Err(TrainError::MissingTarget { task: "box", .. })
        ));
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        let no_box = LossWeights::new(1.0, 0.0, 0.5).unwrap();
        let changed = TaskLosses {
            bbox: Some(123.0),
            ..l
        };
        assert_eq!(
            total_loss(&l, SampleKind::Positive, &no_box).unwrap(),
            total_loss(&changed, SampleKind::Positive, &no_box).unwrap()
        );
    }

    #[test]
    fn ohem_examples() {
        let losses = [5.0, 4.0, 3.0, 2.0, 1.0, 0.0, 6.0, 7.0, 8.0, 9.0];
        let mut sel = ohem_select(&losses, 0.7);
        sel.sort();
        assert_eq!(sel, vec![0, 1, 2, 6, 7, 8, 9]);
        assert_eq!(ohem_select(&losses, 1.0).len(), 10);
        assert_eq!(ohem_select(&[1.0; 4], 0.5), vec![0, 1]);
        assert!(ohem_select(&[], 0.5).is_empty());
    }

    #[test]
    fn sgd_examples() {
        let mut w: WeightStore = [("a".to_string(), Tensor::full(&[1], 1.0))].into_iter().collect();
        let g: WeightStore = [("a".to_string(), Tensor::full(&[1], 2.0))].into_iter().collect();
        sgd_step(&mut w, &g, 0.0).unwrap();
        assert_eq!(w.get("a").unwrap().data(), &[1.0]);
        sgd_step(&mut w, &g, 0.1).unwrap();
        assert!((w.get("a").unwrap().data()[0] - 0.8).abs() < 1e-7);
        let bad: WeightStore = [("b".to_string(), Tensor::full(&[1], 2.0))].into_iter().collect();
        assert!(sgd_step(&mut w, &bad, 0.1).is_err());
    }

    #[test]
    fn sgd_descends_a_quadratic() {
        // f(w) = Σ (w − c)², ∇f = 2(w − c)
        let c = [3.0f32, -1.0, 0.5];
        let mut w: WeightStore = [("w".to_string(), Tensor::zeros(&[3]))].into_iter().collect();
        let f = |w: &WeightStore| squared_error(w.get("w").unwrap().data(), &c);
        let mut last = f(&w);
        for _ in 0..50 {
            let g = squared_error_grad(w.get("w").unwrap().data(), &c);
            let grads: WeightStore = [("w".to_string(), Tensor::new(vec![3], g).unwrap())].into_iter().collect();
            sgd_step(&mut w, &grads, 0.1).unwrap();
            let now = f(&w);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let spec = Stage::PNet.spec();
        let init = init_weights(&spec, 1);
        let data = synth_dataset(21, 12, 2);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let out = train_stage(&spec, &init, &data, &cfg, &LossWeights::for_stage(Stage::PNet)).unwrap();
        assert_eq!(out.weights, init);
        assert_eq!(out.history.len(), 3);
        assert!(out.history.iter().all(|r| (r.total - out.history[0].total).abs() < 1e-5));
    }

    #[test]
    fn wrong_patch_size_is_rejected() {
        let spec = Stage::RNet.spec();
        let data = synth_dataset(2, 12, 2);
        let r = train_stage(&spec, &init_weights(&spec, 1), &data, &TrainConfig::default(), &LossWeights::for_stage(Stage::RNet));
        assert!(matches!(r, Err(TrainError::Config(_))));
    }

    #[test]
    fn csv_header() {
        assert_eq!(loss_history_csv(&[]), "epoch,det_loss,box_loss,landmark_loss,total\n");
        let csv = loss_history_csv(&[LossRecord {
            det: 0.5,
            bbox: 0.25,
            landmark: 1.0,
            total: 1.0,
        }]);
        assert_eq!(csv.lines().nth(1), Some("1,0.5,0.25,1,1"));
    }
}
