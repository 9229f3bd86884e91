use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use super::adaboost::{Booster, FeatureMatrix, Stump};
use super::features::{inverse_sigma, window_side, FeatureKind, HaarFeature, ScaledFeature, WINDOW};
use super::integral::IntegralImage;
use super::HaarError;
use crate::geometry::{crop_geometry, iou, nms, BBox, Detection, IouMode};
use crate::imageio::{resize_bilinear, Image};
use crate::synth::{render_scene, scene_rng, SceneConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct HaarStage {
    pub stumps: Vec<Stump>,
    pub threshold: f32,
}

impl HaarStage {
    /// Weighted vote of the stumps, summed in order.
    pub fn score(&self, mut value_of: impl FnMut(&HaarFeature) -> f32) -> f32 {
        let mut s = 0.0f32;
        for st in &self.stumps {
            if st.votes_face(value_of(&st.feature)) {
                s += st.alpha;
            }
        }
        s
    }
}

/// Ordered stages; a window is a face only if every stage's vote reaches its
/// threshold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HaarCascadeModel {
    pub stages: Vec<HaarStage>,
}

/// How many windows were scanned and how many reached each stage.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalCounters {
    pub windows: u64,
    pub stage_evaluations: Vec<u64>,
}

impl EvalCounters {
    fn enter(&mut self, stage: usize) {
        if self.stage_evaluations.len() <= stage {
            self.stage_evaluations.resize(stage + 1, 0);
        }
        self.stage_evaluations[stage] += 1;
    }
}

/// Scan grid: windows grow by `scale_step` per level and move by
/// `window_stride·scale` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub scale_step: f32,
    pub window_stride: f32,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            scale_step: 1.25,
            window_stride: 2.0,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), HaarError> {
        if !(self.scale_step > 1.0) || !(self.window_stride > 0.0) {
            return Err(HaarError::Config(format!(
                "scale step {} must exceed 1 and stride {} must be positive",
                self.scale_step, self.window_stride
            )));
        }
        Ok(())
    }

    /// `(scale, side, stride)` for every level that fits a `w`×`h` image.
    pub fn levels(&self, w: usize, h: usize) -> Vec<(f32, usize, usize)> {
        let mut out = Vec::new();
        let mut scale = 1.0f32;
        loop {
            let side = window_side(scale);
            if side > w.min(h) {
                break;
            }
            let stride = ((self.window_stride * scale).round() as usize).max(1);
            out.push((scale, side, stride));
            scale *= self.scale_step;
        }
        out
    }
}

/// A model with every feature resolved for one scan level.
struct ScaledCascade<'a> {
    model: &'a HaarCascadeModel,
    side: usize,
    stages: Vec<Vec<ScaledFeature>>,
}

impl<'a> ScaledCascade<'a> {
    fn new(model: &'a HaarCascadeModel, scale: f32) -> Self {
        ScaledCascade {
            model,
            side: window_side(scale),
            stages: model
                .stages
                .iter()
                .map(|s| s.stumps.iter().map(|st| st.feature.scaled(scale)).collect())
                .collect(),
        }
    }

    /// Final-stage margin when every stage passes.
    fn eval(&self, ii: &IntegralImage, x: usize, y: usize, counters: &mut EvalCounters) -> Option<f32> {
        counters.windows += 1;
        let inv = inverse_sigma(ii, x, y, self.side);
        let mut margin = 0.0;
        for (k, (stage, feats)) in self.model.stages.iter().zip(&self.stages).enumerate() {
            counters.enter(k);
            let mut s = 0.0f32;
            for (st, f) in stage.stumps.iter().zip(feats) {
                if st.votes_face(f.value(ii, x, y, inv)) {
                    s += st.alpha;
                }
            }
            margin = s - stage.threshold;
            if margin < 0.0 {
                return None;
            }
        }
        Some(margin)
    }
}

fn logistic(m: f32) -> f32 {
    1.0 / (1.0 + (-m).exp())
}

impl HaarCascadeModel {
    pub fn validate(&self) -> Result<(), HaarError> {
        if self.stages.is_empty() {
            return Err(HaarError::Model("cascade has no stages".into()));
        }
        for (k, s) in self.stages.iter().enumerate() {
            if s.stumps.is_empty() {
                return Err(HaarError::Model(format!("stage {k} has no stumps")));
            }
            if !s.threshold.is_finite() || s.stumps.iter().any(|t| !t.threshold.is_finite() || !t.alpha.is_finite()) {
                return Err(HaarError::Model(format!("stage {k} has non-finite values")));
            }
        }
        Ok(())
    }

    /// Final-stage margin of the window at `(x, y)` and `scale`, or `None` if
    /// some stage rejects it. Later stages are never evaluated after a
    /// rejection.
    pub fn evaluate_window(&self, ii: &IntegralImage, x: usize, y: usize, scale: f32, counters: &mut EvalCounters) -> Option<f32> {
        ScaledCascade::new(self, scale).eval(ii, x, y, counters)
    }

    /// One line per stage threshold and per stump, floats with nine
    /// significant digits:
    ///
    /// ```text
    /// stage <index> <threshold>
    /// stump <stage> <kind> <x> <y> <w> <h> <threshold> <polarity> <alpha>
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = format!("# haar cascade, {WINDOW}x{WINDOW} window, {} stages\n", self.stages.len());
        for (k, s) in self.stages.iter().enumerate() {
            let _ = writeln!(out, "stage {k} {:.8e}", s.threshold);
            for st in &s.stumps {
                let f = st.feature;
                let _ = writeln!(
                    out,
                    "stump {k} {} {} {} {} {} {:.8e} {} {:.8e}",
                    f.kind, f.x, f.y, f.w, f.h, st.threshold, st.polarity, st.alpha
                );
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, HaarError> {
        let mut thresholds: Vec<Option<f32>> = Vec::new();
        let mut stumps: Vec<Vec<Stump>> = Vec::new();
        let grow = |k: usize, th: &mut Vec<Option<f32>>, st: &mut Vec<Vec<Stump>>| {
            if th.len() <= k {
                th.resize(k + 1, None);
                st.resize(k + 1, Vec::new());
            }
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| HaarError::Model(format!("line {}: {what}", n + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f32, HaarError> { f[i].parse().map_err(|_| bad("bad number")) };
            let int = |i: usize| -> Result<usize, HaarError> { f[i].parse().map_err(|_| bad("bad integer")) };
            match (f[0], f.len()) {
                ("stage", 3) => {
                    let k = int(1)?;
                    grow(k, &mut thresholds, &mut stumps);
                    if thresholds[k].replace(num(2)?).is_some() {
                        return Err(bad("duplicate stage"));
                    }
                }
                ("stump", 10) => {
                    let k = int(1)?;
                    let kind: FeatureKind = f[2].parse()?;
                    let feature = HaarFeature::new(kind, int(3)?, int(4)?, int(5)?, int(6)?)?;
                    let polarity: i8 = f[8].parse().map_err(|_| bad("bad polarity"))?;
                    if polarity != 1 && polarity != -1 {
                        return Err(bad("polarity must be 1 or -1"));
                    }
                    grow(k, &mut thresholds, &mut stumps);
                    stumps[k].push(Stump {
                        feature,
                        threshold: num(7)?,
                        polarity,
                        alpha: num(9)?,
                    });
                }
                _ => return Err(bad("expected a stage or stump line")),
            }
        }
        let stages = thresholds
            .into_iter()
            .zip(stumps)
            .enumerate()
            .map(|(k, (t, s))| {
                t.map(|threshold| HaarStage { stumps: s, threshold })
                    .ok_or_else(|| HaarError::Model(format!("stage {k} has no threshold line")))
            })
            .collect::<Result<_, _>>()?;
        let model = HaarCascadeModel { stages };
        model.validate()?;
        Ok(model)
    }
}

/// Slides the base window over every scan level; windows passing all stages
/// become detections scored by the logistic of their final-stage margin, then
/// overlapping ones are merged by NMS (0.3, Union).
pub fn detect_haar(image: &Image, model: &HaarCascadeModel, scan: &ScanConfig) -> Result<Vec<Detection>, HaarError> {
    let mut counters = EvalCounters::default();
    detect_haar_counted(image, model, scan, &mut counters)
}

pub fn detect_haar_counted(
    image: &Image,
    model: &HaarCascadeModel,
    scan: &ScanConfig,
    counters: &mut EvalCounters,
) -> Result<Vec<Detection>, HaarError> {
    scan.validate()?;
    model.validate()?;
    let ii = IntegralImage::new(image);
    let mut found = Vec::new();
    for (scale, side, stride) in scan.levels(image.width(), image.height()) {
        let sc = ScaledCascade::new(model, scale);
        for y in (0..=image.height() - side).step_by(stride) {
            for x in (0..=image.width() - side).step_by(stride) {
                if let Some(m) = sc.eval(&ii, x, y, counters) {
                    let b = BBox::square(x as f32, y as f32, side as f32).expect("positive side");
                    found.push(Detection::new(b, logistic(m)));
                }
            }
        }
    }
    let keep = nms(&found, 0.3, IouMode::Union);
    Ok(keep.into_iter().map(|i| found[i].clone()).collect())
}

/// Supplies bootstrapped negatives: windows the current cascade accepts.
pub trait NegativeSource {
    /// Up to `n` 24×24 grayscale windows that `model` accepts.
    fn collect(&mut self, model: &HaarCascadeModel, n: usize) -> Vec<Image>;
}

/// A fixed set of 24×24 windows, filtered by the cascade at scale 1.
#[derive(Debug, Clone)]
pub struct PoolNegatives {
    pub windows: Vec<Image>,
}

impl NegativeSource for PoolNegatives {
    fn collect(&mut self, model: &HaarCascadeModel, n: usize) -> Vec<Image> {
        let mut counters = EvalCounters::default();
        let sc = ScaledCascade::new(model, 1.0);
        self.windows
            .iter()
            .filter(|w| sc.eval(&IntegralImage::new(w), 0, 0, &mut counters).is_some())
            .take(n)
            .cloned()
            .collect()
    }
}

/// Scans freshly generated scenes (0–3 faces) on the detection grid and keeps
/// accepted windows that overlap no face by IoU 0.3 or more.
#[derive(Debug, Clone)]
pub struct SceneNegatives {
    pub seed: u64,
    pub scenes: SceneConfig,
    pub scan: ScanConfig,
    /// Cap on windows taken from one scene.
    pub per_scene: usize,
    /// Scenes scanned per `collect` call before giving up.
    pub max_scenes: usize,
    next_scene: usize,
}

impl SceneNegatives {
    pub fn new(seed: u64) -> Self {
        SceneNegatives {
            seed,
            scenes: SceneConfig {
                faces: 0..=3,
                ..SceneConfig::default()
            },
            scan: ScanConfig::default(),
            per_scene: 25,
            max_scenes: 4000,
            next_scene: 0,
        }
    }
}

impl NegativeSource for SceneNegatives {
    fn collect(&mut self, model: &HaarCascadeModel, n: usize) -> Vec<Image> {
        let mut out = Vec::with_capacity(n);
        let mut counters = EvalCounters::default();
        for _ in 0..self.max_scenes {
            if out.len() >= n {
                break;
            }
            let mut rng = scene_rng(self.seed, self.next_scene);
            self.next_scene += 1;
            let scene = render_scene(&self.scenes, &mut rng);
            let gray = scene.image.to_gray();
            let ii = IntegralImage::new(&gray);
            let mut windows = Vec::new();
            for (li, (_, side, stride)) in self.scan.levels(gray.width(), gray.height()).into_iter().enumerate() {
                for y in (0..=gray.height() - side).step_by(stride) {
                    for x in (0..=gray.width() - side).step_by(stride) {
                        windows.push((li, x, y, side));
                    }
                }
            }
            windows.shuffle(&mut rng);
            let levels = self.scan.levels(gray.width(), gray.height());
            let cascades: Vec<ScaledCascade> = levels.iter().map(|&(s, _, _)| ScaledCascade::new(model, s)).collect();
            let mut taken = 0;
            for (li, x, y, side) in windows {
                if taken >= self.per_scene || out.len() >= n {
                    break;
                }
                let b = BBox::square(x as f32, y as f32, side as f32).expect("positive side");
                if scene.faces.iter().any(|f| iou(&b, &f.bbox, IouMode::Union) >= 0.3) {
                    continue;
                }
                if cascades[li].eval(&ii, x, y, &mut counters).is_some() {
                    let plan = crop_geometry(&b, gray.width(), gray.height()).expect("window inside image");
                    out.push(resize_bilinear(&gray.crop(&plan), WINDOW, WINDOW));
                    taken += 1;
                }
            }
        }
        out
    }
}

/// Face windows cut around the truth boxes of generated scenes, jittered by
/// up to ±6 % in position and ±12 % in size, as 24×24 grayscale.
pub fn haar_positives(n: usize, seed: u64) -> Vec<Image> {
    let cfg = SceneConfig::default();
    let mut out = Vec::with_capacity(n);
    let mut index = 0;
    while out.len() < n {
        let mut rng = scene_rng(seed, index);
        index += 1;
        let scene = render_scene(&cfg, &mut rng);
        let gray = scene.image.to_gray();
        for face in &scene.faces {
            if out.len() >= n {
                break;
            }
            let t = face.bbox;
            let side = t.width() * rng.gen_range(0.89..1.12);
            let (cx, cy) = t.center();
            let cx = cx + rng.gen_range(-0.06..0.06) * t.width();
            let cy = cy + rng.gen_range(-0.06..0.06) * t.width();
            let b = BBox::square((cx - side / 2.0).round(), (cy - side / 2.0).round(), side.round()).expect("positive side");
            let plan = crop_geometry(&b, gray.width(), gray.height()).expect("face inside image");
            out.push(resize_bilinear(&gray.crop(&plan), WINDOW, WINDOW));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTrainConfig {
    /// Minimum fraction of training positives each stage must accept.
    pub min_detection_rate: f32,
    /// Maximum fraction of the stage's negatives it may accept.
    pub max_false_positive_rate: f32,
    pub max_stages: usize,
    pub max_rounds: usize,
    pub negatives_per_stage: usize,
}

impl Default for CascadeTrainConfig {
    fn default() -> Self {
        CascadeTrainConfig {
            min_detection_rate: 0.995,
            max_false_positive_rate: 0.4,
            max_stages: 12,
            max_rounds: 100,
            negatives_per_stage: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageReport {
    pub rounds: usize,
    pub negatives: usize,
    pub detection_rate: f32,
    pub false_positive_rate: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTraining {
    pub model: HaarCascadeModel,
    pub stages: Vec<StageReport>,
}

/// Grows stumps until the stage, with its threshold lowered to keep
/// `min_detection_rate` of the positives, accepts at most
/// `max_false_positive_rate` of the negatives.
fn train_stage(
    positives: &[Image],
    negatives: &[Image],
    pool: &[HaarFeature],
    cfg: &CascadeTrainConfig,
    index: usize,
) -> Result<(HaarStage, StageReport), HaarError> {
    let windows: Vec<Image> = positives.iter().chain(negatives).cloned().collect();
    let labels: Vec<bool> = (0..windows.len()).map(|i| i < positives.len()).collect();
    let matrix = FeatureMatrix::from_windows(&windows, pool);
    let mut booster = Booster::new(&matrix, pool, &labels)?;
    let mut scores = vec![0.0f32; windows.len()];
    let mut stumps = Vec::new();
    let keep = ((cfg.min_detection_rate * positives.len() as f32).ceil() as usize).clamp(1, positives.len());
    let mut report = StageReport {
        rounds: 0,
        negatives: negatives.len(),
        detection_rate: 0.0,
        false_positive_rate: 1.0,
    };
    let mut threshold = 0.0;
    while stumps.len() < cfg.max_rounds {
        let Some(round) = booster.round() else { break };
        for (i, s) in scores.iter_mut().enumerate() {
            if round.stump.votes_face(matrix.value(round.feature_index, i)) {
                *s += round.stump.alpha;
            }
        }
        stumps.push(round.stump);
        let mut pos: Vec<f32> = scores[..positives.len()].to_vec();
        pos.sort_by(|a, b| b.total_cmp(a));
        threshold = pos[keep - 1];
        let passed = |r: &[f32]| r.iter().filter(|&&s| s >= threshold).count() as f32 / r.len() as f32;
        report = StageReport {
            rounds: stumps.len(),
            negatives: negatives.len(),
            detection_rate: passed(&scores[..positives.len()]),
            false_positive_rate: passed(&scores[positives.len()..]),
        };
        if report.false_positive_rate <= cfg.max_false_positive_rate {
            break;
        }
    }
    if stumps.is_empty() || report.false_positive_rate > cfg.max_false_positive_rate {
        return Err(HaarError::TargetUnreachable {
            stage: index,
            detection_rate: report.detection_rate,
            false_positive_rate: report.false_positive_rate,
        });
    }
    Ok((HaarStage { stumps, threshold }, report))
}

/// Attentional cascade by stagewise AdaBoost with negative bootstrapping:
/// each new stage trains against windows the cascade so far still accepts.
/// Stops after `max_stages` or when the source runs dry.
pub fn build_cascade(
    positives: &[Image],
    negatives: &mut dyn NegativeSource,
    pool: &[HaarFeature],
    cfg: &CascadeTrainConfig,
) -> Result<CascadeTraining, HaarError> {
    if positives.is_empty() {
        return Err(HaarError::Training("no positive windows".into()));
    }
    if !(cfg.min_detection_rate > 0.0 && cfg.min_detection_rate <= 1.0)
        || !(cfg.max_false_positive_rate > 0.0 && cfg.max_false_positive_rate < 1.0)
    {
        return Err(HaarError::Config("stage rates must lie in (0, 1]".into()));
    }
    if let Some(bad) = positives.iter().find(|p| p.width() != WINDOW || p.height() != WINDOW || p.channels() != 1) {
        return Err(HaarError::Training(format!(
            "positive window is {}x{}x{}, expected {WINDOW}x{WINDOW} gray",
            bad.width(),
            bad.height(),
            bad.channels()
        )));
    }
    let mut model = HaarCascadeModel::default();
    let mut reports = Vec::new();
    while model.stages.len() < cfg.max_stages {
        let negs = negatives.collect(&model, cfg.negatives_per_stage);
        if negs.is_empty() {
            break;
        }
        let (stage, report) = train_stage(positives, &negs, pool, cfg, model.stages.len())?;
        model.stages.push(stage);
        reports.push(report);
    }
    if model.stages.is_empty() {
        return Err(HaarError::Training("no negative windows to train against".into()));
    }
    Ok(CascadeTraining { model, stages: reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::feature_pool;

    fn half_window(left_bright: bool, shade: u8) -> Image {
        let mut img = Image::filled(WINDOW, WINDOW, 1, 0);
        for y in 0..WINDOW {
            for x in 0..WINDOW {
                let bright = (x < WINDOW / 2) == left_bright;
                img.set(x, y, 0, if bright { 200 - shade } else { 20 + shade });
            }
        }
        img
    }

    fn toy_model() -> HaarCascadeModel {
        let f = HaarFeature::new(FeatureKind::TwoRectH, 0, 0, 24, 24).unwrap();
        HaarCascadeModel {
            stages: vec![
                HaarStage {
                    stumps: vec![Stump {
                        feature: f,
                        threshold: 0.5,
                        polarity: 1,
                        alpha: 1.0,
                    }],
                    threshold: 1.0,
                },
                HaarStage {
                    stumps: vec![Stump {
                        feature: HaarFeature::new(FeatureKind::FourRect, 2, 2, 4, 6).unwrap(),
                        threshold: -0.25,
                        polarity: -1,
                        alpha: 0.123456789,
                    }],
                    threshold: 0.1,
                },
            ],
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = toy_model();
        let text = m.to_text();
        assert!(text.contains("stump 1 four 2 2 4 6 -2.50000000e-1 -1 1.23456791e-1"));
        assert_eq!(HaarCascadeModel::from_text(&text).unwrap(), m);
        assert!(HaarCascadeModel::from_text("").is_err());
        assert!(HaarCascadeModel::from_text("stage 0 1\n").is_err());
        assert!(HaarCascadeModel::from_text("stage 1 1\nstump 1 two-h 0 0 2 2 0 1 1\n").is_err());
        assert!(HaarCascadeModel::from_text("stage 0 1\nstump 0 two-h 0 0 2 2 0 2 1\n").is_err());
    }

    #[test]
    fn rejected_windows_skip_later_stages() {
        let m = toy_model();
        let mut c = EvalCounters::default();
        let dark_left = IntegralImage::new(&half_window(false, 0));
        assert!(m.evaluate_window(&dark_left, 0, 0, 1.0, &mut c).is_none());
        assert_eq!(c.stage_evaluations, vec![1]);
        let bright_left = IntegralImage::new(&half_window(true, 0));
        m.evaluate_window(&bright_left, 0, 0, 1.0, &mut c);
        assert_eq!(c.stage_evaluations, vec![2, 1]);
    }

    #[test]
    fn blank_image_yields_nothing() {
        let m = toy_model();
        let mut c = EvalCounters::default();
        let out = detect_haar_counted(&Image::filled(64, 48, 1, 90), &m, &ScanConfig::default(), &mut c).unwrap();
        assert!(out.is_empty());
        assert!(c.windows > 0);
        assert_eq!(c.stage_evaluations.len(), 1);
    }

    #[test]
    fn detections_stay_inside_the_image() {
        let mut img = Image::filled(70, 50, 1, 20);
        for y in 0..50 {
            for x in 0..35 {
                img.set(x, y, 0, 200);
            }
        }
        let m = HaarCascadeModel {
            stages: vec![toy_model().stages[0].clone()],
        };
        let out = detect_haar(&img, &m, &ScanConfig::default()).unwrap();
        assert!(!out.is_empty());
        assert!(out.iter().all(|d| d.bbox.inside(70.0, 50.0) && d.score >= 0.5));
    }

    #[test]
    fn scan_levels() {
        let levels = ScanConfig::default().levels(60, 40);
        assert_eq!(levels[0], (1.0, 24, 2));
        assert_eq!(levels[1].1, 30);
        assert!(levels.iter().all(|l| l.1 <= 40));
        assert!(ScanConfig::default().levels(20, 100).is_empty());
    }

    #[test]
    fn separable_data_needs_one_stage() {
        let positives: Vec<Image> = (0..20).map(|i| half_window(true, i)).collect();
        let mut negatives = PoolNegatives {
            windows: (0..30).map(|i| half_window(false, i)).collect(),
        };
        let pool: Vec<HaarFeature> = feature_pool().into_iter().step_by(50).collect();
        let out = build_cascade(&positives, &mut negatives, &pool, &CascadeTrainConfig::default()).unwrap();
        assert_eq!(out.model.stages.len(), 1);
        assert_eq!(out.stages[0].false_positive_rate, 0.0);
        assert!(out.stages[0].detection_rate >= 0.995);
    }

    #[test]
    fn positives_are_window_sized() {
        let p = haar_positives(7, 1);
        assert_eq!(p.len(), 7);
        assert!(p.iter().all(|w| w.width() == 24 && w.height() == 24 && w.channels() == 1));
    }
}
