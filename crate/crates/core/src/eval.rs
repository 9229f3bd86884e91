//! Detection scoring: one-to-one matching against ground truth, confusion
//! matrices, the five summary metrics and detector comparison tables.

use std::cmp::Ordering;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{iou, BBox, Detection, IouMode};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("metrics CSV: {0}")]
    Metrics(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Greedy one-to-one matching. Detections are visited by descending score,
/// equal scores in ascending box-coordinate order (then index), so the counts
/// do not depend on how equal-score detections are listed. Each takes the
/// unmatched truth with the highest IoU at or above `iou_threshold` (ties by
/// lower truth index).
pub fn match_detections(dets: &[Detection], truths: &[BBox], iou_threshold: f32) -> MatchCounts {
    let mut taken = vec![false; truths.len()];
    let mut tp = 0;
    let mut order: Vec<usize> = (0..dets.len()).collect();
    let key = |d: &Detection| [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2];
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .total_cmp(&da.score)
            .then_with(|| key(da).iter().zip(key(db)).fold(Ordering::Equal, |o, (x, y)| o.then(x.total_cmp(&y))))
            .then(a.cmp(&b))
    });
    for i in order {
        let mut best: Option<(usize, f32)> = None;
        for (j, t) in truths.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let o = iou(&dets[i].bbox, t, IouMode::Union);
            if o >= iou_threshold && best.map_or(true, |(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            tp += 1;
        }
    }
    MatchCounts {
        tp,
        fp: dets.len() as u64 - tp,
        fn_: truths.len() as u64 - tp,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    /// Adds one image. Face counts go to TP/FP/FN; an image without faces and
    /// without detections counts as one true negative.
    pub fn add_image(&mut self, dets: &[Detection], truths: &[BBox], iou_threshold: f32) -> MatchCounts {
        let m = match_detections(dets, truths, iou_threshold);
        self.tp += m.tp;
        self.fp += m.fp;
        self.fn_ += m.fn_;
        if dets.is_empty() && truths.is_empty() {
            self.tn += 1;
        }
        m
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Percentages; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

fn percent(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let ConfusionMatrix { tp, fp, fn_, tn } = *cm;
    MetricsReport {
        precision: percent(tp, tp + fp),
        recall: percent(tp, tp + fn_),
        specificity: percent(tn, tn + fp),
        f1: percent(2 * tp, 2 * tp + fp + fn_),
        accuracy: percent(tp + tn, tp + tn + fp + fn_),
    }
}

pub const METRIC_NAMES: [&str; 5] = ["precision", "recall", "specificity", "f1", "accuracy"];

impl MetricsReport {
    pub fn values(&self) -> [Option<f64>; 5] {
        [self.precision, self.recall, self.specificity, self.f1, self.accuracy]
    }

    /// `metric,value` lines, `undefined` for missing values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, v) in METRIC_NAMES.iter().zip(self.values()) {
            let _ = writeln!(out, "{name},{}", format_value(v));
        }
        out
    }

    /// Inverse of [`MetricsReport::to_csv`]; every metric must appear once.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("metric,value") {
            return Err(EvalError::Metrics("missing `metric,value` header".into()));
        }
        let mut values: [Option<Option<f64>>; 5] = [None; 5];
        for line in lines {
            let (name, value) = line
                .split_once(',')
                .ok_or_else(|| EvalError::Metrics(format!("malformed row {line:?}")))?;
            let slot = METRIC_NAMES
                .iter()
                .position(|m| *m == name)
                .ok_or_else(|| EvalError::Metrics(format!("unknown metric {name:?}")))?;
            if values[slot].is_some() {
                return Err(EvalError::Metrics(format!("duplicate metric {name:?}")));
            }
            values[slot] = Some(match value {
                "undefined" => None,
                v => Some(v.parse::<f64>().map_err(|_| EvalError::Metrics(format!("bad value {v:?}")))?),
            });
        }
        let get = |i: usize| values[i].ok_or_else(|| EvalError::Metrics(format!("missing metric {}", METRIC_NAMES[i])));
        Ok(MetricsReport {
            precision: get(0)?,
            recall: get(1)?,
            specificity: get(2)?,
            f1: get(3)?,
            accuracy: get(4)?,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, v) in METRIC_NAMES.iter().zip(self.values()) {
            let _ = writeln!(out, "{name:<12} {}", format_percent(v));
        }
        out
    }
}

fn format_value(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.2}"))
}

fn format_percent(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.2}%"))
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportValue {
    /// A single detection-rate percentage.
    Accuracy(f64),
    Metrics(MetricsReport),
}

fn report_table(rows: &[(String, ReportValue)]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let rate_only = rows.iter().all(|(_, v)| matches!(v, ReportValue::Accuracy(_)));
    let header: Vec<&'static str> = if rate_only {
        vec!["Detector", "Detection rate"]
    } else {
        vec!["Detector", "Precision", "Recall", "Specificity", "F1", "Accuracy"]
    };
    let body = rows
        .iter()
        .map(|(name, v)| {
            let mut cells = vec![name.clone()];
            match v {
                ReportValue::Accuracy(a) if rate_only => cells.push(format!("{a:.2}%")),
                ReportValue::Accuracy(a) => {
                    cells.extend(std::iter::repeat("-".to_string()).take(4));
                    cells.push(format!("{a:.2}%"));
                }
                ReportValue::Metrics(m) => cells.extend(m.values().into_iter().map(format_percent)),
            }
            cells
        })
        .collect();
    (header, body)
}

/// Aligned text table of detector against metric; values are only formatted.
/// All-rate inputs give a two-column detection-rate table.
pub fn compare_report(rows: &[(String, ReportValue)]) -> String {
    let (header, body) = report_table(rows);
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.iter().map(|s| s.to_string()).collect());
    out.push('\n');
    let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

pub fn compare_report_csv(rows: &[(String, ReportValue)]) -> String {
    let (header, body) = report_table(rows);
    let mut out = header.join(",");
    out.push('\n');
    for row in body {
        let cells: Vec<String> = row
            .into_iter()
            .map(|c| {
                let c = c.trim_end_matches('%').to_string();
                if c.contains(',') || c.contains('"') {
                    format!("\"{}\"", c.replace('"', "\"\""))
                } else {
                    c
                }
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// One image of a ground-truth manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image: String,
    pub boxes: Vec<BBox>,
}

/// Lines `image_path x1 y1 x2 y2 [x1 y1 x2 y2 ...]`; blank lines and `#`
/// comments are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<GroundTruth>, EvalError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| EvalError::Manifest { line: n + 1, reason };
        let mut fields = line.split_whitespace();
        let image = fields.next().expect("non-empty line").to_string();
        let nums: Vec<f32> = fields
            .map(|f| f.parse::<f32>().map_err(|_| err(format!("not a number: {f:?}"))))
            .collect::<Result<_, _>>()?;
        if nums.len() % 4 != 0 {
            return Err(err(format!("{} coordinates is not a multiple of 4", nums.len())));
        }
        let boxes = nums
            .chunks_exact(4)
            .map(|c| BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| err(e.to_string())))
            .collect::<Result<_, _>>()?;
        out.push(GroundTruth { image, boxes });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(x1: f32, y1: f32, x2: f32, y2: f32, s: f32) -> Detection {
        Detection::new(BBox::new(x1, y1, x2, y2).unwrap(), s)
    }

    #[test]
    fn matching_examples() {
        let t = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(match_detections(&[det(0.0, 0.0, 10.0, 10.0, 0.9)], &[t], 0.5), MatchCounts { tp: 1, fp: 0, fn_: 0 });
        // 10×10 vs 10×4 inside it: IoU 0.4
        assert_eq!(match_detections(&[det(0.0, 0.0, 10.0, 4.0, 0.9)], &[t], 0.5), MatchCounts { tp: 0, fp: 1, fn_: 1 });
        assert_eq!(match_detections(&[], &[t, t, t], 0.5), MatchCounts { tp: 0, fp: 0, fn_: 3 });
        // one truth, two matching detections: only one counts
        let two = [det(0.0, 0.0, 10.0, 10.0, 0.9), det(0.0, 0.0, 10.0, 9.0, 0.8)];
        assert_eq!(match_detections(&two, &[t], 0.5), MatchCounts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn table_four_metrics() {
        let m = compute_metrics(&ConfusionMatrix::new(17620, 335, 30, 280));
        let want = [98.13, 99.83, 45.53, 98.97, 98.00];
        for (v, w) in m.values().iter().zip(want) {
            assert!((v.unwrap() - w).abs() <= 0.01, "{v:?} vs {w}");
        }
    }

    #[test]
    fn degenerate_matrices() {
        let m = compute_metrics(&ConfusionMatrix::new(1, 0, 0, 1));
        assert!(m.values().iter().all(|v| *v == Some(100.0)));
        let z = compute_metrics(&ConfusionMatrix::default());
        assert!(z.values().iter().all(Option::is_none));
        assert!(z.to_csv().contains("precision,undefined"));
        assert_eq!(MetricsReport::from_csv(&z.to_csv()).unwrap(), z);
        let m = compute_metrics(&ConfusionMatrix::new(17620, 335, 30, 280));
        let back = MetricsReport::from_csv(&m.to_csv()).unwrap();
        assert!((back.precision.unwrap() - 98.13).abs() < 1e-9);
        assert!(MetricsReport::from_csv("metric,value\nprecision,1\n").is_err());
    }

    #[test]
    fn tie_order_is_canonical() {
        // a overlaps both truths (t1 better), b overlaps only t1
        let t1 = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let t2 = BBox::new(4.0, 0.0, 14.0, 10.0).unwrap();
        let a = det(2.0, 0.0, 12.0, 10.0, 0.5);
        let b = det(0.0, 0.0, 10.0, 8.0, 0.5);
        let ab = match_detections(&[a.clone(), b.clone()], &[t1, t2], 0.5);
        let ba = match_detections(&[b, a], &[t1, t2], 0.5);
        assert_eq!(ab, ba);
    }

    #[test]
    fn empty_image_is_true_negative() {
        let mut cm = ConfusionMatrix::default();
        cm.add_image(&[], &[], 0.5);
        assert_eq!(cm, ConfusionMatrix::new(0, 0, 0, 1));
    }

    #[test]
    fn report_shapes() {
        let rows = vec![
            ("Viola-Jones".to_string(), ReportValue::Accuracy(74.38)),
            ("Haar".to_string(), ReportValue::Accuracy(94.0)),
            ("MTCNN".to_string(), ReportValue::Accuracy(99.95)),
        ];
        let text = compare_report(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Detector     Detection rate");
        assert_eq!(lines[2], "Viola-Jones          74.38%");
        assert_eq!(lines[3], "Haar                 94.00%");
        assert_eq!(lines.len(), 5);
        assert_eq!(compare_report_csv(&rows).lines().nth(3), Some("MTCNN,99.95"));
        let empty = compare_report(&[]);
        assert_eq!(empty.lines().count(), 2);
        assert!(empty.starts_with("Detector"));

        let m = compute_metrics(&ConfusionMatrix::new(17620, 335, 30, 280));
        let mixed = compare_report(&[("MTCNN".into(), ReportValue::Metrics(m)), ("Haar".into(), ReportValue::Accuracy(68.16))]);
        assert!(mixed.lines().next().unwrap().contains("Specificity"));
        assert!(mixed.contains("45.53%") && mixed.contains("68.16%"));
    }

    #[test]
    fn manifest_parsing() {
        let gt = parse_manifest("# header\na.ppm 0 0 10 10 5 5 20 20\n\nb.ppm\n").unwrap();
        assert_eq!(gt.len(), 2);
        assert_eq!(gt[0].boxes.len(), 2);
        assert!(gt[1].boxes.is_empty());
        assert!(matches!(parse_manifest("a 1 2 3"), Err(EvalError::Manifest { line: 1, .. })));
        assert!(parse_manifest("a 5 5 1 1").is_err());
        assert!(parse_manifest("a x 0 1 1").is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0f32..50.0, 0.0f32..50.0, 2.0f32..30.0, 2.0f32..30.0).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn counts_add_up(dets in proptest::collection::vec((arb_box(), 0u8..4), 0..12), truths in proptest::collection::vec(arb_box(), 0..8)) {
            let dets: Vec<Detection> = dets.into_iter().map(|(b, s)| Detection::new(b, s as f32 / 4.0)).collect();
            let m = match_detections(&dets, &truths, 0.3);
            prop_assert_eq!(m.tp + m.fn_, truths.len() as u64);
            prop_assert_eq!(m.tp + m.fp, dets.len() as u64);
        }

        #[test]
        fn equal_score_order_does_not_change_counts(boxes in proptest::collection::vec(arb_box(), 1..10), truths in proptest::collection::vec(arb_box(), 0..6)) {
            let dets: Vec<Detection> = boxes.iter().map(|b| Detection::new(*b, 0.5)).collect();
            let mut rev = dets.clone();
            rev.reverse();
            prop_assert_eq!(match_detections(&dets, &truths, 0.3), match_detections(&rev, &truths, 0.3));
        }
    }
}
