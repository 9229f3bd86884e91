use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use facecascade::eval::{compare_report, compare_report_csv, compute_metrics, parse_manifest, ConfusionMatrix, EvalError, MetricsReport, ReportValue};
use facecascade::geometry::Detection;
use facecascade::haar::{build_cascade, detect_haar, feature_pool, haar_positives, load_model, CascadeTrainConfig, HaarCascadeModel, HaarError, ScanConfig, SceneNegatives};
use facecascade::imageio::{draw_overlay, parse_results_json, read_pnm, results_to_json, write_pnm_bytes, Image, ImageDetections, JsonError, PnmError};
use facecascade::nets::{init_weights, load_weights, NetError, Stage, WeightError, WeightStore};
use facecascade::pipeline::{self, CascadeConfig, CascadeNets, PipelineError, PipelineResult, PyramidConfig};
use facecascade::synth::{manifest_line, scenes, SceneConfig};
use facecascade::training::{classification_accuracy, loss_history_csv, synth_dataset, train_stage, LossWeights, TrainConfig};

use crate::{BenchArgs, CompareArgs, DetectArgs, DetectorArgs, DetectorKind, EvalArgs, SynthArgs, TrainArgs, TrainStage};

/// 2 for unreadable images, weights, models, manifests or result files; 1
/// for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let decode = err.chain().any(|c| {
        c.is::<PnmError>()
            || c.is::<WeightError>()
            || c.is::<NetError>()
            || c.is::<JsonError>()
            || c.is::<EvalError>()
            || matches!(c.downcast_ref::<HaarError>(), Some(HaarError::Model(_) | HaarError::Io(_)))
    });
    if decode {
        2
    } else {
        1
    }
}

/// Writes through a temporary file in the destination directory, so a failed
/// run never leaves a partial file behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| anyhow!(e.error)).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_image(path: &Path) -> Result<Image> {
    read_pnm(path).with_context(|| format!("reading image {}", path.display()))
}

fn load_store(paths: &[PathBuf]) -> Result<WeightStore> {
    ensure!(!paths.is_empty(), "--weights is required");
    let mut store = WeightStore::new();
    for p in paths {
        store.merge(load_weights(p).with_context(|| format!("reading weights {}", p.display()))?);
    }
    Ok(store)
}

fn parse_thresholds(text: &str) -> Result<[f32; 3]> {
    let parts: Vec<f32> = text
        .split(',')
        .map(|t| t.trim().parse::<f32>().with_context(|| format!("threshold {t:?}")))
        .collect::<Result<_>>()?;
    parts.try_into().map_err(|v: Vec<f32>| anyhow!("--thresholds needs 3 values, got {}", v.len()))
}

enum Detector {
    Mtcnn(CascadeNets, CascadeConfig),
    Haar(HaarCascadeModel, ScanConfig),
}

struct Outcome {
    detections: Vec<Detection>,
    stages: Option<PipelineResult>,
}

impl Detector {
    fn load(a: &DetectorArgs) -> Result<Self> {
        match a.detector {
            DetectorKind::Mtcnn => {
                let cfg = CascadeConfig {
                    thresholds: parse_thresholds(&a.thresholds)?,
                    pyramid: PyramidConfig {
                        min_face_size: a.min_face,
                        ..PyramidConfig::default()
                    },
                    ..CascadeConfig::default()
                };
                cfg.validate()?;
                let nets = CascadeNets::new(load_store(&a.weights)?).context("weights do not cover all three stages")?;
                Ok(Detector::Mtcnn(nets, cfg))
            }
            DetectorKind::Haar => {
                let path = a.model.as_ref().ok_or_else(|| anyhow!("--detector haar needs --model"))?;
                let model = load_model(path).with_context(|| format!("reading model {}", path.display()))?;
                Ok(Detector::Haar(model, ScanConfig::default()))
            }
        }
    }

    fn run(&self, image: &Image) -> Result<Outcome> {
        match self {
            Detector::Mtcnn(nets, cfg) => match pipeline::detect(image, nets, cfg) {
                Ok(r) => Ok(Outcome {
                    detections: r.detections.clone(),
                    stages: Some(r),
                }),
                Err(PipelineError::ImageTooSmall(..)) => Ok(Outcome {
                    detections: Vec::new(),
                    stages: None,
                }),
                Err(e) => Err(e.into()),
            },
            Detector::Haar(model, scan) => Ok(Outcome {
                detections: detect_haar(image, model, scan)?,
                stages: None,
            }),
        }
    }
}

fn input_images(a: &DetectArgs) -> Result<Vec<PathBuf>> {
    let mut out = a.image.clone();
    if let Some(dir) = &a.dir {
        let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| matches!(e, "ppm" | "pgm" | "pnm")))
            .collect();
        found.sort();
        out.extend(found);
    }
    ensure!(!out.is_empty(), "no input images (use --image or --dir)");
    Ok(out)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn detect(a: &DetectArgs) -> Result<()> {
    let detector = Detector::load(&a.detector)?;
    let inputs = input_images(a)?;
    let mut results = Vec::with_capacity(inputs.len());
    let mut overlays = Vec::new();
    for path in &inputs {
        let image = load_image(path)?;
        let out = detector.run(&image)?;
        if a.verbose {
            match &out.stages {
                Some(r) => eprintln!(
                    "{}: stage1 {} ({:.3} ms), stage2 {} ({:.3} ms), stage3 {} ({:.3} ms)",
                    path.display(),
                    r.counts.stage1,
                    ms(r.timings[0]),
                    r.counts.stage2,
                    ms(r.timings[1]),
                    r.counts.stage3,
                    ms(r.timings[2])
                ),
                None => eprintln!("{}: {} detections", path.display(), out.detections.len()),
            }
        }
        if let Some(dir) = &a.out_overlay {
            let stem = path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
            overlays.push((dir.join(format!("{stem}.ppm")), write_pnm_bytes(&draw_overlay(&image, &out.detections))?));
        }
        results.push(ImageDetections {
            image: path.display().to_string(),
            detections: out.detections,
        });
    }
    let json = results_to_json(&results);
    match &a.out_json {
        Some(p) => write_atomic(p, json.as_bytes())?,
        None => print!("{json}"),
    }
    if let Some(dir) = &a.out_overlay {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (p, bytes) in overlays {
            write_atomic(&p, &bytes)?;
        }
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let stage = match a.stage {
        TrainStage::Pnet => Stage::PNet,
        TrainStage::Rnet => Stage::RNet,
        TrainStage::Onet => Stage::ONet,
        TrainStage::Haar => return train_haar(a),
    };
    let spec = stage.spec();
    let size = stage.input_size();
    let data = synth_dataset(a.synth_n, size, a.seed);
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        ohem_keep_ratio: a.ohem_ratio,
        rng_seed: a.seed,
        ..TrainConfig::default()
    };
    let init = init_weights(&spec, a.seed);
    let out = train_stage(&spec, &init, &data, &cfg, &LossWeights::for_stage(stage))?;
    let held_out = synth_dataset((a.synth_n / 4).max(100), size, a.seed.wrapping_add(1));
    let acc = classification_accuracy(&spec, &out.weights, &held_out)?;
    write_atomic(&a.out_weights, &out.weights.to_bytes()?)?;
    if let Some(p) = &a.loss_csv {
        write_atomic(p, loss_history_csv(&out.history).as_bytes())?;
    }
    let last = out.history.last().map_or_else(|| "n/a".to_string(), |r| format!("{:.5}", r.total));
    println!(
        "{stage}: {} samples, {} epochs, final loss {last}, held-out accuracy {}",
        data.len(),
        a.epochs,
        acc.map_or_else(|| "undefined".to_string(), |v| format!("{:.4}", v))
    );
    Ok(())
}

fn train_haar(a: &TrainArgs) -> Result<()> {
    let positives = haar_positives(a.synth_n, a.seed);
    let mut negatives = SceneNegatives::new(a.seed.wrapping_add(1));
    let cfg = CascadeTrainConfig {
        negatives_per_stage: a.synth_n,
        ..CascadeTrainConfig::default()
    };
    let out = build_cascade(&positives, &mut negatives, &feature_pool(), &cfg)?;
    write_atomic(&a.out_weights, out.model.to_text().as_bytes())?;
    if let Some(p) = &a.loss_csv {
        let mut csv = String::from("stage,rounds,negatives,detection_rate,false_positive_rate\n");
        for (i, s) in out.stages.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},{},{}", i + 1, s.rounds, s.negatives, s.detection_rate, s.false_positive_rate);
        }
        write_atomic(p, csv.as_bytes())?;
    }
    let rounds: usize = out.stages.iter().map(|s| s.rounds).sum();
    println!("haar: {} positives, {} stages, {rounds} stumps", positives.len(), out.stages.len());
    Ok(())
}

fn parse_matrix(text: &str) -> Result<ConfusionMatrix> {
    let v: Vec<u64> = text
        .split(',')
        .map(|t| t.trim().parse::<u64>().with_context(|| format!("count {t:?}")))
        .collect::<Result<_>>()?;
    let [tp, fp, fn_, tn]: [u64; 4] = v.try_into().map_err(|v: Vec<u64>| anyhow!("--matrix needs 4 counts, got {}", v.len()))?;
    Ok(ConfusionMatrix::new(tp, fp, fn_, tn))
}

fn same_image(a: &str, b: &str) -> bool {
    a == b || Path::new(a).file_name().is_some_and(|n| Some(n) == Path::new(b).file_name())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cm = match &a.matrix {
        Some(m) => parse_matrix(m)?,
        None => {
            ensure!(a.iou > 0.0 && a.iou <= 1.0, "--iou {} outside (0, 1]", a.iou);
            let truth_path = a.truth.as_ref().ok_or_else(|| anyhow!("--truth is required without --matrix"))?;
            let text = std::fs::read_to_string(truth_path).with_context(|| format!("reading {}", truth_path.display()))?;
            let truth = parse_manifest(&text).with_context(|| format!("manifest {}", truth_path.display()))?;
            let mut cm = ConfusionMatrix::default();
            if let Some(p) = &a.detections_json {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let results = parse_results_json(&text).with_context(|| format!("detections {}", p.display()))?;
                if let Some(r) = results.iter().find(|r| !truth.iter().any(|t| same_image(&r.image, &t.image))) {
                    bail!("detections for {} have no ground-truth entry", r.image);
                }
                for t in &truth {
                    let dets = results
                        .iter()
                        .find(|r| r.image == t.image)
                        .or_else(|| results.iter().find(|r| same_image(&r.image, &t.image)))
                        .map_or(&[][..], |r| &r.detections[..]);
                    cm.add_image(dets, &t.boxes, a.iou);
                }
            } else {
                let detector = Detector::load(&a.detector)?;
                let base = truth_path.parent().unwrap_or(Path::new(""));
                for t in &truth {
                    let image = load_image(&base.join(&t.image))?;
                    cm.add_image(&detector.run(&image)?.detections, &t.boxes, a.iou);
                }
            }
            cm
        }
    };
    let report = compute_metrics(&cm);
    println!("tp {} fp {} fn {} tn {}", cm.tp, cm.fp, cm.fn_, cm.tn);
    print!("{}", report.to_text());
    if report.values().iter().any(Option::is_none) {
        eprintln!("note: metrics with a zero denominator are undefined");
    }
    if let Some(p) = &a.out_csv {
        write_atomic(p, report.to_csv().as_bytes())?;
    }
    Ok(())
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    ensure!(a.iters > 0, "--iters must be at least 1");
    let image = load_image(&a.image)?;
    let nets = CascadeNets::new(load_store(&a.weights)?).context("weights do not cover all three stages")?;
    let cfg = CascadeConfig {
        pyramid: PyramidConfig {
            min_face_size: a.min_face,
            ..PyramidConfig::default()
        },
        ..CascadeConfig::default()
    };
    cfg.validate()?;
    let mut samples: [Vec<f64>; 4] = Default::default();
    for _ in 0..a.iters {
        let t = Instant::now();
        let r = pipeline::detect(&image, &nets, &cfg)?;
        let total = t.elapsed();
        for (s, d) in samples.iter_mut().zip(r.timings.iter().chain([&total])) {
            s.push(ms(*d));
        }
    }
    let mut csv = String::from("stage,mean_ms,p50_ms,p95_ms\n");
    for (name, s) in ["pnet", "rnet", "onet", "total"].iter().zip(samples.iter_mut()) {
        s.sort_by(f64::total_cmp);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let _ = writeln!(csv, "{name},{mean:.6},{:.6},{:.6}", percentile(s, 0.5), percentile(s, 0.95));
    }
    print!("{csv}");
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut manifest = String::new();
    for (i, scene) in scenes(a.n, a.seed, &SceneConfig::default()).iter().enumerate() {
        let name = format!("img_{i:04}.ppm");
        write_atomic(&a.out_dir.join(&name), &write_pnm_bytes(&scene.image)?)?;
        manifest.push_str(&manifest_line(&name, &scene.faces));
        manifest.push('\n');
    }
    write_atomic(&a.out_dir.join("manifest.txt"), manifest.as_bytes())?;
    println!("wrote {} images and manifest.txt to {}", a.n, a.out_dir.display());
    Ok(())
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let mut rows = Vec::with_capacity(a.row.len());
    for r in &a.row {
        let (name, value) = r.split_once('=').ok_or_else(|| anyhow!("--row {r:?} is not NAME=VALUE"))?;
        let v = match value.parse::<f64>() {
            Ok(pct) => ReportValue::Accuracy(pct),
            Err(_) => {
                let text = std::fs::read_to_string(value).with_context(|| format!("reading {value}"))?;
                ReportValue::Metrics(MetricsReport::from_csv(&text).with_context(|| format!("metrics {value}"))?)
            }
        };
        rows.push((name.to_string(), v));
    }
    print!("{}", compare_report(&rows));
    if let Some(p) = &a.out_csv {
        write_atomic(p, compare_report_csv(&rows).as_bytes())?;
    }
    Ok(())
}
