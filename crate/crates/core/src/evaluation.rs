//! OTB-layout datasets and one-pass precision/success evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::config::TrackerConfig;
use crate::decoder::DecoderNet;
use crate::image::Image;
use crate::tracker::run_sequence;
use crate::{BBox, KmcError, Result};

pub const GROUND_TRUTH_FILE: &str = "groundtruth_rect.txt";
pub const FRAME_DIR: &str = "img";
/// Center-distance thresholds 0..=50 px.
pub const PRECISION_STEPS: usize = 51;
/// Overlap thresholds 0, 0.02, .., 1.
pub const SUCCESS_STEPS: usize = 51;
pub const P20_THRESHOLD: usize = 20;

const FRAME_EXTENSIONS: [&str; 5] = ["jpg", "jpeg", "png", "bmp", "pgm"];

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<PathBuf>,
    pub ground_truth: Vec<BBox>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Parses `x,y,w,h` lines separated by commas, tabs or spaces.
pub fn parse_ground_truth(text: &str) -> Result<Vec<BBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| KmcError::Parse { line: i + 1, message };
        let vals = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| err(format!("not a number: '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 4 {
            return Err(err(format!("expected 4 values, got {}", vals.len())));
        }
        let b = BBox::new(vals[0], vals[1], vals[2], vals[3]);
        if !b.is_valid() {
            return Err(err(format!("box {line} has no area")));
        }
        boxes.push(b);
    }
    Ok(boxes)
}

fn frame_number(path: &Path) -> Option<u64> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !FRAME_EXTENSIONS.contains(&ext.as_str()) {
        return None;
    }
    path.file_stem()?.to_str()?.parse().ok()
}

/// Frames under `dir/img/` named `<number>.<ext>`, in numeric order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let img_dir = dir.join(FRAME_DIR);
    if !img_dir.is_dir() {
        return Err(KmcError::Layout(format!("{} is missing", img_dir.display())));
    }
    let mut numbered = Vec::new();
    for entry in std::fs::read_dir(&img_dir)? {
        let path = entry?.path();
        if let Some(n) = frame_number(&path) {
            numbered.push((n, path));
        }
    }
    numbered.sort();
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

/// Reads `dir/img/<number>.<ext>` and `dir/groundtruth_rect.txt`.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let frames = list_frames(dir)?;
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    if !gt_path.is_file() {
        return Err(KmcError::Layout(format!("{} is missing", gt_path.display())));
    }
    let ground_truth = parse_ground_truth(&std::fs::read_to_string(&gt_path)?)?;
    if frames.len() != ground_truth.len() {
        return Err(KmcError::Layout(format!(
            "{} frames but {} ground-truth boxes in {}",
            frames.len(),
            ground_truth.len(),
            dir.display()
        )));
    }
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Ok(Sequence {
        name,
        frames,
        ground_truth,
    })
}

/// Every sub-directory of `root` holding a ground-truth file, by name.
pub fn load_dataset(root: &Path) -> Result<Vec<Sequence>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.join(GROUND_TRUTH_FILE).is_file() {
            dirs.push(path);
        }
    }
    if dirs.is_empty() {
        return Err(KmcError::EmptyDataset);
    }
    dirs.sort();
    dirs.iter().map(|d| load_sequence(d)).collect()
}

fn check_lengths(pred: &[BBox], gt: &[BBox]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(KmcError::Shape(format!("{} predictions for {} ground-truth boxes", pred.len(), gt.len())));
    }
    if gt.is_empty() {
        return Err(KmcError::EmptySequence);
    }
    Ok(())
}

/// Fraction of frames with center distance `<= t` for `t = 0..=50`, and the
/// value at 20 px.
pub fn precision_curve(pred: &[BBox], gt: &[BBox]) -> Result<(Vec<f64>, f64)> {
    check_lengths(pred, gt)?;
    let dists: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.center_distance(g)).collect();
    let n = dists.len() as f64;
    let curve: Vec<f64> = (0..PRECISION_STEPS)
        .map(|t| dists.iter().filter(|&&d| d <= t as f64).count() as f64 / n)
        .collect();
    let p20 = curve[P20_THRESHOLD];
    Ok((curve, p20))
}

pub fn success_threshold(i: usize) -> f64 {
    i as f64 / (SUCCESS_STEPS - 1) as f64
}

/// Fraction of frames with IoU strictly above each overlap threshold, and
/// the curve mean.
pub fn success_curve(pred: &[BBox], gt: &[BBox]) -> Result<(Vec<f64>, f64)> {
    check_lengths(pred, gt)?;
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.iou(g)).collect();
    let n = ious.len() as f64;
    let curve: Vec<f64> = (0..SUCCESS_STEPS)
        .map(|i| {
            let t = success_threshold(i);
            ious.iter().filter(|&&v| v > t).count() as f64 / n
        })
        .collect();
    let auc = curve.iter().sum::<f64>() / curve.len() as f64;
    Ok((curve, auc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricCurves {
    pub precision: Vec<f64>,
    pub success: Vec<f64>,
    pub p20: f64,
    pub auc: f64,
}

impl MetricCurves {
    pub fn compute(pred: &[BBox], gt: &[BBox]) -> Result<Self> {
        let (precision, p20) = precision_curve(pred, gt)?;
        let (success, auc) = success_curve(pred, gt)?;
        Ok(Self {
            precision,
            success,
            p20,
            auc,
        })
    }

    /// Point-wise unweighted mean; `None` for an empty input.
    pub fn mean<'a>(curves: impl IntoIterator<Item = &'a MetricCurves>) -> Option<Self> {
        let mut n = 0usize;
        let mut acc = MetricCurves {
            precision: vec![0.0; PRECISION_STEPS],
            success: vec![0.0; SUCCESS_STEPS],
            p20: 0.0,
            auc: 0.0,
        };
        for c in curves {
            n += 1;
            acc.precision.iter_mut().zip(&c.precision).for_each(|(a, v)| *a += v);
            acc.success.iter_mut().zip(&c.success).for_each(|(a, v)| *a += v);
            acc.p20 += c.p20;
            acc.auc += c.auc;
        }
        if n == 0 {
            return None;
        }
        let inv = 1.0 / n as f64;
        acc.precision.iter_mut().for_each(|v| *v *= inv);
        acc.success.iter_mut().for_each(|v| *v *= inv);
        acc.p20 *= inv;
        acc.auc *= inv;
        Some(acc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceStatus {
    Ok,
    /// Tracking was lost at this 1-based frame; later boxes are frozen.
    Lost(usize),
    Failed(String),
}

impl SequenceStatus {
    pub fn label(&self) -> String {
        match self {
            Self::Ok => "ok".into(),
            Self::Lost(f) => format!("lost@{f}"),
            Self::Failed(_) => "failed".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub name: String,
    pub status: SequenceStatus,
    pub frames: usize,
    pub boxes: Vec<BBox>,
    pub curves: Option<MetricCurves>,
    pub seconds: f64,
}

impl SequenceResult {
    pub fn fps(&self) -> f64 {
        if self.seconds > 0.0 {
            self.frames as f64 / self.seconds
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpeReport {
    pub sequences: Vec<SequenceResult>,
    /// Mean over sequences that did not fail.
    pub aggregate: Option<MetricCurves>,
}

fn evaluate_one(seq: &Sequence, config: &TrackerConfig, decoder: Option<&DecoderNet>) -> SequenceResult {
    let start = Instant::now();
    let outcome = seq
        .ground_truth
        .first()
        .ok_or(KmcError::EmptySequence)
        .and_then(|init| run_sequence(seq.frames.iter().map(|p| Image::load(p)), init, config, decoder))
        .and_then(|out| {
            let curves = MetricCurves::compute(&out.boxes, &seq.ground_truth)?;
            Ok((out, curves))
        });
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((out, curves)) => SequenceResult {
            name: seq.name.clone(),
            status: out.lost_at.map_or(SequenceStatus::Ok, SequenceStatus::Lost),
            frames: seq.len(),
            boxes: out.boxes,
            curves: Some(curves),
            seconds,
        },
        Err(e) => SequenceResult {
            name: seq.name.clone(),
            status: SequenceStatus::Failed(e.to_string()),
            frames: seq.len(),
            boxes: Vec::new(),
            curves: None,
            seconds,
        },
    }
}

/// One-pass evaluation of every sequence, in parallel; failures are
/// recorded per sequence instead of aborting.
pub fn run_ope(sequences: &[Sequence], config: &TrackerConfig, decoder: Option<&DecoderNet>) -> Result<OpeReport> {
    if sequences.is_empty() {
        return Err(KmcError::EmptyDataset);
    }
    let results: Vec<SequenceResult> = sequences
        .par_iter()
        .map(|s| evaluate_one(s, config, decoder))
        .collect();
    let aggregate = MetricCurves::mean(results.iter().filter_map(|r| r.curves.as_ref()));
    Ok(OpeReport {
        sequences: results,
        aggregate,
    })
}

fn fmt_value(v: f64) -> String {
    format!("{v:.6}")
}

/// Summary table: one row per sequence and a final `ALL` row. Timing is
/// left out so that repeated runs produce identical bytes.
pub fn results_csv(report: &OpeReport) -> String {
    let mut s = String::from("sequence,status,p20,auc,frames\n");
    for r in &report.sequences {
        let (p20, auc) = r
            .curves
            .as_ref()
            .map_or((String::new(), String::new()), |c| (fmt_value(c.p20), fmt_value(c.auc)));
        let _ = writeln!(s, "{},{},{},{},{}", r.name, r.status.label(), p20, auc, r.frames);
    }
    let counted: usize = report.sequences.iter().filter(|r| r.curves.is_some()).map(|r| r.frames).sum();
    match &report.aggregate {
        Some(a) => {
            let _ = writeln!(s, "ALL,ok,{},{},{}", fmt_value(a.p20), fmt_value(a.auc), counted);
        }
        None => {
            let _ = writeln!(s, "ALL,failed,,,0");
        }
    }
    s
}

pub fn precision_csv(curves: &MetricCurves) -> String {
    let mut s = String::from("threshold,value\n");
    for (t, v) in curves.precision.iter().enumerate() {
        let _ = writeln!(s, "{t},{}", fmt_value(*v));
    }
    s
}

pub fn success_csv(curves: &MetricCurves) -> String {
    let mut s = String::from("threshold,value\n");
    for (i, v) in curves.success.iter().enumerate() {
        let _ = writeln!(s, "{:.2},{}", success_threshold(i), fmt_value(*v));
    }
    s
}

/// Per-frame `frame,x,y,w,h` rows, 1-based.
pub fn boxes_csv(boxes: &[BBox]) -> String {
    let mut s = String::from("frame,x,y,w,h\n");
    for (i, b) in boxes.iter().enumerate() {
        let _ = writeln!(s, "{},{:.4},{:.4},{:.4},{:.4}", i + 1, b.x, b.y, b.w, b.h);
    }
    s
}

/// Writes `results.csv`, aggregate `precision.csv` / `success.csv`, and
/// per-sequence curves and boxes under `curves/` and `boxes/`.
pub fn write_report(dir: &Path, report: &OpeReport) -> Result<()> {
    std::fs::create_dir_all(dir.join("curves"))?;
    std::fs::create_dir_all(dir.join("boxes"))?;
    std::fs::write(dir.join("results.csv"), results_csv(report))?;
    if let Some(a) = &report.aggregate {
        std::fs::write(dir.join("precision.csv"), precision_csv(a))?;
        std::fs::write(dir.join("success.csv"), success_csv(a))?;
    }
    for r in &report.sequences {
        if let Some(c) = &r.curves {
            std::fs::write(dir.join("curves").join(format!("{}_precision.csv", r.name)), precision_csv(c))?;
            std::fs::write(dir.join("curves").join(format!("{}_success.csv", r.name)), success_csv(c))?;
            std::fs::write(dir.join("boxes").join(format!("{}.csv", r.name)), boxes_csv(&r.boxes))?;
        }
    }
    Ok(())
}
