use std::path::Path;
use std::time::Instant;

use kmc::config::{FeatureSource, TrackerConfig};
use kmc::decoder::{
    generate_synthetic_samples, load_decoder, load_samples, maxres_rms, save_decoder, save_samples, train_decoder,
    DecoderNet, NoiseParams, StackGeometry, TrainConfig, TrainingSample,
};
use kmc::evaluation::{
    boxes_csv, list_frames, load_dataset, load_sequence, parse_ground_truth, run_ope, write_report, MetricCurves,
    Sequence, SequenceStatus, GROUND_TRUTH_FILE,
};
use kmc::features::KmcfReader;
use kmc::image::Image;
use kmc::synth::{render_sequence, write_otb, SynthConfig};
use kmc::tracker::{run_sequence, Tracker};
use kmc::KmcError;

use crate::manifest::{write_json, Manifest, SequenceTiming, Timing, TIMING_FILE};
use crate::{CliError, EvalArgs, RecordArgs, SynthArgs, TrackArgs, TrainArgs, EXIT_LOST, EXIT_OK};

/// Synthetic training used when the decoder is on but no weights are given.
const AUTO_SAMPLES: usize = 2000;
const AUTO_EPOCHS: usize = 25;

pub const DECODER_FILE: &str = "decoder.kmcd";
pub const SAMPLES_FILE: &str = "samples.kmcs";

fn layer_count(cfg: &TrackerConfig) -> Result<usize, CliError> {
    match &cfg.features {
        FeatureSource::Kmcf(path) => Ok(KmcfReader::open(path)?.layers().len()),
        other => Ok(other.layer_specs().map_or(0, |v| v.len())),
    }
}

fn decoder_source(cfg: &TrackerConfig) -> String {
    match (&cfg.decoder, &cfg.decoder_weights) {
        (false, _) => "off".into(),
        (true, Some(p)) => format!("weights:{}", p.display()),
        (true, None) => format!("synthetic:{AUTO_SAMPLES}x{AUTO_EPOCHS}"),
    }
}

/// Loads the configured weights, or trains a decoder on seeded synthetic
/// stacks and keeps a copy in `out`.
fn resolve_decoder(cfg: &TrackerConfig, seed: u64, out: &Path) -> Result<Option<DecoderNet>, CliError> {
    if !cfg.decoder {
        return Ok(None);
    }
    if let Some(p) = &cfg.decoder_weights {
        return Ok(Some(load_decoder(p)?));
    }
    let layers = layer_count(cfg)?;
    eprintln!("no decoder weights given; training on {AUTO_SAMPLES} synthetic stacks (seed {seed})");
    let samples = generate_synthetic_samples(AUTO_SAMPLES, &NoiseParams::default_for(layers), seed);
    let tc = TrainConfig {
        max_epochs: AUTO_EPOCHS,
        seed,
        ..TrainConfig::default()
    };
    let report = train_decoder(&samples, &tc)?;
    save_decoder(&out.join(DECODER_FILE), &report.net)?;
    Ok(Some(report.net))
}

pub fn track(a: &TrackArgs) -> Result<u8, CliError> {
    let c = &a.common;
    let gt_path = a.sequence.join(GROUND_TRUTH_FILE);
    let ground_truth = if gt_path.is_file() {
        Some(parse_ground_truth(&std::fs::read_to_string(&gt_path)?)?)
    } else {
        None
    };
    let init = match (a.init_box, ground_truth.as_ref().and_then(|g| g.first())) {
        (Some(b), _) => b,
        (None, Some(b)) => *b,
        (None, None) => {
            return Err(CliError::Usage(format!("{} has no {GROUND_TRUTH_FILE}; pass --init-box", a.sequence.display())))
        }
    };
    let cfg = c.tracker_config()?;
    c.init_threads()?;
    let mut manifest = Manifest::new("track", c.seed, Some(&a.sequence), &c.out).with_config(&cfg);
    manifest.decoder = decoder_source(&cfg);
    manifest.set("init_box", format!("{},{},{},{}", init.x, init.y, init.w, init.h));
    manifest.write()?;

    let frames = list_frames(&a.sequence)?;
    let decoder = resolve_decoder(&cfg, c.seed, &c.out)?;
    let start = Instant::now();
    let out = run_sequence(frames.iter().map(|p| Image::load(p)), &init, &cfg, decoder.as_ref())?;
    let seconds = start.elapsed().as_secs_f64();
    std::fs::write(c.out.join("boxes.csv"), boxes_csv(&out.boxes))?;
    let name = a.sequence.file_name().map_or("sequence".into(), |s| s.to_string_lossy().into_owned());
    write_json(
        &c.out.join(TIMING_FILE),
        &Timing {
            total_seconds: seconds,
            sequences: vec![SequenceTiming {
                name,
                frames: out.boxes.len(),
                seconds,
                fps: out.boxes.len() as f64 / seconds.max(f64::MIN_POSITIVE),
            }],
        },
    )?;

    println!("frames {}", out.boxes.len());
    if let Some(gt) = ground_truth.filter(|g| g.len() == out.boxes.len()) {
        let m = MetricCurves::compute(&out.boxes, &gt)?;
        println!("p20 {:.6} auc {:.6}", m.p20, m.auc);
    }
    match out.lost_at {
        Some(f) => {
            eprintln!("tracking lost at frame {f}");
            Ok(EXIT_LOST)
        }
        None => Ok(EXIT_OK),
    }
}

pub fn eval(a: &EvalArgs) -> Result<u8, CliError> {
    let c = &a.common;
    let cfg = c.tracker_config()?;
    c.init_threads()?;
    let sequences = load_dataset(&a.dataset)?;
    let mut manifest = Manifest::new("eval", c.seed, Some(&a.dataset), &c.out).with_config(&cfg);
    manifest.decoder = decoder_source(&cfg);
    manifest.set("sequences", sequences.len());
    manifest.write()?;

    let decoder = resolve_decoder(&cfg, c.seed, &c.out)?;
    let start = Instant::now();
    let report = run_ope(&sequences, &cfg, decoder.as_ref())?;
    let total_seconds = start.elapsed().as_secs_f64();
    write_report(&c.out, &report)?;
    let timing = Timing {
        total_seconds,
        sequences: report
            .sequences
            .iter()
            .map(|r| SequenceTiming {
                name: r.name.clone(),
                frames: r.frames,
                seconds: r.seconds,
                fps: r.fps(),
            })
            .collect(),
    };
    write_json(&c.out.join(TIMING_FILE), &timing)?;

    for r in &report.sequences {
        if let SequenceStatus::Failed(m) = &r.status {
            eprintln!("{}: {m}", r.name);
        }
    }
    match &report.aggregate {
        Some(m) => println!("sequences {} p20 {:.6} auc {:.6}", report.sequences.len(), m.p20, m.auc),
        None => println!("sequences {} all failed", report.sequences.len()),
    }
    Ok(EXIT_OK)
}

pub fn train(a: &TrainArgs) -> Result<u8, CliError> {
    let c = &a.common;
    let cfg = c.tracker_config()?;
    c.init_threads()?;
    let mut manifest = Manifest::new("train-decoder", c.seed, a.samples.as_deref(), &c.out).with_config(&cfg);
    manifest.set("epochs", a.epochs);
    let samples: Vec<TrainingSample> = match (&a.samples, a.synthetic) {
        (Some(p), _) => load_samples(p)?,
        (None, Some(n)) => {
            let layers = match a.layers {
                Some(k) => k,
                None => layer_count(&cfg)?,
            };
            manifest.set("synthetic", n);
            manifest.set("layers", layers);
            generate_synthetic_samples(n, &NoiseParams::default_for(layers), c.seed)
        }
        (None, None) => return Err(CliError::Usage("pass --samples or --synthetic".into())),
    };
    manifest.write()?;
    if samples.is_empty() {
        return Err(KmcError::EmptyDataset.into());
    }

    let tc = TrainConfig {
        max_epochs: a.epochs,
        seed: c.seed,
        ..TrainConfig::default()
    };
    let report = train_decoder(&samples, &tc)?;
    save_decoder(&c.out.join(DECODER_FILE), &report.net)?;
    let mut history = String::from("epoch,train_rms,validation_rms\n");
    for e in &report.history {
        history.push_str(&format!("{},{:.8},{:.8}\n", e.epoch, e.train_rms, e.validation_rms));
    }
    std::fs::write(c.out.join("training.csv"), history)?;

    let held_out: Vec<&TrainingSample> = report.validation_indices.iter().map(|&i| &samples[i]).collect();
    let geometry = StackGeometry {
        grid_rows: samples[0].stack.rows,
        grid_cols: samples[0].stack.cols,
        ..StackGeometry::default()
    };
    println!(
        "best epoch {} train_rms {:.6} validation_rms {:.6} maxres_rms {:.6}",
        report.best_epoch,
        report.train_rms,
        report.validation_rms,
        maxres_rms(&held_out, &geometry)
    );
    Ok(EXIT_OK)
}

/// Tracks along the ground truth, recording each frame's response stack
/// with the translation that would have been correct.
fn record_sequence(seq: &Sequence, cfg: &TrackerConfig) -> Result<Vec<TrainingSample>, CliError> {
    let mut tracker = Tracker::new(cfg.clone(), None)?;
    let mut frames = seq.frames.iter();
    let first = Image::load(frames.next().ok_or(KmcError::EmptySequence)?)?;
    let mut state = tracker.init(&first, &seq.ground_truth[0])?;
    let mut out = Vec::with_capacity(seq.len().saturating_sub(1));
    for (path, truth) in frames.zip(&seq.ground_truth[1..]) {
        out.push(tracker.guided_step(&mut state, &Image::load(path)?, truth)?);
    }
    Ok(out)
}

pub fn record_samples(a: &RecordArgs) -> Result<u8, CliError> {
    let c = &a.common;
    let mut cfg = c.tracker_config()?;
    // Recording follows the ground truth, so no decoder is consulted.
    cfg.decoder = false;
    c.init_threads()?;
    let sequences = if a.input.join(GROUND_TRUTH_FILE).is_file() {
        vec![load_sequence(&a.input)?]
    } else {
        load_dataset(&a.input)?
    };
    let mut manifest = Manifest::new("record-samples", c.seed, Some(&a.input), &c.out).with_config(&cfg);
    manifest.set("sequences", sequences.len());
    manifest.write()?;

    let mut samples = Vec::new();
    for seq in &sequences {
        samples.extend(record_sequence(seq, &cfg)?);
    }
    save_samples(&c.out.join(SAMPLES_FILE), &samples)?;
    println!("samples {}", samples.len());
    Ok(EXIT_OK)
}

pub fn synth_dataset(a: &SynthArgs) -> Result<u8, CliError> {
    if a.sequences == 0 || a.frames == 0 {
        return Err(CliError::Usage("--sequences and --frames must be positive".into()));
    }
    let mut manifest = Manifest::new("synth-dataset", a.seed, None, &a.out);
    manifest.set("sequences", a.sequences);
    manifest.set("frames", a.frames);
    manifest.set("zoom", a.zoom);
    manifest.set("noise", a.noise);
    manifest.write()?;
    for i in 0..a.sequences {
        let sc = SynthConfig {
            frames: a.frames,
            zoom: a.zoom,
            noise_std: a.noise,
            // Alternate the direction of motion between sequences.
            velocity: if i % 2 == 0 { (2.0, 1.0) } else { (-1.0, 1.5) },
            start_center: if i % 2 == 0 { (90.0, 80.0) } else { (220.0, 90.0) },
            seed: a.seed.wrapping_mul(1000).wrapping_add(i as u64),
            ..SynthConfig::default()
        };
        write_otb(&a.out, &format!("synth{:02}", i + 1), &render_sequence(&sc))?;
    }
    println!("sequences {}", a.sequences);
    Ok(EXIT_OK)
}
