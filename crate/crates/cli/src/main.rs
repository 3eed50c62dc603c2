//! `kmc` command-line tool: tracking, OTB evaluation, decoder training and
//! sample recording.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kmc::config::{FeatureSource, TrackerConfig};
use kmc::{BBox, KmcError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_LOST: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "kmc", version, about = "Kernelised multi-resolution correlation-filter tracker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track one OTB-layout sequence and write per-frame boxes.
    Track(TrackArgs),
    /// One-pass evaluation over every sequence under a dataset root.
    Eval(EvalArgs),
    /// Train the translation decoder and write KMCD weights.
    TrainDecoder(TrainArgs),
    /// Record response stacks with true translations into a KMCS file.
    RecordSamples(RecordArgs),
    /// Write synthetic OTB-layout sequences with exact ground truth.
    SynthDataset(SynthArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// key=value tracker configuration applied over the defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; nothing is written outside it.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// gray | hog | kmcf:PATH
    #[arg(long, value_parser = parse_features)]
    features: Option<FeatureSource>,
    #[arg(long, value_parser = parse_switch, value_name = "on|off")]
    decoder: Option<bool>,
    /// KMCD weights used when the decoder is on.
    #[arg(long, value_name = "PATH")]
    weights: Option<PathBuf>,
    #[arg(long = "adaptive-lr", value_parser = parse_switch, value_name = "on|off")]
    adaptive_lr: Option<bool>,
    /// Worker threads; defaults to one per core.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// Directory holding img/ and optionally groundtruth_rect.txt.
    sequence: PathBuf,
    /// Initial box; defaults to the first ground-truth line.
    #[arg(long = "init-box", value_parser = parse_bbox, value_name = "x,y,w,h")]
    init_box: Option<BBox>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory whose sub-directories are OTB-layout sequences.
    dataset: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["samples", "synthetic"])))]
struct TrainArgs {
    /// KMCS file of recorded samples.
    #[arg(long, value_name = "PATH")]
    samples: Option<PathBuf>,
    /// Train on this many synthetic response stacks instead.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Channels of synthetic stacks; defaults to the configured layer count.
    #[arg(long)]
    layers: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct RecordArgs {
    /// A sequence directory or a dataset root.
    input: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    sequences: usize,
    #[arg(long, default_value_t = 50)]
    frames: usize,
    /// Size multiplier per frame.
    #[arg(long, default_value_t = 1.0)]
    zoom: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected on or off, got '{s}'")),
    }
}

fn parse_features(s: &str) -> Result<FeatureSource, String> {
    FeatureSource::parse(s).map_err(|e| e.to_string())
}

fn parse_bbox(s: &str) -> Result<BBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("not a number: '{p}'")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, w, h] if BBox::new(x, y, w, h).is_valid() => Ok(BBox::new(x, y, w, h)),
        [_, _, _, _] => Err("box needs positive width and height".into()),
        _ => Err(format!("expected x,y,w,h, got {} values", v.len())),
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(KmcError),
}

impl From<KmcError> for CliError {
    fn from(e: KmcError) -> Self {
        Self::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Run(KmcError::Io(e))
    }
}

impl Common {
    fn tracker_config(&self) -> Result<TrackerConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => TrackerConfig::load(p)?,
            None => TrackerConfig::default(),
        };
        if let Some(f) = &self.features {
            cfg.features = f.clone();
        }
        if let Some(d) = self.decoder {
            cfg.decoder = d;
        }
        if let Some(a) = self.adaptive_lr {
            cfg.adaptive_lr = a;
        }
        if let Some(w) = &self.weights {
            cfg.decoder_weights = Some(w.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn init_threads(&self) -> Result<(), CliError> {
        if let Some(n) = self.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n as usize)
                .build_global()
                .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let result = match &cli.command {
        Command::Track(a) => commands::track(a),
        Command::Eval(a) => commands::eval(a),
        Command::TrainDecoder(a) => commands::train(a),
        Command::RecordSamples(a) => commands::record_samples(a),
        Command::SynthDataset(a) => commands::synth_dataset(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
