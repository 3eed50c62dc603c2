//! Tracker configuration read from `key=value` lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::adaptation::{RateRule, DEFAULT_ETA, DEFAULT_WINDOW};
use crate::kernel::{DEFAULT_KERNEL_SIGMA, DEFAULT_LAMBDA};
use crate::labels::DEFAULT_BANDWIDTH_FACTOR;
use crate::scale::{DEFAULT_SCALE_COUNT, DEFAULT_SCALE_STEP};
use crate::{KmcError, Result};

/// One in-core feature layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Gray { cell_size: usize },
    Hog { cell_size: usize, orientations: usize },
}

/// Where per-frame feature stacks come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    /// Grayscale at cell sizes 1, 2 and 4.
    Gray,
    /// Grayscale at cell size 2 followed by HOG at cell sizes 4 and 8.
    Hog,
    /// Precomputed stacks, one per frame, from a KMCF file.
    Kmcf(PathBuf),
    /// Explicit layer list, ids assigned 1.. in order.
    Layers(Vec<LayerSpec>),
}

impl FeatureSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gray" => Ok(Self::Gray),
            "hog" => Ok(Self::Hog),
            _ => match s.strip_prefix("kmcf:") {
                Some(p) if !p.is_empty() => Ok(Self::Kmcf(PathBuf::from(p))),
                _ => Err(KmcError::Config(format!("unknown feature source '{s}'"))),
            },
        }
    }

    /// In-core layer list, or `None` for file-backed sources.
    pub fn layer_specs(&self) -> Option<Vec<LayerSpec>> {
        match self {
            Self::Gray => Some(vec![
                LayerSpec::Gray { cell_size: 1 },
                LayerSpec::Gray { cell_size: 2 },
                LayerSpec::Gray { cell_size: 4 },
            ]),
            Self::Hog => Some(vec![
                LayerSpec::Gray { cell_size: 2 },
                LayerSpec::Hog { cell_size: 4, orientations: 9 },
                LayerSpec::Hog { cell_size: 8, orientations: 9 },
            ]),
            Self::Kmcf(_) => None,
            Self::Layers(v) => Some(v.clone()),
        }
    }

    fn as_config_value(&self) -> String {
        match self {
            Self::Gray => "gray".into(),
            Self::Hog => "hog".into(),
            Self::Kmcf(p) => format!("kmcf:{}", p.display()),
            Self::Layers(v) => {
                let parts: Vec<String> = v
                    .iter()
                    .map(|l| match l {
                        LayerSpec::Gray { cell_size } => format!("gray{cell_size}"),
                        LayerSpec::Hog { cell_size, orientations } => format!("hog{cell_size}x{orientations}"),
                    })
                    .collect();
                format!("layers:{}", parts.join("+"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub padding: f64,
    pub patch_w: usize,
    pub patch_h: usize,
    pub kernel_sigma: f64,
    pub eta: f64,
    pub lambda: f64,
    pub scales: usize,
    pub scale_factor: f64,
    pub stability_window: usize,
    pub decoder: bool,
    pub adaptive_lr: bool,
    pub inverse_stability: bool,
    pub features: FeatureSource,
    pub bandwidth_factor: f64,
    /// KMCD file loaded when `decoder` is on.
    pub decoder_weights: Option<PathBuf>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            padding: 2.2,
            patch_w: crate::features::PATCH_WIDTH,
            patch_h: crate::features::PATCH_HEIGHT,
            kernel_sigma: DEFAULT_KERNEL_SIGMA,
            eta: DEFAULT_ETA,
            lambda: DEFAULT_LAMBDA,
            scales: DEFAULT_SCALE_COUNT,
            scale_factor: DEFAULT_SCALE_STEP,
            stability_window: DEFAULT_WINDOW,
            decoder: true,
            adaptive_lr: true,
            inverse_stability: false,
            features: FeatureSource::Hog,
            bandwidth_factor: DEFAULT_BANDWIDTH_FACTOR,
            decoder_weights: None,
        }
    }
}

fn parse_switch(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(KmcError::Config(format!("{key}: expected on|off, got '{v}'"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| KmcError::Config(format!("{key}: cannot parse '{v}'")))
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl TrackerConfig {
    pub fn rate_rule(&self) -> RateRule {
        if self.inverse_stability {
            RateRule::InverseStability
        } else {
            RateRule::Linear
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "padding" => self.padding = parse_num(key, v)?,
            "patch_w" => self.patch_w = parse_num(key, v)?,
            "patch_h" => self.patch_h = parse_num(key, v)?,
            "kernel_sigma" => self.kernel_sigma = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "scales" => self.scales = parse_num(key, v)?,
            "scale_factor" => self.scale_factor = parse_num(key, v)?,
            "stability_window" => self.stability_window = parse_num(key, v)?,
            "decoder" => self.decoder = parse_switch(key, v)?,
            "adaptive_lr" => self.adaptive_lr = parse_switch(key, v)?,
            "inverse_stability" => self.inverse_stability = parse_switch(key, v)?,
            "features" => self.features = FeatureSource::parse(v)?,
            "bandwidth_factor" => self.bandwidth_factor = parse_num(key, v)?,
            "decoder_weights" => self.decoder_weights = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => return Err(KmcError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| KmcError::Parse {
                line: i + 1,
                message: format!("expected key=value, got '{line}'"),
            })?;
            cfg.set(k, v).map_err(|e| KmcError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KmcError::Config(m));
        if !(self.padding > 0.0 && self.padding.is_finite()) {
            return bad(format!("padding {} must be positive", self.padding));
        }
        if self.patch_w == 0 || self.patch_h == 0 {
            return bad("patch size must be positive".into());
        }
        if !(self.kernel_sigma > 0.0) {
            return bad(format!("kernel_sigma {} must be positive", self.kernel_sigma));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta {} outside [0, 1]", self.eta));
        }
        if !(self.lambda > 0.0) {
            return bad(format!("lambda {} must be positive", self.lambda));
        }
        if self.scales == 0 || self.scales % 2 == 0 {
            return bad(format!("scales {} must be odd", self.scales));
        }
        if !(self.scale_factor > 1.0) {
            return bad(format!("scale_factor {} must exceed 1", self.scale_factor));
        }
        if self.stability_window == 0 {
            return bad("stability_window must be at least 1".into());
        }
        if !(self.bandwidth_factor > 0.0) {
            return bad(format!("bandwidth_factor {} must be positive", self.bandwidth_factor));
        }
        Ok(())
    }

    /// Serialises every setting as `key=value` lines that [`Self::parse`]
    /// reads back to an equal config (explicit layer lists excepted).
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "padding={}", self.padding);
        let _ = writeln!(s, "patch_w={}", self.patch_w);
        let _ = writeln!(s, "patch_h={}", self.patch_h);
        let _ = writeln!(s, "kernel_sigma={}", self.kernel_sigma);
        let _ = writeln!(s, "eta={}", self.eta);
        let _ = writeln!(s, "lambda={}", self.lambda);
        let _ = writeln!(s, "scales={}", self.scales);
        let _ = writeln!(s, "scale_factor={}", self.scale_factor);
        let _ = writeln!(s, "stability_window={}", self.stability_window);
        let _ = writeln!(s, "decoder={}", switch(self.decoder));
        let _ = writeln!(s, "adaptive_lr={}", switch(self.adaptive_lr));
        let _ = writeln!(s, "inverse_stability={}", switch(self.inverse_stability));
        let _ = writeln!(s, "features={}", self.features.as_config_value());
        let _ = writeln!(s, "bandwidth_factor={}", self.bandwidth_factor);
        if let Some(p) = &self.decoder_weights {
            let _ = writeln!(s, "decoder_weights={}", p.display());
        }
        s
    }
}
