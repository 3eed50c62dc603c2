//! Per-sequence tracking: initialisation on the first frame, then
//! detect, decode, rescale and update on every following frame.

use rayon::prelude::*;

use crate::adaptation::{layer_loss, update_model, update_stability, LayerStats};
use crate::config::{FeatureSource, LayerSpec, TrackerConfig};
use crate::decoder::{
    decoder_forward, maxres_decode, stack_responses, DecoderNet, ResponseStack, StackGeometry, TrainingSample,
    GRID_COLS, GRID_ROWS,
};
use crate::features::{
    apply_cosine_window, crop_padded_patch_to, extract_grayscale, extract_hog_lite, FeatureMap, FeatureStack,
    KmcfReader, Patch,
};
use crate::image::Image;
use crate::kernel::{detect_response, DualModel, ResponseMap};
use crate::labels::{gaussian_labels, LabelMap};
use crate::scale::{build_scale_samples, ScaleState};
use crate::{BBox, KmcError, Result};

/// Smallest tracked side length in pixels.
const MIN_SIDE: f64 = 4.0;

enum FeatureSourceState {
    InCore(Vec<LayerSpec>),
    File(KmcfReader),
}

impl FeatureSourceState {
    fn open(source: &FeatureSource) -> Result<Self> {
        match source {
            FeatureSource::Kmcf(path) => Ok(Self::File(KmcfReader::open(path)?)),
            other => Ok(Self::InCore(other.layer_specs().expect("in-core source"))),
        }
    }

    fn extract(&mut self, patch: &Patch, frame_index: usize) -> Result<FeatureStack> {
        match self {
            Self::File(reader) => reader.read_frame(frame_index),
            Self::InCore(specs) => {
                let layers = specs
                    .iter()
                    .enumerate()
                    .map(|(i, spec)| {
                        let mut fm = match *spec {
                            LayerSpec::Gray { cell_size } => extract_grayscale(patch, cell_size)?,
                            LayerSpec::Hog { cell_size, orientations } => {
                                extract_hog_lite(patch, cell_size, orientations)?
                            }
                        };
                        fm.layer_id = i + 1;
                        Ok(fm)
                    })
                    .collect::<Result<Vec<_>>>()?;
                FeatureStack::new(layers, frame_index)
            }
        }
    }
}

/// Cosine window followed by scaling to unit Frobenius norm, so that the
/// kernel bandwidth means the same thing for every layer. All-zero maps
/// stay zero.
pub fn prepare_features(fm: &FeatureMap) -> FeatureMap {
    let mut out = apply_cosine_window(fm);
    let norm = out.norm_sq().sqrt();
    if norm > 0.0 && norm.is_finite() {
        out.data_mut().iter_mut().for_each(|v| *v /= norm);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Tracked,
    /// The search window left the frame or collapsed; the state is frozen.
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub center: (f64, f64),
    pub size: (f64, f64),
    /// Size at initialisation; `size = base_size * scale.current_scale`.
    pub base_size: (f64, f64),
    pub models: Vec<DualModel>,
    pub labels: Vec<LabelMap>,
    pub stats: Vec<LayerStats>,
    pub scale: ScaleState,
    pub frame_index: usize,
    pub frame_dims: (usize, usize),
    pub lost: bool,
}

impl TrackState {
    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.center.0, self.center.1, self.size.0, self.size.1)
    }

    /// Frame pixels per patch pixel along x and y.
    fn patch_scale(&self, config: &TrackerConfig) -> (f64, f64) {
        (
            config.padding * self.size.0 / config.patch_w as f64,
            config.padding * self.size.1 / config.patch_h as f64,
        )
    }
}

/// Per-layer responses of one frame and their stacked form.
#[derive(Debug, Clone)]
pub struct Detection {
    pub responses: Vec<ResponseMap>,
    pub stack: ResponseStack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub bbox: BBox,
    pub status: StepStatus,
    /// Decoded translation in patch pixels `(dx, dy)`.
    pub translation: (f64, f64),
}

pub struct Tracker {
    config: TrackerConfig,
    source: FeatureSourceState,
    decoder: Option<DecoderNet>,
    geometry: StackGeometry,
}

impl Tracker {
    /// `decoder` is required when `config.decoder` is on and ignored otherwise.
    pub fn new(config: TrackerConfig, decoder: Option<DecoderNet>) -> Result<Self> {
        config.validate()?;
        let geometry = StackGeometry {
            grid_rows: GRID_ROWS,
            grid_cols: GRID_COLS,
            patch_rows: config.patch_h,
            patch_cols: config.patch_w,
        };
        let decoder = if config.decoder {
            let net = decoder.ok_or_else(|| KmcError::Config("decoder=on needs decoder weights".into()))?;
            let (_, rows, cols) = net.input_shape();
            if (rows, cols) != (geometry.grid_rows, geometry.grid_cols) {
                return Err(KmcError::Config(format!(
                    "decoder grid {rows}x{cols}, expected {}x{}",
                    geometry.grid_rows, geometry.grid_cols
                )));
            }
            Some(net)
        } else {
            None
        };
        let source = FeatureSourceState::open(&config.features)?;
        Ok(Self {
            config,
            source,
            decoder,
            geometry,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn geometry(&self) -> &StackGeometry {
        &self.geometry
    }

    fn features_at(&mut self, frame: &Image, center: (f64, f64), size: (f64, f64), frame_index: usize) -> Result<Vec<FeatureMap>> {
        let c = &self.config;
        let patch = crop_padded_patch_to(frame, center, size, c.padding, (c.patch_w, c.patch_h))?;
        let stack = self.source.extract(&patch, frame_index)?;
        Ok(stack.layers.par_iter().map(prepare_features).collect())
    }

    fn train_models(&self, features: Vec<FeatureMap>, labels: &[LabelMap]) -> Result<Vec<DualModel>> {
        let (lambda, sigma) = (self.config.lambda, self.config.kernel_sigma);
        features
            .into_par_iter()
            .zip(labels.par_iter())
            .map(|(fm, y)| DualModel::train(fm, y, lambda, sigma))
            .collect()
    }

    /// Trains every per-layer model and the scale filter on the first frame.
    pub fn init(&mut self, frame: &Image, bbox: &BBox) -> Result<TrackState> {
        if !bbox.is_valid() {
            return Err(KmcError::InvalidTarget(format!("{bbox:?}")));
        }
        let frame_rect = BBox::new(0.0, 0.0, frame.width() as f64, frame.height() as f64);
        if bbox.iou(&frame_rect) <= 0.0 {
            return Err(KmcError::InvalidTarget(format!("{bbox:?} lies outside the frame")));
        }
        let center = bbox.center();
        let size = (bbox.w, bbox.h);
        let features = self.features_at(frame, center, size, 1)?;
        if let Some(net) = &self.decoder {
            if net.input_shape().0 != features.len() {
                return Err(KmcError::Config(format!(
                    "decoder expects {} layers, features give {}",
                    net.input_shape().0,
                    features.len()
                )));
            }
        }
        let pad = self.config.padding;
        let labels: Vec<LabelMap> = features
            .iter()
            .map(|fm| {
                let target_cells = (fm.rows() as f64 / pad, fm.cols() as f64 / pad);
                gaussian_labels(fm.rows(), fm.cols(), target_cells, self.config.bandwidth_factor)
            })
            .collect();
        let models = self.train_models(features, &labels)?;
        let c = &self.config;
        let stats = (0..models.len())
            .map(|_| LayerStats::with_limits(c.eta, 10.0 * c.eta, c.stability_window, c.rate_rule()))
            .collect();
        let mut scale = ScaleState::new(c.scales, c.scale_factor, c.eta)?;
        scale.min_scale = (MIN_SIDE / size.0.min(size.1)).min(1.0);
        scale.max_scale = (frame.width() as f64 / size.0)
            .min(frame.height() as f64 / size.1)
            .max(1.0);
        let samples = build_scale_samples(frame, center, size, &scale)?;
        scale.train(&samples)?;
        Ok(TrackState {
            center,
            size,
            base_size: size,
            models,
            labels,
            stats,
            scale,
            frame_index: 1,
            frame_dims: (frame.width(), frame.height()),
            lost: false,
        })
    }

    /// Responses of every layer on `frame` around the previous position.
    pub fn detect(&mut self, state: &TrackState, frame: &Image) -> Result<Detection> {
        if (frame.width(), frame.height()) != state.frame_dims {
            return Err(KmcError::Shape(format!(
                "frame {}x{} in a {}x{} sequence",
                frame.width(),
                frame.height(),
                state.frame_dims.0,
                state.frame_dims.1
            )));
        }
        let features = self.features_at(frame, state.center, state.size, state.frame_index + 1)?;
        if features.len() != state.models.len() {
            return Err(KmcError::Shape(format!(
                "{} feature layers for {} models",
                features.len(),
                state.models.len()
            )));
        }
        let responses = state
            .models
            .par_iter()
            .zip(features.par_iter())
            .map(|(m, z)| detect_response(m, z))
            .collect::<Result<Vec<_>>>()?;
        let stack = stack_responses(&responses, &self.geometry)?;
        Ok(Detection { responses, stack })
    }

    /// Translation `(dx, dy)` in patch pixels from the decoder, or MaxRes.
    pub fn decode(&self, stack: &ResponseStack) -> Result<(f64, f64)> {
        match &self.decoder {
            Some(net) => {
                let (nx, ny) = decoder_forward(net, stack)?;
                Ok(self.geometry.denormalize(nx, ny))
            }
            None => Ok(maxres_decode(stack, &self.geometry)),
        }
    }

    fn degenerate(state: &TrackState, center: (f64, f64), size: (f64, f64)) -> bool {
        let finite = center.0.is_finite() && center.1.is_finite() && size.0.is_finite() && size.1.is_finite();
        if !finite || !(size.0 > 0.0 && size.1 > 0.0) {
            return true;
        }
        let (fw, fh) = (state.frame_dims.0 as f64, state.frame_dims.1 as f64);
        BBox::from_center(center.0, center.1, size.0, size.1).iou(&BBox::new(0.0, 0.0, fw, fh)) <= 0.0
    }

    /// Processes the next frame.
    pub fn step(&mut self, state: &mut TrackState, frame: &Image) -> Result<StepOutput> {
        if state.lost {
            return Ok(self.lost_output(state));
        }
        let detection = self.detect(state, frame)?;
        let translation = self.decode(&detection.stack)?;
        let (sx, sy) = state.patch_scale(&self.config);
        let center = (state.center.0 + translation.0 * sx, state.center.1 + translation.1 * sy);
        if Self::degenerate(state, center, state.size) {
            state.lost = true;
            return Ok(self.lost_output(state));
        }

        let mut scale = state.scale.clone();
        let samples = build_scale_samples(frame, center, state.base_size, &scale)?;
        let level = scale.detect(&samples)?;
        scale.apply_level(level);
        let size = (state.base_size.0 * scale.current_scale, state.base_size.1 * scale.current_scale);
        if Self::degenerate(state, center, size) {
            state.lost = true;
            return Ok(self.lost_output(state));
        }
        let samples = build_scale_samples(frame, center, state.base_size, &scale)?;
        scale.update(&samples)?;

        self.finish_step(state, frame, &detection, translation, center, scale)?;
        Ok(StepOutput {
            bbox: state.bbox(),
            status: StepStatus::Tracked,
            translation,
        })
    }

    fn lost_output(&self, state: &mut TrackState) -> StepOutput {
        state.frame_index += 1;
        StepOutput {
            bbox: state.bbox(),
            status: StepStatus::Lost,
            translation: (0.0, 0.0),
        }
    }

    /// Scores each layer at the chosen translation, adapts its rate, and
    /// retrains at the new position.
    fn finish_step(
        &mut self,
        state: &mut TrackState,
        frame: &Image,
        detection: &Detection,
        translation: (f64, f64),
        center: (f64, f64),
        scale: ScaleState,
    ) -> Result<()> {
        for (resp, stats) in detection.responses.iter().zip(state.stats.iter_mut()) {
            let cell = resp.cell_size.max(1) as f64;
            let row = ((translation.1 / cell).round() as i64).rem_euclid(resp.rows() as i64) as usize;
            let col = ((translation.0 / cell).round() as i64).rem_euclid(resp.cols() as i64) as usize;
            update_stability(stats, layer_loss(resp, row, col)?);
        }

        state.center = center;
        state.size = (state.base_size.0 * scale.current_scale, state.base_size.1 * scale.current_scale);
        state.scale = scale;
        state.frame_index += 1;

        let features = self.features_at(frame, state.center, state.size, state.frame_index)?;
        let fresh = self.train_models(features, &state.labels)?;
        let adaptive = self.config.adaptive_lr;
        let eta = self.config.eta;
        for ((model, new), stats) in state.models.iter_mut().zip(&fresh).zip(&state.stats) {
            let rate = if adaptive { stats.eta_k } else { eta };
            *model = update_model(model, new, rate)?;
        }
        Ok(())
    }

    /// Like [`Self::step`] but moves to `truth` instead of the decoded
    /// position, returning the response stack and the normalised translation
    /// that would have been correct.
    pub fn guided_step(&mut self, state: &mut TrackState, frame: &Image, truth: &BBox) -> Result<TrainingSample> {
        if !truth.is_valid() {
            return Err(KmcError::InvalidTarget(format!("{truth:?}")));
        }
        let detection = self.detect(state, frame)?;
        let (sx, sy) = state.patch_scale(&self.config);
        let (tx, ty) = truth.center();
        let translation = ((tx - state.center.0) / sx, (ty - state.center.1) / sy);
        let (nx, ny) = self.geometry.normalize(translation.0, translation.1);
        let target = (nx.clamp(-0.5, 0.5), ny.clamp(-0.5, 0.5));

        let mut scale = state.scale.clone();
        let ratio = ((truth.w / state.base_size.0) * (truth.h / state.base_size.1)).sqrt();
        scale.current_scale = ratio.clamp(scale.min_scale, scale.max_scale);
        let samples = build_scale_samples(frame, (tx, ty), state.base_size, &scale)?;
        scale.update(&samples)?;

        let stack = detection.stack.clone();
        self.finish_step(state, frame, &detection, translation, (tx, ty), scale)?;
        Ok(TrainingSample { stack, target })
    }
}

/// Boxes for every frame of one pass, plus the first frame that was lost.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub boxes: Vec<BBox>,
    pub lost_at: Option<usize>,
}

/// One-pass tracking from `init_bbox` on the first frame.
pub fn run_sequence<I>(frames: I, init_bbox: &BBox, config: &TrackerConfig, decoder: Option<&DecoderNet>) -> Result<TrackOutput>
where
    I: IntoIterator<Item = Result<Image>>,
{
    let mut frames = frames.into_iter();
    let first = frames.next().ok_or(KmcError::EmptySequence)??;
    let mut tracker = Tracker::new(config.clone(), decoder.cloned())?;
    let mut state = tracker.init(&first, init_bbox)?;
    let mut boxes = vec![*init_bbox];
    let mut lost_at = None;
    for (i, frame) in frames.enumerate() {
        let out = tracker.step(&mut state, &frame?)?;
        if out.status == StepStatus::Lost && lost_at.is_none() {
            lost_at = Some(i + 2);
        }
        boxes.push(out.bbox);
    }
    Ok(TrackOutput { boxes, lost_at })
}
