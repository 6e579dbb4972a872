//! Pipeline configuration and its `key=value` text form.
//!
//! Every field is addressable by name; unknown keys are rejected. The same
//! form is used for config files, `--set` overrides and the snapshots written
//! into manifests, reports and index files.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Each frame from the previous one only.
    Markov,
    /// Each frame from the supplied reference and the previous frame.
    Exemplar,
    /// Reference first re-colorized onto frame 0, then reference + previous.
    TwoStage,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Markov, Mode::Exemplar, Mode::TwoStage];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Markov => "markov",
            Mode::Exemplar => "exemplar",
            Mode::TwoStage => "two_stage",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "markov" => Ok(Mode::Markov),
            "exemplar" => Ok(Mode::Exemplar),
            "two_stage" | "two-stage" => Ok(Mode::TwoStage),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Combined-score weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricWeights {
    pub perceptual: f64,
    pub l1: f64,
    pub temporal: f64,
    pub cdc: f64,
    pub frechet: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self {
            perceptual: 1.0,
            l1: 1.0,
            temporal: 1.0,
            cdc: 1.0,
            frechet: 1.0,
        }
    }
}

/// Perceptual level weights, finest to coarsest of the three coarsest levels.
pub const DEFAULT_PERCEPTUAL_WEIGHTS: [f64; 3] = [0.02, 0.003, 0.5];

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub temperature: f64,
    pub top_k: usize,
    /// Confidence below which the reference term gets no weight.
    pub confidence_floor: f64,
    /// Maximum weight of the reference term.
    pub blend_bias: f64,
    pub search_radius: usize,
    pub flow_levels: usize,
    /// 0 disables smoothing, 1 applies the full filter.
    pub smooth_strength: f64,
    pub smooth_radius: usize,
    /// Luminance difference at which smoothing stops averaging.
    pub smooth_edge_threshold: f64,
    pub histogram_bins: usize,
    pub cdc_strides: Vec<usize>,
    pub perceptual_weights: [f64; 3],
    pub metric_weights: MetricWeights,
    pub feature_levels: usize,
    pub n_components: usize,
    /// Side of the square the luminance is resized to before embedding.
    pub retrieval_size: usize,
    pub min_side: usize,
    pub min_colorfulness: f64,
    pub occlusion_tol: f64,
    /// Mean luminance warp error above which a frame is treated as a cut.
    pub scene_cut_threshold: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::TwoStage,
            temperature: 0.05,
            top_k: 8,
            confidence_floor: 0.3,
            blend_bias: 0.7,
            search_radius: 4,
            flow_levels: 3,
            smooth_strength: 1.0,
            smooth_radius: 2,
            smooth_edge_threshold: 10.0,
            histogram_bins: 256,
            cdc_strides: vec![1],
            perceptual_weights: DEFAULT_PERCEPTUAL_WEIGHTS,
            metric_weights: MetricWeights::default(),
            feature_levels: 3,
            n_components: 64,
            retrieval_size: 64,
            min_side: 128,
            min_colorfulness: 8.0,
            occlusion_tol: 1.0,
            scene_cut_threshold: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "mode",
    "temperature",
    "top_k",
    "confidence_floor",
    "blend_bias",
    "search_radius",
    "flow_levels",
    "smooth_strength",
    "smooth_radius",
    "smooth_edge_threshold",
    "histogram_bins",
    "cdc_strides",
    "perceptual_weights",
    "lambda_perc",
    "lambda_l1",
    "lambda_temp",
    "lambda_cdc",
    "lambda_frechet",
    "feature_levels",
    "n_components",
    "retrieval_size",
    "min_side",
    "min_colorfulness",
    "occlusion_tol",
    "scene_cut_threshold",
];

/// Keys that affect how a corpus index is built.
pub const INDEX_KEYS: &[&str] = &[
    "feature_levels",
    "n_components",
    "retrieval_size",
    "min_side",
    "min_colorfulness",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn fmt_list<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "mode" => self.mode = value.parse()?,
            "temperature" => self.temperature = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "confidence_floor" => self.confidence_floor = parse(key, value)?,
            "blend_bias" => self.blend_bias = parse(key, value)?,
            "search_radius" => self.search_radius = parse(key, value)?,
            "flow_levels" => self.flow_levels = parse(key, value)?,
            "smooth_strength" => self.smooth_strength = parse(key, value)?,
            "smooth_radius" => self.smooth_radius = parse(key, value)?,
            "smooth_edge_threshold" => self.smooth_edge_threshold = parse(key, value)?,
            "histogram_bins" => self.histogram_bins = parse(key, value)?,
            "cdc_strides" => self.cdc_strides = parse_list(key, value)?,
            "perceptual_weights" => {
                let w: Vec<f64> = parse_list(key, value)?;
                self.perceptual_weights = w.try_into().map_err(|_| {
                    Error::Config("`perceptual_weights` needs exactly 3 values".into())
                })?;
            }
            "lambda_perc" => self.metric_weights.perceptual = parse(key, value)?,
            "lambda_l1" => self.metric_weights.l1 = parse(key, value)?,
            "lambda_temp" => self.metric_weights.temporal = parse(key, value)?,
            "lambda_cdc" => self.metric_weights.cdc = parse(key, value)?,
            "lambda_frechet" => self.metric_weights.frechet = parse(key, value)?,
            "feature_levels" => self.feature_levels = parse(key, value)?,
            "n_components" => self.n_components = parse(key, value)?,
            "retrieval_size" => self.retrieval_size = parse(key, value)?,
            "min_side" => self.min_side = parse(key, value)?,
            "min_colorfulness" => self.min_colorfulness = parse(key, value)?,
            "occlusion_tol" => self.occlusion_tol = parse(key, value)?,
            "scene_cut_threshold" => {
                self.scene_cut_threshold = match value.trim() {
                    "off" | "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let w = &self.metric_weights;
        Some(match key {
            "mode" => self.mode.to_string(),
            "temperature" => self.temperature.to_string(),
            "top_k" => self.top_k.to_string(),
            "confidence_floor" => self.confidence_floor.to_string(),
            "blend_bias" => self.blend_bias.to_string(),
            "search_radius" => self.search_radius.to_string(),
            "flow_levels" => self.flow_levels.to_string(),
            "smooth_strength" => self.smooth_strength.to_string(),
            "smooth_radius" => self.smooth_radius.to_string(),
            "smooth_edge_threshold" => self.smooth_edge_threshold.to_string(),
            "histogram_bins" => self.histogram_bins.to_string(),
            "cdc_strides" => fmt_list(&self.cdc_strides),
            "perceptual_weights" => fmt_list(&self.perceptual_weights),
            "lambda_perc" => w.perceptual.to_string(),
            "lambda_l1" => w.l1.to_string(),
            "lambda_temp" => w.temporal.to_string(),
            "lambda_cdc" => w.cdc.to_string(),
            "lambda_frechet" => w.frechet.to_string(),
            "feature_levels" => self.feature_levels.to_string(),
            "n_components" => self.n_components.to_string(),
            "retrieval_size" => self.retrieval_size.to_string(),
            "min_side" => self.min_side.to_string(),
            "min_colorfulness" => self.min_colorfulness.to_string(),
            "occlusion_tol" => self.occlusion_tol.to_string(),
            "scene_cut_threshold" => match self.scene_cut_threshold {
                Some(v) => v.to_string(),
                None => "off".to_string(),
            },
            _ => return None,
        })
    }

    /// Every key with its current value, in a stable order.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.top_k < 1 {
            return bad("top_k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return bad(format!(
                "confidence_floor must be in [0,1], got {}",
                self.confidence_floor
            ));
        }
        if !(0.0..=1.0).contains(&self.blend_bias) {
            return bad(format!(
                "blend_bias must be in [0,1], got {}",
                self.blend_bias
            ));
        }
        if self.search_radius < 1 || self.flow_levels < 1 {
            return bad("search_radius and flow_levels must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.smooth_strength) {
            return bad(format!(
                "smooth_strength must be in [0,1], got {}",
                self.smooth_strength
            ));
        }
        if !(self.smooth_edge_threshold >= 0.0) {
            return bad("smooth_edge_threshold must be nonnegative".into());
        }
        if self.histogram_bins < 2 {
            return bad("histogram_bins must be at least 2".into());
        }
        if self.cdc_strides.is_empty() || self.cdc_strides.contains(&0) {
            return bad("cdc_strides must be a nonempty list of positive integers".into());
        }
        if self.perceptual_weights.iter().any(|w| !(*w > 0.0)) {
            return bad("perceptual_weights must be positive".into());
        }
        let w = &self.metric_weights;
        if [w.perceptual, w.l1, w.temporal, w.cdc, w.frechet]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return bad("lambda weights must be nonnegative".into());
        }
        if self.feature_levels < crate::features::MIN_LEVELS {
            return bad(format!(
                "feature_levels must be at least {}",
                crate::features::MIN_LEVELS
            ));
        }
        if self.n_components < 1 {
            return bad("n_components must be at least 1".into());
        }
        if self.retrieval_size < crate::features::MIN_IMAGE_SIDE {
            return bad(format!(
                "retrieval_size must be at least {}",
                crate::features::MIN_IMAGE_SIDE
            ));
        }
        if !(self.min_colorfulness >= 0.0) {
            return bad("min_colorfulness must be nonnegative".into());
        }
        if !(self.occlusion_tol >= 0.0) {
            return bad("occlusion_tol must be nonnegative".into());
        }
        if let Some(t) = self.scene_cut_threshold {
            if !(t >= 0.0) {
                return bad("scene_cut_threshold must be nonnegative".into());
            }
        }
        Ok(())
    }
}
