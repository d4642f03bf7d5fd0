//! Detector ids bound to configured spectrogram pipelines.
//!
//! A registry is built once from the `[detector.<id>]` blocks of a job
//! config and is immutable afterwards. Every pipeline starts from the same
//! STFT front end and hands the spectrogram to exactly one recognizer chain.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::s;
use serde::Deserialize;

use crate::archive::SampleBlock;
use crate::classify::{ClassifyError, MlpModel};
use crate::dsp::{DspError, Spectrogram, StftParams, StftPlan};
use crate::eventstore::EventRecord;
use crate::pulsetrain::{type2_detect, Type2Params};
use crate::recognizers::{hog_features, resample, template_correlate, RecognizerError, Template, TemplateParams};
use crate::segmentation::{connected_regions, foreground, type1_detect, Connectivity, Detection, Region, Type1Params};
use crate::time::UtcMillis;

/// Kinds that name detectors without an implementation in this engine.
pub const RESERVED_KINDS: [&str; 2] = ["israt", "elephant"];
pub const KINDS: [&str; 4] = ["type1", "type2", "template", "hog_ann"];

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("unknown detector `{0}`")]
    UnknownDetector(String),
    #[error("detector `{id}`: {detail}")]
    InvalidConfig { id: String, detail: String },
    #[error("detector `{id}`: kind `{kind}` is reserved but not implemented")]
    Unimplemented { id: String, kind: String },
    #[error("detector `{id}`: {source}")]
    Template {
        id: String,
        #[source]
        source: RecognizerError,
    },
    #[error("detector `{id}`: {source}")]
    Model {
        id: String,
        #[source]
        source: ClassifyError,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Recognizer(#[from] RecognizerError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

/// One `[detector.<id>]` block as written in the job config.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: String,
    /// Seconds of signal the detector needs on each side of a unit.
    #[serde(default)]
    pub context_pad: f64,
    #[serde(default)]
    pub stft: StftParams,
    /// Tag written on every event; defaults to the kind.
    #[serde(default)]
    pub tag: Option<String>,
    #[serde(default)]
    pub params: toml::Table,
}

impl DetectorConfig {
    pub fn new(kind: &str) -> Self {
        DetectorConfig {
            kind: kind.to_string(),
            context_pad: 0.0,
            stft: StftParams::default(),
            tag: None,
            params: toml::Table::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<toml::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

fn default_hog_percentile() -> f64 {
    90.0
}
fn default_hog_floor() -> f64 {
    10.0
}
fn default_min_pixels() -> usize {
    8
}
fn default_patch() -> usize {
    32
}
fn default_cell() -> usize {
    8
}
fn default_orient_bins() -> usize {
    9
}
fn default_hog_threshold() -> f64 {
    0.5
}

/// Region proposals scored by an MLP over HOG features of the region patch.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HogAnnParams {
    pub model: PathBuf,
    #[serde(default = "default_hog_percentile")]
    pub percentile: f64,
    #[serde(default = "default_hog_floor")]
    pub floor_db: f64,
    #[serde(default)]
    pub connectivity: Connectivity,
    /// Regions with fewer pixels are not scored.
    #[serde(default = "default_min_pixels")]
    pub min_pixels: usize,
    /// Side of the square patch each region is resampled to.
    #[serde(default = "default_patch")]
    pub patch: usize,
    #[serde(default = "default_cell")]
    pub cell_size: usize,
    #[serde(default = "default_orient_bins")]
    pub n_bins: usize,
    #[serde(default = "default_hog_threshold")]
    pub threshold: f64,
}

impl HogAnnParams {
    pub fn n_features(&self) -> usize {
        (self.patch / self.cell_size).pow(2) * self.n_bins
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.percentile > 0.0 && self.percentile < 100.0) || !(self.floor_db >= 0.0) {
            return Err("percentile must be in (0, 100) and floor_db non-negative".into());
        }
        if self.cell_size == 0 || self.n_bins == 0 || self.patch < 3 || !self.patch.is_multiple_of(self.cell_size) {
            return Err(format!("patch {} must be a multiple of cell_size {}", self.patch, self.cell_size));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(format!("threshold must be in [0, 1], got {}", self.threshold));
        }
        Ok(())
    }
}

/// HOG descriptor of one region: the region's magnitude patch scaled to a
/// unit peak and resampled to `patch × patch`.
pub fn hog_region_features(spec: &Spectrogram, region: &Region, params: &HogAnnParams) -> Result<Vec<f64>, RecognizerError> {
    let raw = spec
        .data
        .slice(s![region.frames.0..=region.frames.1, region.bins.0..=region.bins.1]);
    let peak = raw.iter().copied().fold(0.0, f64::max);
    let scaled = if peak > 0.0 { raw.mapv(|v| v / peak) } else { raw.to_owned() };
    let patch = resample(scaled.view(), params.patch, params.patch);
    Ok(hog_features(patch.view(), params.cell_size, params.n_bins)?.vector)
}

pub enum Recognizer {
    Type1(Type1Params),
    Type2(Type2Params),
    Template { params: TemplateParams, template: Template },
    HogAnn { params: HogAnnParams, model: MlpModel },
}

impl Recognizer {
    pub fn kind(&self) -> &'static str {
        match self {
            Recognizer::Type1(_) => "type1",
            Recognizer::Type2(_) => "type2",
            Recognizer::Template { .. } => "template",
            Recognizer::HogAnn { .. } => "hog_ann",
        }
    }
}

/// A resolved detector: STFT front end plus one recognizer. Holds no
/// mutable state, so one instance serves every worker.
pub struct Pipeline {
    pub id: String,
    pub tag: String,
    pub context_pad: f64,
    pub stft_params: StftParams,
    plan: StftPlan,
    pub recognizer: Recognizer,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("id", &self.id)
            .field("kind", &self.recognizer.kind())
            .field("stft", &self.stft_params)
            .finish()
    }
}

impl Pipeline {
    pub fn spectrogram(&self, block: &SampleBlock) -> Result<Spectrogram, DspError> {
        self.plan.run(block)
    }

    /// Detections in epoch seconds. A block shorter than one STFT window
    /// has nothing to detect.
    pub fn detect(&self, block: &SampleBlock) -> Result<Vec<Detection>, PipelineError> {
        let spec = match self.plan.run(block) {
            Ok(spec) => spec,
            Err(DspError::EmptySpectrogram { .. }) => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        self.detect_spectrogram(&spec)
    }

    pub fn detect_spectrogram(&self, spec: &Spectrogram) -> Result<Vec<Detection>, PipelineError> {
        Ok(match &self.recognizer {
            Recognizer::Type1(p) => type1_detect(spec, p)?,
            Recognizer::Type2(p) => type2_detect(spec, p)?.0,
            Recognizer::Template { params, template } => {
                template_correlate(spec, template, params.threshold, params.band_slack)?
            }
            Recognizer::HogAnn { params, model } => {
                let mask = foreground(spec, params.percentile, params.floor_db)?;
                let mut out = Vec::new();
                for region in connected_regions(&mask, params.connectivity) {
                    if region.n_pixels() < params.min_pixels {
                        continue;
                    }
                    let x = ndarray::Array1::from(hog_region_features(spec, &region, params)?);
                    let score = crate::classify::mlp_predict(model, x.view())?;
                    if score >= params.threshold {
                        out.push(Detection {
                            bbox: region.bbox(spec),
                            score,
                        });
                    }
                }
                out
            }
        })
    }

    /// Lifts a detection into a storable record. Scores are clipped to
    /// [0, 1] and a box is at least one millisecond long.
    pub fn to_record(&self, det: &Detection, channel: &str, run_id: &str, event_id: String) -> EventRecord {
        let begin = UtcMillis::from_epoch_secs(det.bbox.t_start);
        let end = UtcMillis::from_epoch_secs(det.bbox.t_end).max(begin.add_millis(1));
        let f_lo = det.bbox.f_lo.max(0.0);
        let f_hi = if det.bbox.f_hi > f_lo { det.bbox.f_hi } else { f_lo + 1e-6 };
        EventRecord {
            event_id,
            run_id: run_id.to_string(),
            channel_id: channel.to_string(),
            begin,
            end,
            f_lo,
            f_hi,
            score: det.score.clamp(0.0, 1.0),
            detector_id: self.id.clone(),
            tag: self.tag.clone(),
        }
        .canonical()
    }
}

fn typed<T: for<'de> Deserialize<'de>>(id: &str, params: &toml::Table) -> Result<T, RegistryError> {
    toml::Value::Table(params.clone())
        .try_into()
        .map_err(|e: toml::de::Error| RegistryError::InvalidConfig {
            id: id.to_string(),
            detail: e.message().to_string(),
        })
}

fn rooted(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Builds the pipeline for one config block, loading any template or model
/// it names. Relative paths are taken from `base_dir`.
pub fn resolve_config(id: &str, cfg: &DetectorConfig, base_dir: &Path) -> Result<Pipeline, RegistryError> {
    let invalid = |detail: String| RegistryError::InvalidConfig {
        id: id.to_string(),
        detail,
    };
    if RESERVED_KINDS.contains(&cfg.kind.as_str()) {
        return Err(RegistryError::Unimplemented {
            id: id.to_string(),
            kind: cfg.kind.clone(),
        });
    }
    if !(cfg.context_pad.is_finite() && cfg.context_pad >= 0.0) {
        return Err(invalid(format!("context_pad must be non-negative, got {}", cfg.context_pad)));
    }
    let recognizer = match cfg.kind.as_str() {
        "type1" => {
            let p: Type1Params = typed(id, &cfg.params)?;
            p.validate().map_err(invalid)?;
            Recognizer::Type1(p)
        }
        "type2" => {
            let p: Type2Params = typed(id, &cfg.params)?;
            p.validate().map_err(invalid)?;
            Recognizer::Type2(p)
        }
        "template" => {
            let mut p: TemplateParams = typed(id, &cfg.params)?;
            if !(-1.0..=1.0).contains(&p.threshold) {
                return Err(invalid(format!("threshold must be in [-1, 1], got {}", p.threshold)));
            }
            p.template_dir = rooted(base_dir, &p.template_dir);
            let template = Template::load(&p.template_dir, &p.template).map_err(|source| RegistryError::Template {
                id: id.to_string(),
                source,
            })?;
            Recognizer::Template { params: p, template }
        }
        "hog_ann" => {
            if !cfg.params.contains_key("model") {
                return Err(invalid("hog_ann requires a `model` path".into()));
            }
            let mut p: HogAnnParams = typed(id, &cfg.params)?;
            p.validate().map_err(invalid)?;
            p.model = rooted(base_dir, &p.model);
            let model = MlpModel::load(&p.model).map_err(|source| RegistryError::Model {
                id: id.to_string(),
                source,
            })?;
            if model.n_inputs() != p.n_features() {
                return Err(invalid(format!(
                    "model takes {} inputs but the HOG descriptor has {}",
                    model.n_inputs(),
                    p.n_features()
                )));
            }
            Recognizer::HogAnn { params: p, model }
        }
        other => {
            return Err(invalid(format!("unknown kind `{other}` (expected one of {})", KINDS.join(", "))));
        }
    };
    let plan = StftPlan::new(cfg.stft).map_err(|e| invalid(e.to_string()))?;
    Ok(Pipeline {
        id: id.to_string(),
        tag: cfg.tag.clone().unwrap_or_else(|| cfg.kind.clone()),
        context_pad: cfg.context_pad,
        stft_params: cfg.stft,
        plan,
        recognizer,
    })
}

/// Immutable id → pipeline table.
#[derive(Debug, Default)]
pub struct Registry {
    pipelines: BTreeMap<String, Pipeline>,
}

impl Registry {
    /// Resolves every block up front so a bad block fails before any work
    /// is scheduled.
    pub fn from_configs(configs: &BTreeMap<String, DetectorConfig>, base_dir: &Path) -> Result<Self, RegistryError> {
        let pipelines = configs
            .iter()
            .map(|(id, cfg)| Ok((id.clone(), resolve_config(id, cfg, base_dir)?)))
            .collect::<Result<_, RegistryError>>()?;
        Ok(Registry { pipelines })
    }

    pub fn resolve(&self, id: &str) -> Result<&Pipeline, RegistryError> {
        self.pipelines
            .get(id)
            .ok_or_else(|| RegistryError::UnknownDetector(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pipelines.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.pipelines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pipelines.is_empty()
    }
}
