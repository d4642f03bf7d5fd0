//! Job configuration files.
//!
//! A job file is TOML with an `[archive]` section, a `[job]` section, one
//! `[detector.<id>]` table per detector and an optional `[scene]` that is
//! rendered into the archive root before the run. Unknown keys anywhere are
//! errors. Relative paths are taken from the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::archive::DEFAULT_PATTERN;
use crate::eventstore::Backend;
use crate::registry::DetectorConfig;
use crate::synthbench::SceneSpec;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

fn default_pattern() -> String {
    DEFAULT_PATTERN.to_string()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveSection {
    pub root: PathBuf,
    #[serde(default = "default_pattern")]
    pub pattern: String,
}

fn default_workers() -> usize {
    1
}
fn default_backend() -> String {
    "flat".into()
}
fn default_merge_dt() -> f64 {
    0.5
}
fn default_merge_df() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSection {
    pub job_id: String,
    /// Seconds.
    pub unit_len: f64,
    #[serde(default)]
    pub pad: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_backend")]
    pub backend: String,
    pub output: PathBuf,
    /// Detector ids to run, in order. Empty means every configured id.
    #[serde(default)]
    pub detectors: Vec<String>,
    #[serde(default = "default_merge_dt")]
    pub merge_dt: f64,
    #[serde(default = "default_merge_df")]
    pub merge_df: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub archive: ArchiveSection,
    pub job: JobSection,
    #[serde(default)]
    pub detector: BTreeMap<String, DetectorConfig>,
    #[serde(default)]
    pub scene: Option<SceneSpec>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn rooted(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl JobConfig {
    /// Parses config text; relative paths stay relative to `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: JobConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.archive.root = rooted(base_dir, &cfg.archive.root);
        cfg.job.output = rooted(base_dir, &cfg.job.output);
        if let Some(scene) = cfg.scene.as_mut() {
            scene.truth_path = scene.truth_path.as_deref().map(|p| rooted(base_dir, p));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        Self::parse(&text, base)
    }

    pub fn backend(&self) -> Result<Backend, ConfigError> {
        self.job.backend.parse().map_err(|e: crate::eventstore::StoreError| ConfigError::Invalid(e.to_string()))
    }

    /// Detector ids in run order.
    pub fn detector_ids(&self) -> Vec<String> {
        if self.job.detectors.is_empty() {
            self.detector.keys().cloned().collect()
        } else {
            self.job.detectors.clone()
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let j = &self.job;
        if j.job_id.is_empty() || j.job_id.chars().any(|c| c.is_control() || c == ':') {
            return bad(format!("job_id {:?} must be non-empty without ':' or control characters", j.job_id));
        }
        if !(j.unit_len.is_finite() && j.unit_len > 0.0) {
            return bad(format!("unit_len must be positive, got {}", j.unit_len));
        }
        if !(j.pad.is_finite() && j.pad >= 0.0 && j.pad < j.unit_len) {
            return bad(format!("pad must satisfy 0 <= pad < unit_len, got {}", j.pad));
        }
        if j.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(j.merge_dt >= 0.0 && j.merge_df >= 0.0) {
            return bad("merge_dt and merge_df must be non-negative".into());
        }
        self.backend()?;
        if let Some(scene) = &self.scene {
            scene.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[archive]
root = "archive"

[job]
job_id = "demo"
unit_len = 60.0
pad = 5.0
workers = 2
output = "out/events.tsv"

[detector.upcall]
kind = "type1"

[detector.minke]
kind = "type2"
context_pad = 3.0
[detector.minke.params]
band = [250.0, 350.0]

[scene]
duration = 120.0
rate = 2000
seed = 4
truth_path = "truth.tsv"
[[scene.signals]]
kind = "upsweep"
start = 10.0
duration = 1.0
f0 = 100.0
f1 = 200.0
snr_db = 12.0
"#;

    #[test]
    fn parses_and_roots_paths() {
        let cfg = JobConfig::parse(SAMPLE, Path::new("/jobs")).unwrap();
        assert_eq!(cfg.archive.root, Path::new("/jobs/archive"));
        assert_eq!(cfg.archive.pattern, DEFAULT_PATTERN);
        assert_eq!(cfg.job.output, Path::new("/jobs/out/events.tsv"));
        assert_eq!(cfg.backend().unwrap(), Backend::Flat);
        assert_eq!(cfg.detector_ids(), ["minke", "upcall"]);
        assert_eq!(cfg.detector["minke"].context_pad, 3.0);
        assert_eq!((cfg.job.merge_dt, cfg.job.merge_df), (0.5, 10.0));
        let scene = cfg.scene.unwrap();
        assert_eq!(scene.truth_path.unwrap(), Path::new("/jobs/truth.tsv"));
        assert_eq!(scene.signals.len(), 1);
    }

    #[test]
    fn unknown_keys_are_errors() {
        for (from, to) in [
            ("workers = 2", "workers = 2\nthreads = 4"),
            ("[archive]", "[archive]\nrecursive = true"),
            ("kind = \"type1\"", "kind = \"type1\"\nthreshold = 3"),
            ("rate = 2000", "rate = 2000\ngain = 1"),
            ("[job]", "[jobs]\nx = 1\n[job]"),
        ] {
            let text = SAMPLE.replacen(from, to, 1);
            assert!(JobConfig::parse(&text, Path::new(".")).is_err(), "accepted: {to}");
        }
    }

    #[test]
    fn invalid_values_are_errors() {
        for (from, to) in [
            ("pad = 5.0", "pad = 60.0"),
            ("workers = 2", "workers = 0"),
            ("unit_len = 60.0", "unit_len = -1.0"),
            ("output =", "backend = \"sql\"\noutput ="),
            ("job_id = \"demo\"", "job_id = \"a:b\""),
            ("start = 10.0", "start = 119.5"),
        ] {
            let text = SAMPLE.replacen(from, to, 1);
            assert!(JobConfig::parse(&text, Path::new(".")).is_err(), "accepted: {to}");
        }
    }
}
