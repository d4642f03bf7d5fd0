//! Detection-event persistence through four interchangeable backends.
//!
//! * `flat` – tab-delimited text, one row per event.
//! * `array` – whole-store binary image, loaded fully and scanned.
//! * `xml` – one `<event>` element per record.
//! * `indexed` – single file of begin-time sorted pages with a sparse page
//!   directory and a score index, queried without loading the whole store.
//!
//! All backends store the same canonical content: times at millisecond
//! resolution and `f_lo`, `f_hi`, `score` on a 1e-6 grid, so a record read
//! back from any backend compares equal to what was written.

mod array;
mod bench;
mod flat;
mod indexed;
mod xml;

use std::cmp::Ordering;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::time::UtcMillis;

pub use array::{decode_records, encode_records};
pub use bench::{
    dummy_events, query_suite, store_benchmark, BackendTiming, BenchError, BenchReport, EXPECTED_ORDER, MIN_BENCH_EVENTS,
};
pub use indexed::PAGE_RECORDS;

/// Row count above which flat stores become impractical to load.
pub const FLAT_ROW_ADVISORY: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub event_id: String,
    pub run_id: String,
    pub channel_id: String,
    pub begin: UtcMillis,
    pub end: UtcMillis,
    pub f_lo: f64,
    pub f_hi: f64,
    pub score: f64,
    pub detector_id: String,
    pub tag: String,
}

/// Rounds to the 1e-6 grid used by every text encoding.
pub fn quantize6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

impl EventRecord {
    /// Canonical form: float fields snapped to the 1e-6 grid.
    pub fn canonical(mut self) -> Self {
        self.f_lo = quantize6(self.f_lo);
        self.f_hi = quantize6(self.f_hi);
        self.score = quantize6(self.score);
        self
    }

    pub fn duration_secs(&self) -> f64 {
        (self.end.0 - self.begin.0) as f64 / 1000.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.begin >= self.end {
            return Err(format!("begin {} not before end {}", self.begin, self.end));
        }
        if !(self.f_lo.is_finite() && self.f_hi.is_finite()) || self.f_lo >= self.f_hi {
            return Err(format!("f_lo {} not below f_hi {}", self.f_lo, self.f_hi));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        for (name, s) in [
            ("event_id", &self.event_id),
            ("run_id", &self.run_id),
            ("channel", &self.channel_id),
            ("detector", &self.detector_id),
            ("tag", &self.tag),
        ] {
            if s.chars().any(char::is_control) {
                return Err(format!("{name} contains a control character"));
            }
        }
        Ok(())
    }

    /// Total order used for every sorted event list: begin time, channel,
    /// detector, then the remaining fields.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.begin
            .cmp(&other.begin)
            .then_with(|| self.channel_id.cmp(&other.channel_id))
            .then_with(|| self.detector_id.cmp(&other.detector_id))
            .then_with(|| self.end.cmp(&other.end))
            .then_with(|| self.f_lo.total_cmp(&other.f_lo))
            .then_with(|| self.f_hi.total_cmp(&other.f_hi))
            .then_with(|| other.score.total_cmp(&self.score))
            .then_with(|| self.tag.cmp(&other.tag))
            .then_with(|| self.run_id.cmp(&other.run_id))
            .then_with(|| self.event_id.cmp(&other.event_id))
    }
}

pub fn sort_canonical(events: &mut [EventRecord]) {
    events.sort_by(EventRecord::canonical_cmp);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Backend {
    Flat,
    Array,
    Xml,
    Indexed,
}

impl Backend {
    pub const ALL: [Backend; 4] = [Backend::Flat, Backend::Array, Backend::Xml, Backend::Indexed];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Flat => "flat",
            Backend::Array => "array",
            Backend::Xml => "xml",
            Backend::Indexed => "indexed",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Backend::Flat => "tsv",
            Backend::Array => "bin",
            Backend::Xml => "xml",
            Backend::Indexed => "idx",
        }
    }

    /// Guesses the backend from a store path's extension.
    pub fn from_path(path: &Path) -> Option<Backend> {
        let ext = path.extension()?.to_str()?;
        Backend::ALL.into_iter().find(|b| b.extension() == ext)
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| StoreError::UnknownBackend(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid event at row {row}: {reason}")]
    Validation { row: usize, reason: String },
    #[error("corrupt {backend} store: {detail}")]
    Format { backend: Backend, detail: String },
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("flat store row limit exceeded: {rows} rows > {limit}")]
    RowLimit { rows: usize, limit: usize },
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(backend: Backend, detail: impl Into<String>) -> Self {
        StoreError::Format {
            backend,
            detail: detail.into(),
        }
    }
}

/// What to do when a flat store exceeds [`FLAT_ROW_ADVISORY`] rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowLimitPolicy {
    Ignore,
    #[default]
    Warn,
    Fail,
}

#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    pub flat_row_policy: RowLimitPolicy,
    pub flat_row_limit: usize,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            flat_row_policy: RowLimitPolicy::Warn,
            flat_row_limit: FLAT_ROW_ADVISORY,
        }
    }
}

/// Conjunctive event filter; `None` fields match everything.
///
/// The time range selects events whose begin time lies in `[from, to)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Query {
    pub time_range: Option<(UtcMillis, UtcMillis)>,
    pub min_score: Option<f64>,
    pub tag: Option<String>,
    pub detector: Option<String>,
}

impl Query {
    pub fn matches(&self, e: &EventRecord) -> bool {
        if let Some((from, to)) = self.time_range {
            if e.begin < from || e.begin >= to {
                return false;
            }
        }
        if let Some(min) = self.min_score {
            if e.score < min {
                return false;
            }
        }
        if let Some(tag) = &self.tag {
            if &e.tag != tag {
                return false;
            }
        }
        if let Some(det) = &self.detector {
            if &e.detector_id != det {
                return false;
            }
        }
        true
    }
}

/// Record-level instrumentation for a single query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryStats {
    /// Records decoded from storage.
    pub records_read: usize,
    /// Index entries read while locating the records.
    pub index_probes: usize,
}

fn validated(events: &[EventRecord]) -> Result<Vec<EventRecord>, StoreError> {
    events
        .iter()
        .enumerate()
        .map(|(row, e)| {
            let e = e.clone().canonical();
            e.validate()
                .map_err(|reason| StoreError::Validation { row, reason })?;
            Ok(e)
        })
        .collect()
}

pub fn store_write(backend: Backend, path: &Path, events: &[EventRecord]) -> Result<usize, StoreError> {
    store_write_with(backend, path, events, &WriteOptions::default())
}

pub fn store_write_with(
    backend: Backend,
    path: &Path,
    events: &[EventRecord],
    opts: &WriteOptions,
) -> Result<usize, StoreError> {
    if backend == Backend::Flat && events.len() > opts.flat_row_limit {
        match opts.flat_row_policy {
            RowLimitPolicy::Ignore => {}
            RowLimitPolicy::Warn => log::warn!(
                "flat store {} holds {} rows; files this large are often impractical to load",
                path.display(),
                events.len()
            ),
            RowLimitPolicy::Fail => {
                return Err(StoreError::RowLimit {
                    rows: events.len(),
                    limit: opts.flat_row_limit,
                })
            }
        }
    }
    let events = validated(events)?;
    match backend {
        Backend::Flat => flat::write(path, &events)?,
        Backend::Array => array::write(path, &events)?,
        Backend::Xml => xml::write(path, &events)?,
        Backend::Indexed => indexed::write(path, &events)?,
    }
    Ok(events.len())
}

/// Loads every event in storage order.
pub fn store_load(backend: Backend, path: &Path) -> Result<Vec<EventRecord>, StoreError> {
    match backend {
        Backend::Flat => flat::read(path),
        Backend::Array => array::read(path),
        Backend::Xml => xml::read(path),
        Backend::Indexed => indexed::read_all(path),
    }
}

pub fn store_query(backend: Backend, path: &Path, query: &Query) -> Result<Vec<EventRecord>, StoreError> {
    store_query_with_stats(backend, path, query).map(|(events, _)| events)
}

/// Runs a query and reports how many records and index entries it touched.
pub fn store_query_with_stats(
    backend: Backend,
    path: &Path,
    query: &Query,
) -> Result<(Vec<EventRecord>, QueryStats), StoreError> {
    let (mut hits, stats) = match backend {
        Backend::Indexed => indexed::query(path, query)?,
        _ => {
            let all = store_load(backend, path)?;
            let stats = QueryStats {
                records_read: all.len(),
                index_probes: 0,
            };
            (all.into_iter().filter(|e| query.matches(e)).collect(), stats)
        }
    };
    sort_canonical(&mut hits);
    Ok((hits, stats))
}
