//! Sound-archive inventory, work-unit partitioning and sample delivery.
//!
//! Files follow `<channel>_<YYYYMMDD>_<HHMMSS>.wav` (UTC start time) and hold
//! mono 16- or 24-bit PCM. A channel's timeline starts at its earliest file
//! (the channel epoch); work-unit spans are seconds relative to that epoch.
//! Files that abut within half a sample form one contiguous segment; units
//! never straddle a gap between segments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use regex::Regex;

use crate::time::UtcMillis;

pub const MANIFEST_HEADER: &str = "#adamine-manifest v1";
pub const DEFAULT_PATTERN: &str = "<channel>_<YYYYMMDD>_<HHMMSS>.wav";

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("cannot read archive root {path}: {source}")]
    UnreadableRoot {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gap of {gap_secs:.3} s in channel {channel} at {at}")]
    GapInData {
        channel: String,
        at: UtcMillis,
        gap_secs: f64,
    },
    #[error("cannot decode {path}: {detail}")]
    Decode { path: PathBuf, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {detail}")]
    ManifestFormat { line: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub channel_id: String,
    pub start_utc: DateTime<Utc>,
    pub sample_rate: u32,
    pub n_samples: u64,
    pub bit_depth: u16,
}

impl ManifestEntry {
    pub fn duration_secs(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate as f64
    }

    fn start_epoch_secs(&self) -> f64 {
        self.start_utc.timestamp_millis() as f64 / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArchiveManifest {
    pub entries: Vec<ManifestEntry>,
    pub skipped: Vec<SkippedFile>,
}

/// Filename convention with `<channel>`, `<YYYYMMDD>` and `<HHMMSS>` fields.
#[derive(Debug, Clone)]
pub struct NamePattern {
    template: String,
    regex: Regex,
}

impl NamePattern {
    pub fn new(template: &str) -> Result<Self, ArchiveError> {
        let mut re = String::from("^");
        let mut rest = template;
        let mut seen = [false; 3];
        while let Some(open) = rest.find('<') {
            re.push_str(&regex::escape(&rest[..open]));
            let close = rest[open..]
                .find('>')
                .ok_or_else(|| ArchiveError::InvalidArgument(format!("unterminated field in `{template}`")))?
                + open;
            let (slot, group) = match &rest[open + 1..close] {
                "channel" => (0, r"(?P<channel>[A-Za-z0-9-]+)"),
                "YYYYMMDD" => (1, r"(?P<date>\d{8})"),
                "HHMMSS" => (2, r"(?P<time>\d{6})"),
                other => {
                    return Err(ArchiveError::InvalidArgument(format!(
                        "unknown field <{other}> in pattern `{template}`"
                    )))
                }
            };
            if seen[slot] {
                return Err(ArchiveError::InvalidArgument(format!("repeated field in `{template}`")));
            }
            seen[slot] = true;
            re.push_str(group);
            rest = &rest[close + 1..];
        }
        re.push_str(&regex::escape(rest));
        re.push('$');
        if seen != [true; 3] {
            return Err(ArchiveError::InvalidArgument(format!(
                "pattern `{template}` must contain <channel>, <YYYYMMDD> and <HHMMSS>"
            )));
        }
        Ok(NamePattern {
            template: template.to_string(),
            regex: Regex::new(&re).expect("pattern regex is built from escaped text"),
        })
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    /// Channel id and UTC start time encoded in a file name.
    pub fn parse_name(&self, name: &str) -> Result<(String, DateTime<Utc>), String> {
        let caps = self
            .regex
            .captures(name)
            .ok_or_else(|| "name does not match pattern".to_string())?;
        let date = NaiveDate::parse_from_str(&caps["date"], "%Y%m%d")
            .map_err(|_| format!("malformed date `{}`", &caps["date"]))?;
        let time = NaiveTime::parse_from_str(&caps["time"], "%H%M%S")
            .map_err(|_| format!("malformed time `{}`", &caps["time"]))?;
        Ok((caps["channel"].to_string(), date.and_time(time).and_utc()))
    }

    /// File name for a channel starting at `start`.
    pub fn format_name(&self, channel: &str, start: DateTime<Utc>) -> String {
        self.template
            .replace("<channel>", channel)
            .replace("<YYYYMMDD>", &start.format("%Y%m%d").to_string())
            .replace("<HHMMSS>", &start.format("%H%M%S").to_string())
    }
}

impl Default for NamePattern {
    fn default() -> Self {
        NamePattern::new(DEFAULT_PATTERN).unwrap()
    }
}

fn probe_wav(path: &Path) -> Result<(u32, u64, u16), String> {
    let reader = hound::WavReader::open(path).map_err(|e| format!("corrupt header: {e}"))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(format!("unsupported channel count {}", spec.channels));
    }
    if spec.sample_format != hound::SampleFormat::Int || !matches!(spec.bits_per_sample, 16 | 24) {
        return Err(format!(
            "unsupported sample format {:?}/{} bit",
            spec.sample_format, spec.bits_per_sample
        ));
    }
    if spec.sample_rate == 0 {
        return Err("zero sample rate".into());
    }
    let n = reader.len() as u64;
    if n == 0 {
        return Err("no samples".into());
    }
    Ok((spec.sample_rate, n, spec.bits_per_sample))
}

/// Walks `root` recursively and inventories every matching WAV file.
///
/// Files that do not match the pattern or whose header cannot be used are
/// listed in `skipped`; only an unreadable root is fatal.
pub fn scan_archive(root: &Path, pattern: &NamePattern) -> Result<ArchiveManifest, ArchiveError> {
    std::fs::read_dir(root).map_err(|source| ArchiveError::UnreadableRoot {
        path: root.to_path_buf(),
        source,
    })?;
    let mut manifest = ArchiveManifest::default();
    let mut found = Vec::new();
    for item in walkdir::WalkDir::new(root).sort_by_file_name() {
        let item = match item {
            Ok(i) => i,
            Err(e) => {
                let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
                if path == root {
                    return Err(ArchiveError::UnreadableRoot {
                        path,
                        source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk failed")),
                    });
                }
                manifest.skipped.push(SkippedFile {
                    path,
                    reason: format!("unreadable: {e}"),
                });
                continue;
            }
        };
        if !item.file_type().is_file() {
            continue;
        }
        let path = item.path().to_path_buf();
        let name = item.file_name().to_string_lossy();
        let parsed = pattern
            .parse_name(&name)
            .and_then(|(ch, start)| probe_wav(&path).map(|(rate, n, bits)| (ch, start, rate, n, bits)));
        match parsed {
            Ok((channel_id, start_utc, sample_rate, n_samples, bit_depth)) => found.push(ManifestEntry {
                path,
                channel_id,
                start_utc,
                sample_rate,
                n_samples,
                bit_depth,
            }),
            Err(reason) => manifest.skipped.push(SkippedFile { path, reason }),
        }
    }
    found.sort_by(|a, b| {
        (&a.channel_id, a.start_utc, &a.path).cmp(&(&b.channel_id, b.start_utc, &b.path))
    });
    for e in found {
        if let Some(prev) = manifest.entries.last().filter(|p| p.channel_id == e.channel_id) {
            let prev_end = prev.start_epoch_secs() + prev.duration_secs();
            let tol = 0.5 / prev.sample_rate as f64;
            if e.start_epoch_secs() < prev_end - tol {
                manifest.skipped.push(SkippedFile {
                    reason: format!("overlaps {}", prev.path.display()),
                    path: e.path,
                });
                continue;
            }
        }
        manifest.entries.push(e);
    }
    manifest.skipped.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(manifest)
}

impl ArchiveManifest {
    pub fn channels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            if out.last() != Some(&e.channel_id.as_str()) {
                out.push(&e.channel_id);
            }
        }
        out
    }

    /// Earliest start time of a channel, in epoch seconds.
    pub fn channel_epoch(&self, channel: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.channel_id == channel)
            .map(ManifestEntry::start_epoch_secs)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        for k in &self.skipped {
            let _ = writeln!(s, "#skipped\t{}\t{}", k.path.display(), k.reason);
        }
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.channel_id,
                e.path.display(),
                UtcMillis::from_datetime(e.start_utc).to_iso(),
                e.sample_rate,
                e.n_samples,
                e.bit_depth
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, ArchiveError> {
        let bad = |line: usize, detail: String| ArchiveError::ManifestFormat { line, detail };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.starts_with(MANIFEST_HEADER) => {}
            _ => return Err(bad(1, "missing manifest header".into())),
        }
        let mut m = ArchiveManifest::default();
        for (i, line) in lines {
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix("#skipped\t") {
                let (path, reason) = rest.split_once('\t').unwrap_or((rest, ""));
                m.skipped.push(SkippedFile {
                    path: path.into(),
                    reason: reason.into(),
                });
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(lineno, format!("expected 6 fields, found {}", f.len())));
            }
            let start = UtcMillis::parse_iso(f[2]).map_err(|e| bad(lineno, e.to_string()))?;
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad(lineno, format!("bad number `{s}`")));
            let entry = ManifestEntry {
                channel_id: f[0].to_string(),
                path: f[1].into(),
                start_utc: start.to_datetime(),
                sample_rate: num(f[3])? as u32,
                n_samples: num(f[4])?,
                bit_depth: num(f[5])? as u16,
            };
            if entry.sample_rate == 0 || entry.n_samples == 0 {
                return Err(bad(lineno, "sample rate and length must be positive".into()));
            }
            m.entries.push(entry);
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), ArchiveError> {
        std::fs::write(path, self.to_text()).map_err(|source| ArchiveError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ArchiveError> {
        let text = std::fs::read_to_string(path).map_err(|source| ArchiveError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }
}

/// A channel's contiguous run of files.
#[derive(Debug, Clone)]
struct Segment {
    entries: Vec<usize>,
    /// Seconds relative to the channel epoch.
    start: f64,
    end: f64,
    rate: u32,
}

fn contiguous(prev: &ManifestEntry, next: &ManifestEntry) -> bool {
    let gap = next.start_epoch_secs() - (prev.start_epoch_secs() + prev.duration_secs());
    prev.sample_rate == next.sample_rate && gap.abs() < 0.5 / prev.sample_rate as f64
}

fn channel_segments(manifest: &ArchiveManifest) -> BTreeMap<&str, (f64, Vec<Segment>)> {
    let mut out: BTreeMap<&str, (f64, Vec<Segment>)> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let (epoch, segs) = out
            .entry(e.channel_id.as_str())
            .or_insert_with(|| (e.start_epoch_secs(), Vec::new()));
        let start = e.start_epoch_secs() - *epoch;
        match segs.last_mut() {
            Some(s) if contiguous(&manifest.entries[*s.entries.last().unwrap()], e) => {
                s.entries.push(i);
                s.end += e.duration_secs();
            }
            _ => segs.push(Segment {
                entries: vec![i],
                start,
                end: start + e.duration_secs(),
                rate: e.sample_rate,
            }),
        }
    }
    out
}

/// One channel's time slice plus context pads: the unit of distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkUnit {
    pub channel_id: String,
    /// `[t0, t1)` seconds relative to the channel epoch.
    pub core_span: (f64, f64),
    pub pad_before: f64,
    pub pad_after: f64,
    pub source_entries: Vec<usize>,
}

impl WorkUnit {
    pub fn core_len(&self) -> f64 {
        self.core_span.1 - self.core_span.0
    }

    /// Padded span relative to the channel epoch.
    pub fn padded_span(&self) -> (f64, f64) {
        (self.core_span.0 - self.pad_before, self.core_span.1 + self.pad_after)
    }

    pub fn to_line(&self) -> String {
        let src: Vec<String> = self.source_entries.iter().map(usize::to_string).collect();
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.channel_id,
            self.core_span.0,
            self.core_span.1,
            self.pad_before,
            self.pad_after,
            src.join(",")
        )
    }
}

/// Splits every channel timeline into units of `unit_len` seconds.
///
/// The final unit of each contiguous segment is shortened to fit. Pads are
/// clamped to the segment so a unit never reads across a recording gap.
pub fn partition(manifest: &ArchiveManifest, unit_len: f64, pad: f64) -> Result<Vec<WorkUnit>, ArchiveError> {
    if !(unit_len.is_finite() && unit_len > 0.0) {
        return Err(ArchiveError::InvalidArgument(format!("unit_len must be positive, got {unit_len}")));
    }
    if !(pad.is_finite() && pad >= 0.0 && pad < unit_len) {
        return Err(ArchiveError::InvalidArgument(format!(
            "pad must satisfy 0 <= pad < unit_len, got {pad}"
        )));
    }
    let mut units = Vec::new();
    for (channel, (_, segs)) in channel_segments(manifest) {
        for seg in segs {
            // boundaries that land within a microsample of the segment end
            // are treated as the end
            let eps = 1e-6 / seg.rate as f64;
            let mut k = 0u64;
            loop {
                let t0 = seg.start + k as f64 * unit_len;
                if t0 >= seg.end - eps {
                    break;
                }
                let mut t1 = seg.start + (k + 1) as f64 * unit_len;
                if t1 > seg.end - eps {
                    t1 = seg.end;
                }
                let pad_before = pad.min(t0 - seg.start);
                let pad_after = pad.min(seg.end - t1);
                let (lo, hi) = (t0 - pad_before, t1 + pad_after);
                let mut entry_start = seg.start;
                let mut source_entries = Vec::new();
                for &i in &seg.entries {
                    let entry_end = entry_start + manifest.entries[i].duration_secs();
                    if entry_end > lo && entry_start < hi {
                        source_entries.push(i);
                    }
                    entry_start = entry_end;
                }
                units.push(WorkUnit {
                    channel_id: channel.to_string(),
                    core_span: (t0, t1),
                    pad_before,
                    pad_after,
                    source_entries,
                });
                k += 1;
            }
        }
    }
    Ok(units)
}

/// Normalized mono samples for one channel and time span.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    pub channel_id: String,
    /// Time of the first sample, epoch seconds (UTC).
    pub start_utc: f64,
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl SampleBlock {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn decode_range(entry: &ManifestEntry, offset: u64, count: u64, out: &mut Vec<f64>) -> Result<(), ArchiveError> {
    let fail = |detail: String| ArchiveError::Decode {
        path: entry.path.clone(),
        detail,
    };
    let mut reader = hound::WavReader::open(&entry.path).map_err(|e| fail(e.to_string()))?;
    let bits = reader.spec().bits_per_sample;
    if bits != entry.bit_depth {
        return Err(fail(format!("bit depth {bits} differs from manifest {}", entry.bit_depth)));
    }
    reader.seek(offset as u32).map_err(|e| fail(e.to_string()))?;
    let scale = 1.0 / (1u64 << (bits - 1)) as f64;
    let before = out.len();
    for s in reader.samples::<i32>().take(count as usize) {
        out.push(s.map_err(|e| fail(e.to_string()))? as f64 * scale);
    }
    if (out.len() - before) as u64 != count {
        return Err(fail(format!(
            "truncated payload: wanted {count} samples from offset {offset}, got {}",
            out.len() - before
        )));
    }
    Ok(())
}

/// Reads `n` samples starting at sample `first` of the run of files
/// `entries`, counted from the start of `entries[0]`.
fn read_run(
    manifest: &ArchiveManifest,
    entries: &[usize],
    first: u64,
    n: u64,
) -> Result<Vec<f64>, ArchiveError> {
    let mut out = Vec::with_capacity(n as usize);
    let mut file_start = 0u64;
    let end = first + n;
    for &i in entries {
        let e = &manifest.entries[i];
        let file_end = file_start + e.n_samples;
        let lo = first.max(file_start);
        let hi = end.min(file_end);
        if lo < hi {
            decode_range(e, lo - file_start, hi - lo, &mut out)?;
        }
        file_start = file_end;
    }
    if out.len() as u64 != n {
        return Err(ArchiveError::InvalidArgument(format!(
            "requested samples [{first}, {end}) exceed the recorded data"
        )));
    }
    Ok(out)
}

/// Delivers the padded samples of a work unit.
pub fn read_samples(unit: &WorkUnit, manifest: &ArchiveManifest) -> Result<SampleBlock, ArchiveError> {
    let entries: Vec<&ManifestEntry> = unit
        .source_entries
        .iter()
        .map(|&i| {
            manifest
                .entries
                .get(i)
                .filter(|e| e.channel_id == unit.channel_id)
                .ok_or_else(|| ArchiveError::InvalidArgument(format!("unit references foreign entry {i}")))
        })
        .collect::<Result<_, _>>()?;
    let first = *entries
        .first()
        .ok_or_else(|| ArchiveError::InvalidArgument("unit has no source entries".into()))?;
    for pair in entries.windows(2) {
        if !contiguous(pair[0], pair[1]) {
            let prev_end = pair[0].start_epoch_secs() + pair[0].duration_secs();
            return Err(ArchiveError::GapInData {
                channel: unit.channel_id.clone(),
                at: UtcMillis::from_epoch_secs(prev_end),
                gap_secs: pair[1].start_epoch_secs() - prev_end,
            });
        }
    }
    let epoch = manifest
        .channel_epoch(&unit.channel_id)
        .expect("channel has at least one entry");

    // Locate the segment start so that sample indices are shared by every
    // unit of the segment.
    let segs = channel_segments(manifest);
    let seg = segs[unit.channel_id.as_str()]
        .1
        .iter()
        .find(|s| s.entries.contains(&unit.source_entries[0]))
        .expect("entry belongs to a segment")
        .clone();
    let rate = seg.rate as f64;
    let (lo, hi) = unit.padded_span();
    let first_sample = ((lo - seg.start) * rate).round().max(0.0) as u64;
    let n = ((unit.pad_before + unit.core_len() + unit.pad_after) * rate).round() as u64;
    let lead: u64 = seg
        .entries
        .iter()
        .take_while(|&&i| i != unit.source_entries[0])
        .map(|&i| manifest.entries[i].n_samples)
        .sum();
    if first_sample < lead || hi > seg.end + 0.5 / rate {
        return Err(ArchiveError::InvalidArgument("unit extends beyond its source entries".into()));
    }
    let samples = read_run(manifest, &unit.source_entries, first_sample - lead, n)?;
    debug_assert_eq!(first.sample_rate, seg.rate);
    Ok(SampleBlock {
        channel_id: unit.channel_id.clone(),
        start_utc: epoch + seg.start + first_sample as f64 / rate,
        sample_rate: seg.rate,
        samples,
    })
}

/// Reads `[start, end)` (epoch seconds) of a channel, clamped to the
/// contiguous segment that contains the window's midpoint.
pub fn read_window(
    manifest: &ArchiveManifest,
    channel: &str,
    start: f64,
    end: f64,
) -> Result<SampleBlock, ArchiveError> {
    let segs = channel_segments(manifest);
    let (epoch, segs) = segs
        .get(channel)
        .ok_or_else(|| ArchiveError::InvalidArgument(format!("unknown channel {channel}")))?;
    let mid = (start + end) / 2.0 - epoch;
    let seg = segs
        .iter()
        .find(|s| s.start <= mid && mid < s.end)
        .ok_or_else(|| ArchiveError::InvalidArgument(format!("no recording covers {channel} at {mid:.3} s")))?;
    let rate = seg.rate as f64;
    let lo = (start - epoch).max(seg.start);
    let hi = (end - epoch).min(seg.end);
    let first = ((lo - seg.start) * rate).round() as u64;
    let last = (((hi - seg.start) * rate).round() as u64).max(first + 1);
    let total: u64 = seg.entries.iter().map(|&i| manifest.entries[i].n_samples).sum();
    let last = last.min(total);
    let samples = read_run(manifest, &seg.entries, first, last - first)?;
    Ok(SampleBlock {
        channel_id: channel.to_string(),
        start_utc: epoch + seg.start + first as f64 / rate,
        sample_rate: seg.rate,
        samples,
    })
}

/// Writes a block as 16-bit mono PCM (samples clipped to [-1, 1]).
pub fn write_wav16(path: &Path, rate: u32, samples: &[f64]) -> Result<(), ArchiveError> {
    let io = |e: hound::Error| ArchiveError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(io)?;
    }
    w.finalize().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn write_const(dir: &Path, name: &str, rate: u32, n: usize, value: i32, bits: u16) -> PathBuf {
        let p = dir.join(name);
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..n {
            w.write_sample(value).unwrap();
        }
        w.finalize().unwrap();
        p
    }

    fn write_ramp(dir: &Path, name: &str, rate: u32, n: usize, offset: i32) {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(dir.join(name), spec).unwrap();
        for i in 0..n {
            w.write_sample(((i as i32 + offset) % 30000) as i16).unwrap();
        }
        w.finalize().unwrap();
    }

    fn entry(channel: &str, start_s: i64, rate: u32, n: u64) -> ManifestEntry {
        ManifestEntry {
            path: PathBuf::from(format!("{channel}_{start_s}.wav")),
            channel_id: channel.into(),
            start_utc: Utc.timestamp_opt(1_136_073_600 + start_s, 0).unwrap(),
            sample_rate: rate,
            n_samples: n,
            bit_depth: 16,
        }
    }

    #[test]
    fn scan_two_contiguous_hours() {
        let dir = tempfile::tempdir().unwrap();
        write_const(dir.path(), "A_20060101_000000.wav", 2000, 3600 * 2000, 0, 16);
        write_const(dir.path(), "A_20060101_010000.wav", 2000, 3600 * 2000, 0, 16);
        let m = scan_archive(dir.path(), &NamePattern::default()).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert!(m.skipped.is_empty());
        assert!(m.entries.iter().all(|e| e.channel_id == "A"));
        let units = partition(&m, 7200.0, 0.0).unwrap();
        assert_eq!(units.len(), 1, "contiguous files form one segment");
        assert_eq!(units[0].source_entries, vec![0, 1]);
    }

    #[test]
    fn scan_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        let m = scan_archive(dir.path(), &NamePattern::default()).unwrap();
        assert!(m.entries.is_empty() && m.skipped.is_empty());
    }

    #[test]
    fn scan_skips_nonmatching_and_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("notes.txt"), "hello").unwrap();
        std::fs::write(dir.path().join("B_20060101_000000.wav"), "not a wav").unwrap();
        std::fs::write(dir.path().join("B_20061301_000000.wav"), "bad month").unwrap();
        let m = scan_archive(dir.path(), &NamePattern::default()).unwrap();
        assert!(m.entries.is_empty());
        let reasons: Vec<_> = m
            .skipped
            .iter()
            .map(|s| (s.path.file_name().unwrap().to_string_lossy().into_owned(), s.reason.clone()))
            .collect();
        assert_eq!(reasons[2], ("notes.txt".into(), "name does not match pattern".into()));
        assert!(reasons[0].1.starts_with("corrupt header"));
        assert!(reasons[1].1.starts_with("malformed date"));
    }

    #[test]
    fn scan_unreadable_root_is_fatal() {
        let err = scan_archive(Path::new("/definitely/not/here"), &NamePattern::default()).unwrap_err();
        assert!(matches!(err, ArchiveError::UnreadableRoot { .. }));
    }

    #[test]
    fn overlapping_file_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_const(dir.path(), "A_20060101_000000.wav", 1000, 10_000, 0, 16);
        write_const(dir.path(), "A_20060101_000005.wav", 1000, 10_000, 0, 16);
        let m = scan_archive(dir.path(), &NamePattern::default()).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert!(m.skipped[0].reason.starts_with("overlaps"));
    }

    #[test]
    fn pattern_requires_all_fields() {
        assert!(NamePattern::new("<channel>.wav").is_err());
        assert!(NamePattern::new("<channel>_<YYYYMMDD>_<HHMMSS>_<foo>.wav").is_err());
        let p = NamePattern::new("site-<channel>-<YYYYMMDD>T<HHMMSS>.wav").unwrap();
        let (ch, t) = p.parse_name("site-H1-20140102T030405.wav").unwrap();
        assert_eq!(ch, "H1");
        assert_eq!(t, Utc.with_ymd_and_hms(2014, 1, 2, 3, 4, 5).unwrap());
        assert_eq!(p.format_name("H1", t), "site-H1-20140102T030405.wav");
    }

    #[test]
    fn partition_hour_into_six() {
        let m = ArchiveManifest {
            entries: vec![entry("A", 0, 2000, 3600 * 2000)],
            skipped: vec![],
        };
        let units = partition(&m, 600.0, 5.0).unwrap();
        assert_eq!(units.len(), 6);
        for (k, u) in units.iter().enumerate() {
            assert_eq!(u.core_span, (600.0 * k as f64, 600.0 * (k + 1) as f64));
        }
        assert_eq!(units[0].pad_before, 0.0);
        assert_eq!(units[0].pad_after, 5.0);
        assert_eq!(units[5].pad_after, 0.0);
        assert_eq!(units[3].pad_before, 5.0);
    }

    #[test]
    fn partition_ceiling() {
        let m = ArchiveManifest {
            entries: vec![entry("A", 0, 2000, 100 * 2000)],
            skipped: vec![],
        };
        let units = partition(&m, 30.0, 2.0).unwrap();
        let cores: Vec<_> = units.iter().map(|u| u.core_span).collect();
        assert_eq!(cores, vec![(0.0, 30.0), (30.0, 60.0), (60.0, 90.0), (90.0, 100.0)]);
        let one = partition(&m, 500.0, 2.0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].pad_before, one[0].pad_after), (0.0, 0.0));
    }

    #[test]
    fn partition_rejects_bad_args() {
        let m = ArchiveManifest::default();
        assert!(partition(&m, 0.0, 0.0).is_err());
        assert!(partition(&m, -1.0, 0.0).is_err());
        assert!(partition(&m, 10.0, 10.0).is_err());
        assert!(partition(&m, 10.0, -1.0).is_err());
    }

    #[test]
    fn partition_splits_at_gaps() {
        let m = ArchiveManifest {
            entries: vec![entry("A", 0, 1000, 50_000), entry("A", 60, 1000, 50_000)],
            skipped: vec![],
        };
        let units = partition(&m, 30.0, 5.0).unwrap();
        let cores: Vec<_> = units.iter().map(|u| u.core_span).collect();
        assert_eq!(cores, vec![(0.0, 30.0), (30.0, 50.0), (60.0, 90.0), (90.0, 110.0)]);
        assert_eq!(units[1].pad_after, 0.0);
        assert_eq!(units[2].pad_before, 0.0);
        assert!(units.iter().all(|u| u.source_entries.len() == 1));
    }

    #[test]
    fn normalization_of_full_scale() {
        let dir = tempfile::tempdir().unwrap();
        write_const(dir.path(), "A_20060101_000000.wav", 1000, 1000, 32767, 16);
        let m = scan_archive(dir.path(), &NamePattern::default()).unwrap();
        let unit = partition(&m, 10.0, 0.0).unwrap().remove(0);
        let b = read_samples(&unit, &m).unwrap();
        assert_eq!(b.samples.len(), 1000);
        assert!((b.samples[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert!((b.samples[0] - 0.999969).abs() < 1e-6);
    }

    #[test]
    fn normalization_24_bit() {
        let dir = tempfile::tempdir().unwrap();
        write_const(dir.path(), "A_20060101_000000.wav", 1000, 100, -(1 << 23), 24);
        let m = scan_archive(dir.path(), &NamePattern::default()).unwrap();
        assert_eq!(m.entries[0].bit_depth, 24);
        let unit = partition(&m, 10.0, 0.0).unwrap().remove(0);
        assert_eq!(read_samples(&unit, &m).unwrap().samples[0], -1.0);
    }

    #[test]
    fn unit_straddling_contiguous_files() {
        let dir = tempfile::tempdir().unwrap();
        write_ramp(dir.path(), "A_20060101_000000.wav", 1000, 10_000, 0);
        write_ramp(dir.path(), "A_20060101_000010.wav", 1000, 10_000, 10_000);
        let m = scan_archive(dir.path(), &NamePattern::default()).unwrap();
        let units = partition(&m, 7.0, 1.0).unwrap();
        let u = &units[1];
        assert_eq!(u.core_span, (7.0, 14.0));
        assert_eq!(u.source_entries, vec![0, 1]);
        let b = read_samples(u, &m).unwrap();
        assert_eq!(b.samples.len(), 9000);
        // continuous ramp across the file boundary
        for (j, s) in b.samples.iter().enumerate() {
            assert_eq!((s * 32768.0).round() as i64, 6000 + j as i64);
        }
        assert!((b.start_utc - (1_136_073_600.0 + 6.0)).abs() < 1e-9);
    }

    #[test]
    fn adjacent_units_agree_on_shared_pad() {
        let dir = tempfile::tempdir().unwrap();
        write_ramp(dir.path(), "A_20060101_000000.wav", 1000, 10_000, 0);
        write_ramp(dir.path(), "A_20060101_000010.wav", 1000, 10_000, 10_000);
        let m = scan_archive(dir.path(), &NamePattern::default()).unwrap();
        let units = partition(&m, 3.0, 1.5).unwrap();
        for pair in units.windows(2) {
            let a = read_samples(&pair[0], &m).unwrap();
            let b = read_samples(&pair[1], &m).unwrap();
            let offset = ((b.start_utc - a.start_utc) * 1000.0).round() as usize;
            let shared = a.samples.len() - offset;
            assert_eq!(&a.samples[offset..], &b.samples[..shared]);
        }
    }

    #[test]
    fn unit_over_gap_reports_gap() {
        let dir = tempfile::tempdir().unwrap();
        write_const(dir.path(), "A_20060101_000000.wav", 1000, 10_000, 0, 16);
        write_const(dir.path(), "A_20060101_000020.wav", 1000, 10_000, 0, 16);
        let m = scan_archive(dir.path(), &NamePattern::default()).unwrap();
        let unit = WorkUnit {
            channel_id: "A".into(),
            core_span: (5.0, 25.0),
            pad_before: 0.0,
            pad_after: 0.0,
            source_entries: vec![0, 1],
        };
        match read_samples(&unit, &m) {
            Err(ArchiveError::GapInData { gap_secs, .. }) => assert!((gap_secs - 10.0).abs() < 1e-9),
            other => panic!("expected gap, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_const(dir.path(), "A_20060101_000000.wav", 1000, 10_000, 7, 16);
        let m = scan_archive(dir.path(), &NamePattern::default()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5000]).unwrap();
        let units = partition(&m, 5.0, 0.0).unwrap();
        assert!(read_samples(&units[0], &m).is_ok());
        assert!(matches!(read_samples(&units[1], &m), Err(ArchiveError::Decode { .. })));
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = ArchiveManifest {
            entries: vec![entry("A", 0, 2000, 7_200_000), entry("B", 3600, 200_000, 10)],
            skipped: vec![SkippedFile {
                path: "x/notes.txt".into(),
                reason: "name does not match pattern".into(),
            }],
        };
        let text = m.to_text();
        assert!(text.starts_with("#adamine-manifest v1\n"));
        assert!(text.contains("A\tA_0.wav\t2006-01-01T00:00:00.000Z\t2000\t7200000\t16\n"));
        assert_eq!(ArchiveManifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn read_window_clamps_to_segment() {
        let dir = tempfile::tempdir().unwrap();
        write_ramp(dir.path(), "A_20060101_000000.wav", 1000, 10_000, 0);
        let m = scan_archive(dir.path(), &NamePattern::default()).unwrap();
        let t0 = 1_136_073_600.0;
        let b = read_window(&m, "A", t0 - 1.0, t0 + 2.0).unwrap();
        assert_eq!(b.samples.len(), 2000);
        assert_eq!(b.start_utc, t0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_manifest() -> impl Strategy<Value = ArchiveManifest> {
            prop::collection::vec(
                (0usize..3, 1u64..5000, prop::bool::ANY, 0i64..30),
                1..12,
            )
            .prop_map(|specs| {
                let mut cursor = [0i64; 3];
                let mut entries = Vec::new();
                for (ch, secs_x10, gap, gap_len) in specs {
                    let rate = 10u32;
                    let n = secs_x10;
                    let start = cursor[ch] + if gap { gap_len } else { 0 };
                    let name = ["A", "B", "C"][ch];
                    entries.push(entry(name, start, rate, n));
                    // next file starts at the next whole second after this one ends
                    cursor[ch] = start + (n as i64 + 9) / 10;
                }
                entries.sort_by(|a, b| (&a.channel_id, a.start_utc).cmp(&(&b.channel_id, b.start_utc)));
                ArchiveManifest { entries, skipped: vec![] }
            })
        }

        proptest! {
            #[test]
            fn cores_cover_recorded_duration(m in arb_manifest(), unit in 1.0f64..200.0, frac in 0.0f64..0.99) {
                let pad = unit * frac;
                let units = partition(&m, unit, pad).unwrap();
                for ch in m.channels() {
                    let recorded: f64 = m.entries.iter().filter(|e| e.channel_id == ch).map(|e| e.duration_secs()).sum();
                    let mine: Vec<_> = units.iter().filter(|u| u.channel_id == ch).collect();
                    let covered: f64 = mine.iter().map(|u| u.core_len()).sum();
                    prop_assert!((covered - recorded).abs() < 1e-6, "{covered} vs {recorded}");
                    for w in mine.windows(2) {
                        prop_assert!(w[0].core_span.1 <= w[1].core_span.0 + 1e-9);
                    }
                    for u in &mine {
                        prop_assert!(u.pad_before >= 0.0 && u.pad_after >= 0.0);
                        prop_assert!(u.pad_before <= pad && u.pad_after <= pad);
                        prop_assert!(!u.source_entries.is_empty());
                    }
                }
            }

            #[test]
            fn scan_partition_serialization_is_deterministic(m in arb_manifest(), unit in 1.0f64..50.0) {
                let a: Vec<String> = partition(&m, unit, unit / 4.0).unwrap().iter().map(WorkUnit::to_line).collect();
                let b: Vec<String> = partition(&m, unit, unit / 4.0).unwrap().iter().map(WorkUnit::to_line).collect();
                prop_assert_eq!(a, b);
                prop_assert_eq!(ArchiveManifest::parse(&m.to_text()).unwrap().to_text(), m.to_text());
            }
        }
    }
}
