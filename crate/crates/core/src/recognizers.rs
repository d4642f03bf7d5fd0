//! Image-style recognizers: spectrogram template correlation and
//! histogram-of-oriented-gradients features.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};
use serde::Deserialize;

use crate::dsp::{from_gray, to_gray, Spectrogram};
use crate::pgm::{self, PgmError};
use crate::segmentation::{BBox, Detection};

#[derive(Debug, thiserror::Error)]
pub enum RecognizerError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("template {path}: {source}")]
    Pgm { path: PathBuf, source: PgmError },
    #[error("template sidecar {path}: {detail}")]
    Meta { path: PathBuf, detail: String },
}

/// A stored spectrogram patch, `frames × bins`, whose lowest bin sits at
/// `f_lo` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub patch: Array2<f64>,
    pub f_lo: f64,
}

impl Template {
    pub fn new(name: &str, patch: Array2<f64>, f_lo: f64) -> Result<Self, RecognizerError> {
        if patch.is_empty() || patch.iter().any(|v| !v.is_finite()) {
            return Err(RecognizerError::InvalidArgument(format!(
                "template {name} must be non-empty and finite"
            )));
        }
        Ok(Template {
            name: name.to_string(),
            patch,
            f_lo,
        })
    }

    /// Cuts `frames × bins` out of a spectrogram.
    pub fn from_spectrogram(
        name: &str,
        spec: &Spectrogram,
        frames: std::ops::Range<usize>,
        bins: std::ops::Range<usize>,
    ) -> Result<Self, RecognizerError> {
        if frames.end > spec.n_frames() || bins.end > spec.n_bins() || frames.is_empty() || bins.is_empty() {
            return Err(RecognizerError::InvalidArgument(format!(
                "template window {frames:?} x {bins:?} outside {}x{} spectrogram",
                spec.n_frames(),
                spec.n_bins()
            )));
        }
        let f_lo = spec.bin_freq(bins.start);
        Template::new(name, spec.data.slice(s![frames, bins]).to_owned(), f_lo)
    }

    /// Writes `<dir>/<name>.pgm` and `<dir>/<name>.meta`. The image is
    /// min–max scaled to 8 bits.
    pub fn save(&self, dir: &Path) -> Result<(), RecognizerError> {
        let img = dir.join(format!("{}.pgm", self.name));
        let (w, h, px) = to_gray(&self.patch);
        pgm::write(&img, w, h, &px).map_err(|source| RecognizerError::Pgm { path: img, source })?;
        let meta = dir.join(format!("{}.meta", self.name));
        let (frames, bins) = self.patch.dim();
        std::fs::write(&meta, format!("{}\t{frames}\t{bins}\n", self.f_lo)).map_err(|e| RecognizerError::Meta {
            path: meta,
            detail: e.to_string(),
        })
    }

    /// Loads `<dir>/<name>.pgm` with its sidecar.
    pub fn load(dir: &Path, name: &str) -> Result<Self, RecognizerError> {
        let meta_path = dir.join(format!("{name}.meta"));
        let meta_err = |detail: String| RecognizerError::Meta {
            path: meta_path.clone(),
            detail,
        };
        let text = std::fs::read_to_string(&meta_path).map_err(|e| meta_err(e.to_string()))?;
        let fields: Vec<&str> = text.trim_end().split('\t').collect();
        let [f_lo, frames, bins] = fields[..] else {
            return Err(meta_err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let f_lo: f64 = f_lo.parse().map_err(|_| meta_err(format!("bad f_lo_hz {f_lo:?}")))?;
        let frames: usize = frames.parse().map_err(|_| meta_err(format!("bad frames {frames:?}")))?;
        let bins: usize = bins.parse().map_err(|_| meta_err(format!("bad bins {bins:?}")))?;
        let img = dir.join(format!("{name}.pgm"));
        let (w, h, px) = pgm::read(&img).map_err(|source| RecognizerError::Pgm {
            path: img.clone(),
            source,
        })?;
        if (w, h) != (frames, bins) {
            return Err(meta_err(format!("image is {w}x{h}, sidecar says {frames}x{bins}")));
        }
        Template::new(name, from_gray(w, h, &px), f_lo)
    }
}

/// Normalized cross-correlation of `template` at every offset where it fits
/// inside `image`. Both operands are made zero-mean over the window; a
/// window or template with zero variance correlates as 0.
pub fn ncc_map(image: ArrayView2<f64>, template: ArrayView2<f64>) -> Result<Array2<f64>, RecognizerError> {
    let (rows, cols) = image.dim();
    let (tr, tc) = template.dim();
    if tr == 0 || tc == 0 || tr > rows || tc > cols {
        return Err(RecognizerError::InvalidArgument(format!(
            "template {tr}x{tc} does not fit in {rows}x{cols}"
        )));
    }
    let n = (tr * tc) as f64;
    let t_mean = template.sum() / n;
    let t_hat = template.mapv(|v| v - t_mean);
    let t_norm = t_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = Array2::zeros((rows - tr + 1, cols - tc + 1));
    if t_norm == 0.0 {
        return Ok(out);
    }
    for ((r, c), v) in out.indexed_iter_mut() {
        let win = image.slice(s![r..r + tr, c..c + tc]);
        let mean = win.sum() / n;
        let (mut dot, mut ss) = (0.0, 0.0);
        for (w, t) in win.iter().zip(t_hat.iter()) {
            let d = w - mean;
            dot += d * t;
            ss += d * d;
        }
        *v = if ss > 0.0 { dot / (ss.sqrt() * t_norm) } else { 0.0 };
    }
    Ok(out)
}

/// Points strictly above `threshold` that are maximal in their
/// 8-neighbourhood; ties go to the first in raster order.
pub fn local_maxima(map: &Array2<f64>, threshold: f64) -> Vec<(usize, usize)> {
    let (rows, cols) = map.dim();
    let mut out = Vec::new();
    for ((r, c), &v) in map.indexed_iter() {
        if v <= threshold {
            continue;
        }
        let mut is_max = true;
        'nb: for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                    continue;
                }
                let u = map[[nr as usize, nc as usize]];
                let earlier = (dr, dc) < (0, 0);
                if u > v || (earlier && u == v) {
                    is_max = false;
                    break 'nb;
                }
            }
        }
        if is_max {
            out.push((r, c));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateParams {
    /// Directory holding `<name>.pgm` and `<name>.meta`.
    pub template_dir: PathBuf,
    pub template: String,
    #[serde(default = "default_ncc_threshold")]
    pub threshold: f64,
    /// Only offsets whose lowest bin lies within this many Hz of the
    /// template's anchor are searched.
    #[serde(default)]
    pub band_slack: Option<f64>,
}

fn default_ncc_threshold() -> f64 {
    0.6
}

/// Template matches as detections: every local maximum of the correlation
/// map above `threshold`, boxed by the template footprint.
pub fn template_correlate(
    spec: &Spectrogram,
    template: &Template,
    threshold: f64,
    band_slack: Option<f64>,
) -> Result<Vec<Detection>, RecognizerError> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(RecognizerError::InvalidArgument(format!(
            "correlation threshold must be in [-1, 1], got {threshold}"
        )));
    }
    let map = ncc_map(spec.data.view(), template.patch.view())?;
    let (tf, tb) = template.patch.dim();
    let half_hop = spec.frame_hop / 2.0;
    let half_bin = spec.bin_width / 2.0;
    Ok(local_maxima(&map, threshold)
        .into_iter()
        .filter(|&(_, b)| band_slack.is_none_or(|slack| (spec.bin_freq(b) - template.f_lo).abs() <= slack))
        .map(|(f, b)| Detection {
            bbox: BBox {
                t_start: spec.frame_time(f) - half_hop,
                t_end: spec.frame_time(f + tf - 1) + half_hop,
                f_lo: (spec.bin_freq(b) - half_bin).max(0.0),
                f_hi: (spec.bin_freq(b + tb - 1) + half_bin).min(spec.nyquist()),
            },
            score: map[[f, b]],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub cell_size: usize,
    pub n_bins: usize,
    pub cells_x: usize,
    pub cells_y: usize,
    pub vector: Vec<f64>,
}

const HOG_EPS: f64 = 1e-12;

/// Per-cell orientation histograms before normalization, cell-row-major.
///
/// Gradients are central differences on interior pixels (`gx` along
/// columns, `gy` along rows). Orientation is unsigned, bins are centred at
/// `i * 180 / n_bins` degrees and each vote is split linearly between the
/// two nearest centres.
pub fn hog_histograms(patch: ArrayView2<f64>, cell_size: usize, n_bins: usize) -> Result<HogDescriptor, RecognizerError> {
    let (rows, cols) = patch.dim();
    if cell_size == 0 || n_bins == 0 || rows % cell_size != 0 || cols % cell_size != 0 || rows == 0 || cols == 0 {
        return Err(RecognizerError::InvalidArgument(format!(
            "{rows}x{cols} patch is not divisible into {cell_size}-pixel cells with {n_bins} bins"
        )));
    }
    let (cells_y, cells_x) = (rows / cell_size, cols / cell_size);
    let mut vector = vec![0.0; cells_y * cells_x * n_bins];
    let bin_width = 180.0 / n_bins as f64;
    for r in 1..rows.saturating_sub(1) {
        for c in 1..cols.saturating_sub(1) {
            let gx = patch[[r, c + 1]] - patch[[r, c - 1]];
            let gy = patch[[r + 1, c]] - patch[[r - 1, c]];
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let pos = theta / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = lo as usize % n_bins;
            let hi = (lo + 1) % n_bins;
            let base = ((r / cell_size) * cells_x + c / cell_size) * n_bins;
            vector[base + lo] += mag * (1.0 - frac);
            vector[base + hi] += mag * frac;
        }
    }
    Ok(HogDescriptor {
        cell_size,
        n_bins,
        cells_x,
        cells_y,
        vector,
    })
}

/// HOG descriptor with whole-vector L2 normalization `v / sqrt(|v|² + 1e-12)`.
pub fn hog_features(patch: ArrayView2<f64>, cell_size: usize, n_bins: usize) -> Result<HogDescriptor, RecognizerError> {
    let mut d = hog_histograms(patch, cell_size, n_bins)?;
    let norm = (d.vector.iter().map(|v| v * v).sum::<f64>() + HOG_EPS).sqrt();
    d.vector.iter_mut().for_each(|v| *v /= norm);
    Ok(d)
}

/// Bilinear resampling of `src` onto an `rows × cols` grid spanning the
/// same extent (corner-aligned).
pub fn resample(src: ArrayView2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let (sr, sc) = src.dim();
    let coord = |i: usize, n: usize, sn: usize| {
        if n <= 1 || sn <= 1 {
            0.0
        } else {
            i as f64 * (sn - 1) as f64 / (n - 1) as f64
        }
    };
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (y, x) = (coord(r, rows, sr), coord(c, cols, sc));
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(sr - 1), (x0 + 1).min(sc - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}
