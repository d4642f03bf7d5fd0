//! Spectrogram front end shared by every detector.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Deserialize;

use crate::archive::SampleBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Rectangular,
    #[default]
    Hann,
}

impl WindowKind {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; n],
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Rectangular => "rectangular",
            WindowKind::Hann => "hann",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftParams {
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            window_len: 256,
            hop: 128,
            window: WindowKind::Hann,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DspError {
    #[error("block of {n_samples} samples is shorter than one {window_len}-sample window")]
    EmptySpectrogram { n_samples: usize, window_len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Linear magnitude spectrogram, `frames × bins`.
///
/// Frame `f` is centred at `t0 + f * frame_hop` (epoch seconds); bin `b` is
/// centred at `b * bin_width` Hz. Only the non-negative frequencies
/// `0..=window_len/2` are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array2<f64>,
    pub frame_hop: f64,
    pub bin_width: f64,
    pub t0: f64,
    pub window_len: usize,
    pub hop: usize,
    pub window_kind: WindowKind,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        self.t0 + frame as f64 * self.frame_hop
    }

    pub fn bin_freq(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    /// Builds a spectrogram directly from a magnitude matrix (mainly for
    /// fixtures and templates).
    pub fn from_matrix(data: Array2<f64>, frame_hop: f64, bin_width: f64, t0: f64) -> Self {
        let window_len = 2 * data.ncols().saturating_sub(1).max(1);
        let sample_rate = (bin_width * window_len as f64).round() as u32;
        Spectrogram {
            data,
            frame_hop,
            bin_width,
            t0,
            window_len,
            hop: (frame_hop * sample_rate as f64).round() as usize,
            window_kind: WindowKind::Rectangular,
            sample_rate,
        }
    }
}

/// Computes `stft` frames without re-planning the FFT for every block.
pub struct StftPlan {
    params: StftParams,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(params: StftParams) -> Result<Self, DspError> {
        if params.window_len < 2 {
            return Err(DspError::InvalidArgument("window_len must be at least 2".into()));
        }
        if params.hop == 0 {
            return Err(DspError::InvalidArgument("hop must be at least 1".into()));
        }
        Ok(StftPlan {
            window: params.window.coefficients(params.window_len),
            fft: FftPlanner::new().plan_fft_forward(params.window_len),
            params,
        })
    }

    pub fn run(&self, block: &SampleBlock) -> Result<Spectrogram, DspError> {
        let n = self.params.window_len;
        let hop = self.params.hop;
        let len = block.samples.len();
        if len < n {
            return Err(DspError::EmptySpectrogram {
                n_samples: len,
                window_len: n,
            });
        }
        let frames = (len - n) / hop + 1;
        let bins = n / 2 + 1;
        let mut data = Array2::zeros((frames, bins));
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (f, mut row) in data.axis_iter_mut(Axis(0)).enumerate() {
            let seg = &block.samples[f * hop..f * hop + n];
            for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new(x * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (m, c) in row.iter_mut().zip(&buf) {
                *m = c.norm();
            }
        }
        let rate = block.sample_rate as f64;
        Ok(Spectrogram {
            data,
            frame_hop: hop as f64 / rate,
            bin_width: rate / n as f64,
            t0: block.start_utc + (n / 2) as f64 / rate,
            window_len: n,
            hop,
            window_kind: self.params.window,
            sample_rate: block.sample_rate,
        })
    }
}

pub fn stft(block: &SampleBlock, params: StftParams) -> Result<Spectrogram, DspError> {
    StftPlan::new(params)?.run(block)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskProvenance {
    pub method: &'static str,
    pub parameter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub data: Array2<bool>,
    pub provenance: MaskProvenance,
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Percentile of sorted values by linear interpolation between order
/// statistics (rank `p/100 * (n-1)`).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let rank = p / 100.0 * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = rank - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

/// Marks pixels strictly above the `p`-th percentile of their own bin.
pub fn binarize(spec: &Spectrogram, p: f64) -> Result<BinaryMask, DspError> {
    if !(p > 0.0 && p < 100.0) {
        return Err(DspError::InvalidArgument(format!("percentile must be in (0, 100), got {p}")));
    }
    let mut data = Array2::from_elem(spec.data.raw_dim(), false);
    let mut col = Vec::with_capacity(spec.n_frames());
    for (b, values) in spec.data.axis_iter(Axis(1)).enumerate() {
        col.clear();
        col.extend(values.iter().copied());
        col.sort_by(f64::total_cmp);
        let threshold = percentile_sorted(&col, p);
        for (f, &v) in values.iter().enumerate() {
            data[[f, b]] = v > threshold;
        }
    }
    Ok(BinaryMask {
        data,
        provenance: MaskProvenance {
            method: "per-bin percentile",
            parameter: p,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionAxis {
    /// One value per frame.
    Time,
    /// One value per bin.
    Frequency,
}

/// Bins whose centre frequency lies in `[f_lo, f_hi]`.
pub fn band_bins(spec: &Spectrogram, f_lo: f64, f_hi: f64) -> Result<std::ops::Range<usize>, DspError> {
    if !(f_lo < f_hi) || f_lo < 0.0 || f_hi > spec.nyquist() + 1e-9 {
        return Err(DspError::InvalidArgument(format!(
            "band [{f_lo}, {f_hi}] Hz must be increasing and within Nyquist {}",
            spec.nyquist()
        )));
    }
    let lo = (f_lo / spec.bin_width - 1e-9).ceil().max(0.0) as usize;
    let hi = ((f_hi / spec.bin_width + 1e-9).floor() as usize + 1).min(spec.n_bins());
    if lo >= hi {
        return Err(DspError::InvalidArgument(format!("band [{f_lo}, {f_hi}] Hz contains no bins")));
    }
    Ok(lo..hi)
}

/// Sums squared magnitudes over the axis orthogonal to `axis`, restricted
/// to the band. A frequency projection has one entry per bin of the band.
pub fn energy_projection(spec: &Spectrogram, axis: ProjectionAxis, band: (f64, f64)) -> Result<Vec<f64>, DspError> {
    let bins = band_bins(spec, band.0, band.1)?;
    let sub = spec.data.slice(ndarray::s![.., bins]);
    Ok(match axis {
        ProjectionAxis::Time => sub.axis_iter(Axis(0)).map(|r| r.iter().map(|m| m * m).sum()).collect(),
        ProjectionAxis::Frequency => sub.axis_iter(Axis(1)).map(|c| c.iter().map(|m| m * m).sum()).collect(),
    })
}

/// 8-bit grayscale rendering: row 0 is the highest bin, one column per
/// frame, min–max scaled over the clip. Returns `(width, height, pixels)`.
pub fn to_gray(data: &Array2<f64>) -> (usize, usize, Vec<u8>) {
    let (frames, bins) = data.dim();
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut px = Vec::with_capacity(frames * bins);
    for b in (0..bins).rev() {
        for f in 0..frames {
            let v = if range > 0.0 { (data[[f, b]] - lo) / range } else { 0.0 };
            px.push((v * 255.0).round() as u8);
        }
    }
    (frames, bins, px)
}

/// Inverse of [`to_gray`] up to scaling: pixels mapped to `[0, 1]`.
pub fn from_gray(width: usize, height: usize, px: &[u8]) -> Array2<f64> {
    let mut data = Array2::zeros((width, height));
    for (row, chunk) in px.chunks(width).enumerate() {
        let b = height - 1 - row;
        for (f, &p) in chunk.iter().enumerate() {
            data[[f, b]] = p as f64 / 255.0;
        }
    }
    data
}
