//! Connected-region analysis of binarized spectrograms and the rule-based
//! short-tonal (type-I) detector.

use ndarray::Array2;
use serde::Deserialize;

use crate::dsp::{binarize, BinaryMask, DspError, Spectrogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl<'de> Deserialize<'de> for Connectivity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            n => Err(serde::de::Error::custom(format!("connectivity must be 4 or 8, got {n}"))),
        }
    }
}

/// Time–frequency box of an event, seconds (epoch) and Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub t_start: f64,
    pub t_end: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        (self.t_end - self.t_start).max(0.0) * (self.f_hi - self.f_lo).max(0.0)
    }

    /// Intersection over union in the time–frequency plane.
    pub fn iou(&self, other: &BBox) -> f64 {
        let dt = self.t_end.min(other.t_end) - self.t_start.max(other.t_start);
        let df = self.f_hi.min(other.f_hi) - self.f_lo.max(other.f_lo);
        if dt <= 0.0 || df <= 0.0 {
            return 0.0;
        }
        let inter = dt * df;
        inter / (self.area() + other.area() - inter)
    }
}

/// A detector hit before it is tagged with channel, detector and run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

/// Connected set of mask pixels, `(frame, bin)` sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub pixels: Vec<(usize, usize)>,
    pub frames: (usize, usize),
    pub bins: (usize, usize),
}

impl Region {
    pub fn n_pixels(&self) -> usize {
        self.pixels.len()
    }

    fn from_pixels(mut pixels: Vec<(usize, usize)>) -> Self {
        pixels.sort_unstable();
        let frames = (pixels[0].0, pixels[pixels.len() - 1].0);
        let (bmin, bmax) = pixels
            .iter()
            .fold((usize::MAX, 0), |(lo, hi), &(_, b)| (lo.min(b), hi.max(b)));
        Region {
            pixels,
            frames,
            bins: (bmin, bmax),
        }
    }

    /// Tight hull of the pixels: each frame spans one hop around its centre,
    /// each bin one bin width around its centre (clamped to `[0, nyquist]`).
    pub fn bbox(&self, spec: &Spectrogram) -> BBox {
        let half_hop = spec.frame_hop / 2.0;
        let half_bin = spec.bin_width / 2.0;
        BBox {
            t_start: spec.frame_time(self.frames.0) - half_hop,
            t_end: spec.frame_time(self.frames.1) + half_hop,
            f_lo: (spec.bin_freq(self.bins.0) - half_bin).max(0.0),
            f_hi: (spec.bin_freq(self.bins.1) + half_bin).min(spec.nyquist()),
        }
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union–find labeling. Regions come back sorted by
/// `(first frame, lowest bin, first pixel)`.
pub fn connected_regions(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Region> {
    label_regions(&mask.data, connectivity)
}

pub fn label_regions(mask: &Array2<bool>, connectivity: Connectivity) -> Vec<Region> {
    const NONE: u32 = u32::MAX;
    let (rows, cols) = mask.dim();
    let mut labels = Array2::from_elem((rows, cols), NONE);
    let mut uf = UnionFind::new();
    // already-visited neighbours in raster order
    let back: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
    };
    for r in 0..rows {
        for c in 0..cols {
            if !mask[[r, c]] {
                continue;
            }
            let mut label = NONE;
            for &(dr, dc) in back {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nc >= cols as isize {
                    continue;
                }
                let l = labels[[nr as usize, nc as usize]];
                if l == NONE {
                    continue;
                }
                if label == NONE {
                    label = l;
                } else {
                    uf.union(label, l);
                }
            }
            labels[[r, c]] = if label == NONE { uf.make() } else { label };
        }
    }
    let mut groups: std::collections::BTreeMap<u32, Vec<(usize, usize)>> = Default::default();
    for ((r, c), &l) in labels.indexed_iter() {
        if l != NONE {
            groups.entry(uf.find(l)).or_default().push((r, c));
        }
    }
    let mut regions: Vec<Region> = groups.into_values().map(Region::from_pixels).collect();
    regions.sort_by(|a, b| (a.frames.0, a.bins.0, a.pixels[0]).cmp(&(b.frames.0, b.bins.0, b.pixels[0])));
    regions
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionFeatures {
    pub duration: f64,
    pub bandwidth: f64,
    pub peak_freq: f64,
    pub total_energy: f64,
    pub time_centroid: f64,
    pub freq_centroid: f64,
    /// Hz per second.
    pub slope: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("region pixel ({frame}, {bin}) outside {frames}x{bins} spectrogram")]
pub struct FeatureError {
    pub frame: usize,
    pub bin: usize,
    pub frames: usize,
    pub bins: usize,
}

/// Shape and energy descriptors of a region.
///
/// The slope is the least-squares line through the per-frame
/// magnitude-weighted frequency centroids; energies use member pixels only.
pub fn region_features(region: &Region, spec: &Spectrogram) -> Result<RegionFeatures, FeatureError> {
    let (frames, bins) = spec.data.dim();
    for &(f, b) in &region.pixels {
        if f >= frames || b >= bins {
            return Err(FeatureError {
                frame: f,
                bin: b,
                frames,
                bins,
            });
        }
    }
    let mut total_energy = 0.0;
    let (mut tc, mut fc) = (0.0, 0.0);
    let mut peak = (f64::NEG_INFINITY, 0usize);
    // per-frame (sum m, sum m*freq, count, sum freq)
    let mut per_frame: Vec<(usize, f64, f64, usize, f64)> = Vec::new();
    for &(f, b) in &region.pixels {
        let m = spec.data[[f, b]];
        let e = m * m;
        total_energy += e;
        tc += e * spec.frame_time(f);
        fc += e * spec.bin_freq(b);
        if m > peak.0 {
            peak = (m, b);
        }
        match per_frame.last_mut() {
            Some(last) if last.0 == f => {
                last.1 += m;
                last.2 += m * spec.bin_freq(b);
                last.3 += 1;
                last.4 += spec.bin_freq(b);
            }
            _ => per_frame.push((f, m, m * spec.bin_freq(b), 1, spec.bin_freq(b))),
        }
    }
    let n = region.pixels.len() as f64;
    let (time_centroid, freq_centroid) = if total_energy > 0.0 {
        (tc / total_energy, fc / total_energy)
    } else {
        (
            region.pixels.iter().map(|&(f, _)| spec.frame_time(f)).sum::<f64>() / n,
            region.pixels.iter().map(|&(_, b)| spec.bin_freq(b)).sum::<f64>() / n,
        )
    };
    let points: Vec<(f64, f64)> = per_frame
        .iter()
        .map(|&(f, sm, smf, cnt, sf)| {
            let c = if sm > 0.0 { smf / sm } else { sf / cnt as f64 };
            (spec.frame_time(f), c)
        })
        .collect();
    let slope = if points.len() < 2 {
        0.0
    } else {
        let k = points.len() as f64;
        let mt = points.iter().map(|p| p.0).sum::<f64>() / k;
        let mf = points.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - mf)).sum();
        let sxx: f64 = points.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    };
    Ok(RegionFeatures {
        duration: (region.frames.1 - region.frames.0 + 1) as f64 * spec.frame_hop,
        bandwidth: (region.bins.1 - region.bins.0 + 1) as f64 * spec.bin_width,
        peak_freq: spec.bin_freq(peak.1),
        total_energy,
        time_centroid,
        freq_centroid,
        slope,
    })
}

/// Closed acceptance interval `[min, max]`, written `[min, max]` in config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleWindow {
    pub min: f64,
    pub max: f64,
}

impl<'de> Deserialize<'de> for RuleWindow {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [min, max] = <[f64; 2]>::deserialize(d)?;
        Ok(RuleWindow { min, max })
    }
}

impl RuleWindow {
    pub const ANY: RuleWindow = RuleWindow {
        min: f64::NEG_INFINITY,
        max: f64::INFINITY,
    };

    pub fn new(min: f64, max: f64) -> Self {
        RuleWindow { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    /// 0 at either edge, 1 at the centre, linear in between. Windows with an
    /// infinite edge only gate and always give 1.
    pub fn margin(&self, v: f64) -> f64 {
        if !self.min.is_finite() || !self.max.is_finite() {
            return 1.0;
        }
        let half = (self.max - self.min) / 2.0;
        if half == 0.0 {
            return 1.0;
        }
        let centre = (self.min + self.max) / 2.0;
        (1.0 - (v - centre).abs() / half).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Type1Params {
    pub percentile: f64,
    pub connectivity: Connectivity,
    /// Pixels more than this many dB below the spectrogram peak are never
    /// foreground, whatever their bin percentile.
    pub floor_db: f64,
    pub duration: RuleWindow,
    pub bandwidth: RuleWindow,
    pub slope: RuleWindow,
    pub energy: RuleWindow,
}

impl Default for Type1Params {
    /// Up-call–like defaults: a 0.6–2 s sweep rising 20–250 Hz/s over
    /// 30–250 Hz of bandwidth.
    fn default() -> Self {
        Type1Params {
            percentile: 90.0,
            connectivity: Connectivity::Eight,
            floor_db: 10.0,
            duration: RuleWindow::new(0.6, 2.0),
            bandwidth: RuleWindow::new(30.0, 250.0),
            slope: RuleWindow::new(20.0, 250.0),
            energy: RuleWindow::new(0.0, f64::INFINITY),
        }
    }
}

impl Type1Params {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(format!("percentile must be in (0, 100), got {}", self.percentile));
        }
        if !(self.floor_db >= 0.0) {
            return Err(format!("floor_db must be non-negative, got {}", self.floor_db));
        }
        for (name, w) in [
            ("duration", self.duration),
            ("bandwidth", self.bandwidth),
            ("slope", self.slope),
            ("energy", self.energy),
        ] {
            if w.min.is_nan() || w.max.is_nan() || w.min > w.max {
                return Err(format!("{name} window [{}, {}] is not ordered", w.min, w.max));
            }
        }
        Ok(())
    }

    fn windows(&self) -> [RuleWindow; 4] {
        [self.duration, self.bandwidth, self.slope, self.energy]
    }
}

/// Foreground mask: per-bin percentile test restricted to pixels within
/// `floor_db` of the spectrogram peak.
pub fn foreground(spec: &Spectrogram, percentile: f64, floor_db: f64) -> Result<BinaryMask, DspError> {
    let mut mask = binarize(spec, percentile)?;
    let peak = spec.data.iter().copied().fold(0.0, f64::max);
    let floor = peak * 10f64.powf(-floor_db / 20.0);
    mask.data.zip_mut_with(&spec.data, |m, &v| *m = *m && v >= floor);
    Ok(mask)
}

/// Rule-based detection of short tonal sounds.
///
/// Each region whose duration, bandwidth, slope and energy all fall inside
/// their windows becomes a detection scored by its smallest rule margin.
pub fn type1_detect(spec: &Spectrogram, params: &Type1Params) -> Result<Vec<Detection>, DspError> {
    params.validate().map_err(DspError::InvalidArgument)?;
    let mask = foreground(spec, params.percentile, params.floor_db)?;
    let mut out = Vec::new();
    for region in connected_regions(&mask, params.connectivity) {
        let f = region_features(&region, spec).expect("regions come from this spectrogram's mask");
        let values = [f.duration, f.bandwidth, f.slope, f.total_energy];
        let windows = params.windows();
        if windows.iter().zip(values).all(|(w, v)| w.contains(v)) {
            let score = windows
                .iter()
                .zip(values)
                .map(|(w, v)| w.margin(v))
                .fold(1.0, f64::min);
            out.push(Detection {
                bbox: region.bbox(spec),
                score,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::SampleBlock;
    use crate::dsp::{stft, StftParams};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(data: Array2<bool>) -> BinaryMask {
        BinaryMask {
            data,
            provenance: crate::dsp::MaskProvenance {
                method: "test",
                parameter: 0.0,
            },
        }
    }

    /// Recursive flood fill, independent of the union–find labeling.
    fn flood_oracle(m: &Array2<bool>, eight: bool) -> Vec<Vec<(usize, usize)>> {
        fn fill(
            m: &Array2<bool>,
            seen: &mut Array2<bool>,
            r: usize,
            c: usize,
            eight: bool,
            out: &mut Vec<(usize, usize)>,
        ) {
            if seen[[r, c]] || !m[[r, c]] {
                return;
            }
            seen[[r, c]] = true;
            out.push((r, c));
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if (dr == 0 && dc == 0) || (!eight && dr != 0 && dc != 0) {
                        continue;
                    }
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr >= 0 && nc >= 0 && (nr as usize) < m.nrows() && (nc as usize) < m.ncols() {
                        fill(m, seen, nr as usize, nc as usize, eight, out);
                    }
                }
            }
        }
        let mut seen = Array2::from_elem(m.dim(), false);
        let mut parts = Vec::new();
        for ((r, c), _) in m.indexed_iter() {
            let mut part = Vec::new();
            fill(m, &mut seen, r, c, eight, &mut part);
            if !part.is_empty() {
                part.sort_unstable();
                parts.push(part);
            }
        }
        parts.sort();
        parts
    }

    fn as_partition(regions: &[Region]) -> Vec<Vec<(usize, usize)>> {
        let mut p: Vec<_> = regions.iter().map(|r| r.pixels.clone()).collect();
        p.sort();
        p
    }

    #[test]
    fn anti_diagonal_connectivity() {
        let m = mask(array![[false, true], [true, false]]);
        assert_eq!(connected_regions(&m, Connectivity::Four).len(), 2);
        assert_eq!(connected_regions(&m, Connectivity::Eight).len(), 1);
    }

    #[test]
    fn all_false_has_no_regions() {
        let m = mask(Array2::from_elem((8, 8), false));
        assert!(connected_regions(&m, Connectivity::Eight).is_empty());
    }

    #[test]
    fn random_masks_match_flood_fill() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let m = Array2::from_shape_fn((64, 64), |_| rng.gen_bool(0.3));
            for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
                let regions = label_regions(&m, conn);
                assert_eq!(as_partition(&regions), flood_oracle(&m, eight));
                let total: usize = regions.iter().map(Region::n_pixels).sum();
                assert_eq!(total, m.iter().filter(|&&b| b).count());
            }
        }
    }

    #[test]
    fn transpose_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let m = Array2::from_shape_fn((30, 45), |_| rng.gen_bool(0.35));
            let t = m.t().to_owned();
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let direct = as_partition(&label_regions(&m, conn));
                let mut via_t: Vec<Vec<(usize, usize)>> = label_regions(&t, conn)
                    .iter()
                    .map(|r| {
                        let mut px: Vec<_> = r.pixels.iter().map(|&(a, b)| (b, a)).collect();
                        px.sort_unstable();
                        px
                    })
                    .collect();
                via_t.sort();
                assert_eq!(direct, via_t);
            }
        }
    }

    #[test]
    fn output_sorted_by_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Array2::from_shape_fn((40, 40), |_| rng.gen_bool(0.2));
        let regions = label_regions(&m, Connectivity::Eight);
        for w in regions.windows(2) {
            assert!((w[0].frames.0, w[0].bins.0) <= (w[1].frames.0, w[1].bins.0));
        }
    }

    fn spec_of(data: Array2<f64>) -> Spectrogram {
        Spectrogram::from_matrix(data, 0.05, 8.0, 100.0)
    }

    #[test]
    fn single_pixel_features() {
        let mut d = Array2::zeros((10, 10));
        d[[3, 4]] = 2.0;
        let s = spec_of(d);
        let r = Region::from_pixels(vec![(3, 4)]);
        let f = region_features(&r, &s).unwrap();
        assert_eq!(f.duration, s.frame_hop);
        assert_eq!(f.bandwidth, s.bin_width);
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.total_energy, 4.0);
        assert_eq!(f.peak_freq, 32.0);
    }

    #[test]
    fn horizontal_line_has_zero_slope() {
        let d = Array2::from_shape_fn((20, 10), |(f, b)| if b == 5 { 1.0 + f as f64 } else { 0.0 });
        let s = spec_of(d);
        let r = Region::from_pixels((2..12).map(|f| (f, 5)).collect());
        let f = region_features(&r, &s).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.duration, 10.0 * s.frame_hop);
    }

    #[test]
    fn out_of_bounds_pixel_rejected() {
        let s = spec_of(Array2::zeros((4, 4)));
        let r = Region::from_pixels(vec![(1, 1), (1, 4)]);
        assert!(region_features(&r, &s).is_err());
    }

    pub(crate) fn upsweep(rate: u32, total: f64, start: f64, dur: f64, f0: f64, f1: f64) -> Vec<f64> {
        let n = (total * rate as f64) as usize;
        let k = (f1 - f0) / dur;
        (0..n)
            .map(|i| {
                let t = i as f64 / rate as f64 - start;
                if (0.0..dur).contains(&t) {
                    0.5 * (2.0 * std::f64::consts::PI * (f0 * t + 0.5 * k * t * t)).sin()
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn block(samples: Vec<f64>, rate: u32) -> SampleBlock {
        SampleBlock {
            channel_id: "A".into(),
            start_utc: 0.0,
            sample_rate: rate,
            samples,
        }
    }

    #[test]
    fn chirp_slope_recovered() {
        let x = upsweep(2000, 4.0, 1.5, 1.0, 100.0, 200.0);
        let s = stft(&block(x, 2000), StftParams::default()).unwrap();
        let m = foreground(&s, 50.0, 20.0).unwrap();
        let regions = connected_regions(&m, Connectivity::Eight);
        assert_eq!(regions.len(), 1, "{regions:?}");
        let f = region_features(&regions[0], &s).unwrap();
        assert!((f.slope - 100.0).abs() < 10.0, "slope {}", f.slope);
    }

    #[test]
    fn upsweep_in_silence_detected_once() {
        let x = upsweep(2000, 6.0, 2.0, 1.0, 100.0, 200.0);
        let s = stft(&block(x, 2000), StftParams::default()).unwrap();
        let dets = type1_detect(&s, &Type1Params::default()).unwrap();
        assert_eq!(dets.len(), 1, "{dets:?}");
        let b = dets[0].bbox;
        assert!((b.t_start - 2.0).abs() <= s.frame_hop, "{b:?}");
        assert!((b.t_end - 3.0).abs() <= s.frame_hop, "{b:?}");
        assert!((b.f_lo - 100.0).abs() <= s.bin_width, "{b:?}");
        assert!((b.f_hi - 200.0).abs() <= s.bin_width, "{b:?}");
        assert!((0.0..=1.0).contains(&dets[0].score));
    }

    #[test]
    fn white_noise_gives_no_events() {
        for seed in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..2000 * 30).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let s = stft(&block(x, 2000), StftParams::default()).unwrap();
            assert!(type1_detect(&s, &Type1Params::default()).unwrap().is_empty(), "seed {seed}");
        }
    }

    #[test]
    fn zero_spectrogram_gives_no_events() {
        let s = spec_of(Array2::zeros((50, 20)));
        assert!(type1_detect(&s, &Type1Params::default()).unwrap().is_empty());
    }

    #[test]
    fn emitted_events_satisfy_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = upsweep(2000, 20.0, 3.0, 1.0, 100.0, 200.0);
        let y = upsweep(2000, 20.0, 11.0, 0.8, 150.0, 230.0);
        for (a, b) in x.iter_mut().zip(y) {
            *a += b + rng.gen_range(-0.02..0.02);
        }
        let s = stft(&block(x, 2000), StftParams::default()).unwrap();
        let params = Type1Params::default();
        let dets = type1_detect(&s, &params).unwrap();
        assert!(!dets.is_empty());
        let mask = foreground(&s, params.percentile, params.floor_db).unwrap();
        for d in &dets {
            assert!((0.0..=1.0).contains(&d.score));
            let r = connected_regions(&mask, params.connectivity)
                .into_iter()
                .find(|r| r.bbox(&s) == d.bbox)
                .unwrap();
            let f = region_features(&r, &s).unwrap();
            assert!(params.duration.contains(f.duration));
            assert!(params.bandwidth.contains(f.bandwidth));
            assert!(params.slope.contains(f.slope));
            assert!(params.energy.contains(f.total_energy));
        }
    }

    #[test]
    fn rule_margin_shape() {
        let w = RuleWindow::new(0.0, 2.0);
        assert_eq!(w.margin(1.0), 1.0);
        assert_eq!(w.margin(0.0), 0.0);
        assert_eq!(w.margin(1.5), 0.5);
        assert_eq!(RuleWindow::new(0.0, f64::INFINITY).margin(3.0), 1.0);
        let bad = Type1Params {
            slope: RuleWindow::new(5.0, 1.0),
            ..Type1Params::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn iou_basics() {
        let a = BBox {
            t_start: 0.0,
            t_end: 2.0,
            f_lo: 0.0,
            f_hi: 10.0,
        };
        assert_eq!(a.iou(&a), 1.0);
        let b = BBox { t_start: 1.0, ..a };
        assert!((a.iou(&b) - 0.5).abs() < 1e-12);
        let c = BBox {
            t_start: 5.0,
            t_end: 6.0,
            ..a
        };
        assert_eq!(a.iou(&c), 0.0);
    }
}
