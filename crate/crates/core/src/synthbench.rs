//! Seeded synthetic fixtures: rendered acoustic scenes with exact ground
//! truth, simulated analyst scores, and the labeled post-classifier
//! benchmark.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`. A scene
//! draws its white noise first (one standard normal per sample, scaled by
//! `noise_level`) and then pulse jitter, signal by signal in list order.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Deserialize;

use crate::archive::{write_wav16, ArchiveError, NamePattern, SampleBlock};
use crate::classify::{self, HumanScore, TrainParams, SCORE_LEVELS};
use crate::evalkit::{curve, tpr_at_fpr, CurveKind};
use crate::eventstore::{sort_canonical, EventRecord};
use crate::time::UtcMillis;

/// Amplitude used when the scene has no noise and SNR is meaningless.
const NOISELESS_AMPLITUDE: f64 = 0.5;
/// Half-width of a tone's truth band, Hz.
const TONE_HALF_BAND: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    /// Linear chirp from `f0` to `f1` Hz.
    Upsweep {
        start: f64,
        duration: f64,
        f0: f64,
        f1: f64,
        snr_db: f64,
    },
    /// `count` Hann-windowed tone bursts; pulse `k` starts at
    /// `start + k * period` plus Gaussian jitter of `jitter * period` s.d.
    PulseTrain {
        start: f64,
        period: f64,
        count: usize,
        freq: f64,
        pulse_len: f64,
        #[serde(default)]
        jitter: f64,
        snr_db: f64,
    },
    Tone {
        start: f64,
        duration: f64,
        freq: f64,
        snr_db: f64,
    },
}

impl SignalSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            SignalSpec::Upsweep { .. } => "upsweep",
            SignalSpec::PulseTrain { .. } => "pulse_train",
            SignalSpec::Tone { .. } => "tone",
        }
    }

    fn snr_db(&self) -> f64 {
        match *self {
            SignalSpec::Upsweep { snr_db, .. } | SignalSpec::PulseTrain { snr_db, .. } | SignalSpec::Tone { snr_db, .. } => {
                snr_db
            }
        }
    }

    /// Frequency band the truth box records, Hz.
    pub fn band(&self) -> (f64, f64) {
        match *self {
            SignalSpec::Upsweep { f0, f1, .. } => (f0.min(f1), f0.max(f1)),
            SignalSpec::PulseTrain { freq, pulse_len, .. } => (freq - 2.0 / pulse_len, freq + 2.0 / pulse_len),
            SignalSpec::Tone { freq, .. } => (freq - TONE_HALF_BAND, freq + TONE_HALF_BAND),
        }
    }
}

fn default_channel() -> String {
    "CH01".into()
}

fn default_start() -> String {
    "2013-01-01T00:00:00.000Z".into()
}

fn default_noise() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Seconds.
    pub duration: f64,
    pub rate: u32,
    /// Standard deviation of the white noise.
    #[serde(default = "default_noise")]
    pub noise_level: f64,
    #[serde(default)]
    pub signals: Vec<SignalSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_channel")]
    pub channel: String,
    #[serde(default = "default_start")]
    pub start_utc: String,
    /// Ground-truth file written next to the rendered archive by `run`.
    #[serde(default)]
    pub truth_path: Option<PathBuf>,
}

impl SceneSpec {
    pub fn new(duration: f64, rate: u32, noise_level: f64, seed: u64) -> Self {
        SceneSpec {
            duration,
            rate,
            noise_level,
            signals: Vec::new(),
            seed,
            channel: default_channel(),
            start_utc: default_start(),
            truth_path: None,
        }
    }

    pub fn with(mut self, signal: SignalSpec) -> Self {
        self.signals.push(signal);
        self
    }

    pub fn start(&self) -> Result<UtcMillis, SynthError> {
        UtcMillis::parse_iso(&self.start_utc).map_err(|e| SynthError::InvalidScene(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScene(m));
        if !(self.duration > 0.0) || self.rate == 0 {
            return bad("duration and rate must be positive".into());
        }
        if !(self.noise_level >= 0.0) {
            return bad(format!("noise_level must be non-negative, got {}", self.noise_level));
        }
        self.start()?;
        let nyquist = self.rate as f64 / 2.0;
        for (i, s) in self.signals.iter().enumerate() {
            if !s.snr_db().is_finite() {
                return bad(format!("signal {i}: SNR must be finite"));
            }
            let (start, end) = truth_span(s);
            if start < 0.0 || end > self.duration {
                return bad(format!("signal {i} spans [{start}, {end}] s, outside the {} s scene", self.duration));
            }
            let (lo, hi) = s.band();
            if lo <= 0.0 || hi >= nyquist {
                return bad(format!("signal {i} band [{lo}, {hi}] Hz must lie inside (0, {nyquist})"));
            }
            match *s {
                SignalSpec::Upsweep { duration, .. } | SignalSpec::Tone { duration, .. } if !(duration > 0.0) => {
                    return bad(format!("signal {i}: duration must be positive"));
                }
                SignalSpec::PulseTrain {
                    period,
                    count,
                    pulse_len,
                    jitter,
                    ..
                } if !(period > 0.0 && count > 0 && pulse_len > 0.0 && (0.0..0.5).contains(&jitter)) => {
                    return bad(format!("signal {i}: pulse train needs positive period/count/pulse_len and jitter in [0, 0.5)"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Nominal (unjittered) time span of a signal.
fn truth_span(s: &SignalSpec) -> (f64, f64) {
    match *s {
        SignalSpec::Upsweep { start, duration, .. } | SignalSpec::Tone { start, duration, .. } => (start, start + duration),
        SignalSpec::PulseTrain {
            start,
            period,
            count,
            pulse_len,
            ..
        } => (start, start + (count - 1) as f64 * period + pulse_len),
    }
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub block: SampleBlock,
    pub truth: Vec<EventRecord>,
    /// Per signal: the sample ranges where it is active.
    pub active: Vec<Vec<std::ops::Range<usize>>>,
}

/// Unit-amplitude waveform of one signal plus its active sample ranges.
fn waveform(s: &SignalSpec, rate: f64, n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<std::ops::Range<usize>>, (f64, f64)) {
    let mut x = vec![0.0; n];
    let idx = |t: f64| ((t * rate).round().max(0.0) as usize).min(n);
    match *s {
        SignalSpec::Upsweep {
            start,
            duration,
            f0,
            f1,
            ..
        } => {
            let k = (f1 - f0) / duration;
            let r = idx(start)..idx(start + duration);
            for i in r.clone() {
                let t = (i as f64 - start * rate) / rate;
                x[i] = (2.0 * PI * (f0 * t + 0.5 * k * t * t)).sin();
            }
            (x, vec![r], (start, start + duration))
        }
        SignalSpec::Tone {
            start, duration, freq, ..
        } => {
            let r = idx(start)..idx(start + duration);
            for i in r.clone() {
                x[i] = (2.0 * PI * freq * (i as f64 / rate - start)).sin();
            }
            (x, vec![r], (start, start + duration))
        }
        SignalSpec::PulseTrain {
            start,
            period,
            count,
            freq,
            pulse_len,
            jitter,
            ..
        } => {
            let m = (pulse_len * rate).round() as usize;
            let mut ranges = Vec::with_capacity(count);
            let (mut first, mut last) = (f64::INFINITY, f64::NEG_INFINITY);
            for k in 0..count {
                let dj: f64 = if jitter > 0.0 {
                    jitter * period * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                let t0 = (start + k as f64 * period + dj).max(0.0);
                let i0 = idx(t0);
                let r = i0..(i0 + m).min(n);
                for i in r.clone() {
                    let j = (i - i0) as f64;
                    let w = 0.5 - 0.5 * (2.0 * PI * j / m as f64).cos();
                    x[i] += w * (2.0 * PI * freq * j / rate).sin();
                }
                first = first.min(i0 as f64 / rate);
                last = last.max((i0 + m) as f64 / rate);
                ranges.push(r);
            }
            (x, ranges, (first, last))
        }
    }
}

/// Renders the scene. Each signal is scaled so that its mean power over its
/// active samples equals `10^(snr/10)` times the noise power falling in its
/// truth band (`noise_level² · band / nyquist`). Noise-free scenes use a
/// fixed amplitude of 0.5 instead.
pub fn render_scene(spec: &SceneSpec) -> Result<RenderedScene, SynthError> {
    spec.validate()?;
    let rate = spec.rate as f64;
    let n = (spec.duration * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples: Vec<f64> = if spec.noise_level > 0.0 {
        let noise = Normal::new(0.0, spec.noise_level).expect("finite positive sigma");
        (0..n).map(|_| noise.sample(&mut rng)).collect()
    } else {
        vec![0.0; n]
    };
    let start = spec.start()?;
    let mut truth = Vec::new();
    let mut active = Vec::new();
    for (i, s) in spec.signals.iter().enumerate() {
        let (wave, ranges, (t0, t1)) = waveform(s, rate, n, &mut rng);
        let (lo, hi) = s.band();
        let amplitude = if spec.noise_level > 0.0 {
            let count: usize = ranges.iter().map(|r| r.len()).sum();
            let power = ranges.iter().flat_map(|r| wave[r.clone()].iter()).map(|v| v * v).sum::<f64>() / count.max(1) as f64;
            let noise_in_band = spec.noise_level.powi(2) * (hi - lo) / (rate / 2.0);
            (10f64.powf(s.snr_db() / 10.0) * noise_in_band / power).sqrt()
        } else {
            NOISELESS_AMPLITUDE
        };
        for (y, w) in samples.iter_mut().zip(&wave) {
            *y += amplitude * w;
        }
        truth.push(
            EventRecord {
                event_id: format!("truth:{i}"),
                run_id: "truth".into(),
                channel_id: spec.channel.clone(),
                begin: start.add_millis((t0 * 1000.0).round() as i64),
                end: start.add_millis((t1 * 1000.0).round() as i64),
                f_lo: lo,
                f_hi: hi,
                score: 1.0,
                detector_id: "truth".into(),
                tag: s.kind().into(),
            }
            .canonical(),
        );
        active.push(ranges);
    }
    sort_canonical(&mut truth);
    Ok(RenderedScene {
        block: SampleBlock {
            channel_id: spec.channel.clone(),
            start_utc: start.epoch_secs(),
            sample_rate: spec.rate,
            samples,
        },
        truth,
        active,
    })
}

/// Writes the scene as one 16-bit WAV named by `pattern` under `dir`
/// (samples clipped to ±1). Returns the file path.
pub fn write_scene(scene: &RenderedScene, dir: &Path, pattern: &NamePattern) -> Result<PathBuf, SynthError> {
    let start = UtcMillis::from_epoch_secs(scene.block.start_utc).to_datetime();
    let path = dir.join(pattern.format_name(&scene.block.channel_id, start));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| ArchiveError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    write_wav16(&path, scene.block.sample_rate, &scene.block.samples)?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSimParams {
    /// Target point-biserial correlation between one analyst's score and
    /// the truth label.
    pub rho: f64,
    /// Probability that two analysts perceive opposite labels.
    pub disagreement: f64,
    pub n_analysts: usize,
    /// Fraction of events that get scored.
    pub coverage: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SimulatedScores {
    pub scores: Vec<HumanScore>,
    /// `perceived[a][i]`: analyst `a`'s private label for event `i`.
    pub perceived: Vec<Vec<bool>>,
    /// Probability of reporting the perceived label outright (otherwise a
    /// uniform draw over the five levels).
    pub commitment: f64,
    pub flip_prob: f64,
}

/// Correlation between score and truth implied by the mixture model.
fn mixture_rho(q: f64, pi: f64, f: f64) -> f64 {
    let m = pi * (1.0 - f) + (1.0 - pi) * f;
    let u2: f64 = SCORE_LEVELS.iter().map(|v| v * v).sum::<f64>() / SCORE_LEVELS.len() as f64;
    let mean = q * m + (1.0 - q) * 0.5;
    let var = q * m + (1.0 - q) * u2 - mean * mean;
    let cov = pi * (1.0 - pi) * q * (1.0 - 2.0 * f);
    if var <= 0.0 {
        return 0.0;
    }
    cov / (var * pi * (1.0 - pi)).sqrt()
}

/// Simulated analyst scores on the five-level scale.
///
/// Each analyst privately flips each truth label with probability
/// `f = (1 - sqrt(1 - 2d)) / 2`, so two analysts disagree at rate `d`. An
/// analyst then reports the perceived label (0 or 1) with probability `q`
/// and a uniformly drawn level otherwise; `q` is solved by bisection so the
/// expected score–truth correlation equals `rho` (capped at the largest
/// attainable value).
pub fn simulate_scores(event_ids: &[String], labels: &[bool], params: &ScoreSimParams) -> Result<SimulatedScores, SynthError> {
    if event_ids.len() != labels.len() {
        return Err(SynthError::InvalidScene("event ids and labels differ in length".into()));
    }
    if !(0.0..=1.0).contains(&params.rho) || !(0.0..=0.5).contains(&params.disagreement) || !(0.0..=1.0).contains(&params.coverage) {
        return Err(SynthError::InvalidScene("rho and coverage must be in [0, 1], disagreement in [0, 0.5]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let f = (1.0 - (1.0 - 2.0 * params.disagreement).sqrt()) / 2.0;
    let pi = labels.iter().filter(|&&l| l).count() as f64 / labels.len().max(1) as f64;
    let q = if pi == 0.0 || pi == 1.0 || params.rho == 0.0 {
        if params.rho == 0.0 { 0.0 } else { 1.0 }
    } else if mixture_rho(1.0, pi, f) <= params.rho {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mixture_rho(mid, pi, f) < params.rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut scores = Vec::new();
    let mut perceived = vec![Vec::with_capacity(labels.len()); params.n_analysts];
    let scored: Vec<bool> = labels.iter().map(|_| rng.gen_bool(params.coverage)).collect();
    for (a, seen) in perceived.iter_mut().enumerate() {
        for (i, &y) in labels.iter().enumerate() {
            let p = y ^ rng.gen_bool(f);
            seen.push(p);
            let s = if rng.gen_bool(q) {
                if p { 1.0 } else { 0.0 }
            } else {
                SCORE_LEVELS[rng.gen_range(0..SCORE_LEVELS.len())]
            };
            if scored[i] {
                scores.push(HumanScore {
                    event_id: event_ids[i].clone(),
                    analyst_id: format!("analyst{a}"),
                    score: s,
                });
            }
        }
    }
    Ok(SimulatedScores {
        scores,
        perceived,
        commitment: q,
        flip_prob: f,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HkBenchParams {
    pub n_events: usize,
    /// Events that receive an analyst score.
    pub n_scored: usize,
    pub rho: f64,
    pub prevalence: f64,
    /// Class separation of each machine feature, in noise standard
    /// deviations.
    pub feature_separation: f64,
    pub seed: u64,
}

impl Default for HkBenchParams {
    fn default() -> Self {
        HkBenchParams {
            n_events: 5000,
            n_scored: 2900,
            rho: 0.8,
            prevalence: 0.3,
            feature_separation: 0.35,
            seed: 2016,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HkBenchData {
    pub event_ids: Vec<String>,
    pub features: Array2<f64>,
    pub labels: Vec<bool>,
    pub scores: Vec<HumanScore>,
}

/// Candidate events with six machine features (the columns of
/// [`classify::MACHINE_FEATURES`]) whose class means differ by
/// `feature_separation` noise s.d., plus one analyst's scores on a random
/// `n_scored` subset.
pub fn hk_benchmark_data(p: &HkBenchParams) -> Result<HkBenchData, SynthError> {
    if p.n_scored > p.n_events || !(0.0..1.0).contains(&p.prevalence) {
        return Err(SynthError::InvalidScene("n_scored must not exceed n_events; prevalence in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let labels: Vec<bool> = (0..p.n_events).map(|_| rng.gen_bool(p.prevalence)).collect();
    let event_ids: Vec<String> = (0..p.n_events).map(|i| format!("hk:{i}")).collect();
    let d = p.feature_separation;
    let mut features = Array2::zeros((p.n_events, classify::MACHINE_FEATURES.len()));
    for (i, &y) in labels.iter().enumerate() {
        let shift = if y { d } else { 0.0 };
        let mut z = || shift + rng.sample::<f64, _>(StandardNormal);
        let duration = (0.9 + 0.2 * z()).max(0.05);
        let bandwidth = (90.0 + 25.0 * z()).max(5.0);
        let f_lo = (110.0 - 20.0 * z()).max(10.0);
        let score = (0.5 + 0.15 * z()).clamp(0.0, 1.0);
        let extra = z();
        features.row_mut(i).assign(&Array1::from(vec![
            duration,
            bandwidth,
            f_lo,
            f_lo + bandwidth,
            score,
            duration.ln() + 0.1 * extra,
        ]));
    }
    let mut order: Vec<usize> = (0..p.n_events).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let chosen: std::collections::HashSet<usize> = order[..p.n_scored].iter().copied().collect();
    let sim = simulate_scores(
        &event_ids,
        &labels,
        &ScoreSimParams {
            rho: p.rho,
            disagreement: 0.0,
            n_analysts: 1,
            coverage: 1.0,
            seed: p.seed.wrapping_add(1),
        },
    )?;
    let scores = sim
        .scores
        .into_iter()
        .filter(|s| {
            let i: usize = s.event_id[3..].parse().expect("hk:<index>");
            chosen.contains(&i)
        })
        .collect();
    Ok(HkBenchData {
        event_ids,
        features,
        labels,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HkBenchOutcome {
    pub target_fpr: f64,
    pub tpr_machine: f64,
    pub tpr_hk: f64,
    pub auc_machine: f64,
    pub auc_hk: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_scored: usize,
}

/// Trains a machine-only network and an HK network on even-indexed events
/// and compares their TPR at `target_fpr` on the odd-indexed ones.
pub fn run_hk_benchmark(p: &HkBenchParams, target_fpr: f64) -> Result<HkBenchOutcome, Box<dyn std::error::Error + Send + Sync>> {
    let data = hk_benchmark_data(p)?;
    let augmented = classify::hk_augment(data.features.view(), &data.event_ids, &data.scores)?;
    let train: Vec<usize> = (0..p.n_events).step_by(2).collect();
    let test: Vec<usize> = (1..p.n_events).step_by(2).collect();
    let y_train = Array1::from_iter(train.iter().map(|&i| if data.labels[i] { 1.0 } else { 0.0 }));
    let test_labels: Vec<bool> = test.iter().map(|&i| data.labels[i]).collect();
    let evaluate = |x: &Array2<f64>| -> Result<(f64, f64), Box<dyn std::error::Error + Send + Sync>> {
        let hyper = TrainParams {
            layer_sizes: vec![x.ncols(), 8, 1],
            learning_rate: 0.5,
            epochs: 150,
            batch: 50,
            seed: p.seed,
            standardize: true,
        };
        let xt = x.select(ndarray::Axis(0), &train);
        let model = classify::mlp_train(xt.view(), y_train.view(), &hyper)?.model;
        let scores = model.predict_batch(x.select(ndarray::Axis(0), &test).view())?;
        let c = curve(scores.as_slice().expect("contiguous"), &test_labels, CurveKind::Roc)?;
        Ok((tpr_at_fpr(&c, target_fpr), c.auc.expect("roc has auc")))
    };
    let (tpr_machine, auc_machine) = evaluate(&data.features)?;
    let (tpr_hk, auc_hk) = evaluate(&augmented)?;
    Ok(HkBenchOutcome {
        target_fpr,
        tpr_machine,
        tpr_hk,
        auc_machine,
        auc_hk,
        n_train: train.len(),
        n_test: test.len(),
        n_scored: data.scores.len(),
    })
}
