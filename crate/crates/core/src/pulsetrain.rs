//! Repeating-pulse (type-II) detection: pulse picking on band energy and
//! interval-regularity scoring of pulse trains.

use serde::Deserialize;

use crate::dsp::{energy_projection, DspError, ProjectionAxis, Spectrogram};
use crate::segmentation::{BBox, Detection};

#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    pub pulse_times: Vec<f64>,
    pub period: f64,
    pub regularity: f64,
    pub count: usize,
    pub span: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainScore {
    pub period: f64,
    pub regularity: f64,
    pub count: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("a pulse train needs at least 3 pulses, got {0}")]
pub struct InsufficientPulses(pub usize);

/// Frame times of local maxima of `projection` strictly above `threshold`.
/// Maxima closer than `min_gap` seconds are merged into the larger one
/// (the earlier wins a tie). Returned times are increasing.
pub fn detect_pulses(projection: &[f64], frame_hop: f64, t0: f64, threshold: f64, min_gap: f64) -> Vec<f64> {
    let n = projection.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = projection[i];
            v > threshold && (i == 0 || v > projection[i - 1]) && (i + 1 == n || v >= projection[i + 1])
        })
        .collect();
    peaks.sort_by(|&a, &b| projection[b].total_cmp(&projection[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in peaks {
        let t = p as f64 * frame_hop;
        if kept.iter().all(|&k| (k as f64 * frame_hop - t).abs() >= min_gap) {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| t0 + i as f64 * frame_hop).collect()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Median interval and `1 - min(1, CV)` of the intervals, with CV the
/// population standard deviation over the median interval.
pub fn pulse_train_score(pulse_times: &[f64]) -> Result<TrainScore, InsufficientPulses> {
    let count = pulse_times.len();
    if count < 3 {
        return Err(InsufficientPulses(count));
    }
    let intervals: Vec<f64> = pulse_times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = intervals.clone();
    sorted.sort_by(f64::total_cmp);
    let period = median(&sorted);
    let mean = intervals.iter().sum::<f64>() / intervals.len() as f64;
    let var = intervals.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / intervals.len() as f64;
    let regularity = if period > 0.0 {
        1.0 - (var.sqrt() / period).min(1.0)
    } else {
        0.0
    };
    Ok(TrainScore {
        period,
        regularity,
        count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub min_pulses: usize,
    pub min_regularity: f64,
    /// Longest admissible inter-pulse interval, seconds.
    pub max_period: f64,
    /// A pulse continues a train when it lands within this fraction of the
    /// current period from the predicted time.
    pub tolerance: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            min_pulses: 5,
            min_regularity: 0.7,
            max_period: 2.0,
            tolerance: 0.25,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_pulses < 3 {
            return Err(format!("min_pulses must be at least 3, got {}", self.min_pulses));
        }
        if !(0.0..=1.0).contains(&self.min_regularity) {
            return Err(format!("min_regularity must be in [0, 1], got {}", self.min_regularity));
        }
        if !(self.max_period > 0.0) {
            return Err(format!("max_period must be positive, got {}", self.max_period));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 0.5) {
            return Err(format!("tolerance must be in (0, 0.5), got {}", self.tolerance));
        }
        Ok(())
    }
}

/// Nearest unused pulse to `target` within `tol`, searching only strictly
/// after (`forward`) or before `from`.
fn nearest(times: &[f64], used: &[bool], from: f64, target: f64, tol: f64, forward: bool) -> Option<usize> {
    let lo = times.partition_point(|&t| t < target - tol);
    let hi = times.partition_point(|&t| t <= target + tol);
    (lo..hi)
        .filter(|&k| !used[k] && if forward { times[k] > from } else { times[k] < from })
        .min_by(|&a, &b| (times[a] - target).abs().total_cmp(&(times[b] - target).abs()))
}

/// Maximal chain grown from the seed pair `(i, j)` in both directions,
/// predicting each next pulse from the mean interval so far.
fn grow_chain(times: &[f64], used: &[bool], i: usize, j: usize, params: &TrainParams) -> Vec<usize> {
    let mut chain = std::collections::VecDeque::from([i, j]);
    let mean_period = |c: &std::collections::VecDeque<usize>| (times[c[c.len() - 1]] - times[c[0]]) / (c.len() - 1) as f64;
    loop {
        let p = mean_period(&chain);
        let last = times[*chain.back().unwrap()];
        match nearest(times, used, last, last + p, params.tolerance * p, true) {
            Some(k) if times[k] - last <= params.max_period => chain.push_back(k),
            _ => break,
        }
    }
    loop {
        let p = mean_period(&chain);
        let first = times[chain[0]];
        match nearest(times, used, first, first - p, params.tolerance * p, false) {
            Some(k) if first - times[k] <= params.max_period => chain.push_front(k),
            _ => break,
        }
    }
    chain.into()
}

fn is_strict_subset(a: &[usize], b: &[usize]) -> bool {
    if a.len() >= b.len() {
        return false;
    }
    let mut it = b.iter();
    a.iter().all(|x| it.by_ref().any(|y| y == x))
}

/// `c` steps over pulses of the faster chain `o`: `o`'s period is at most
/// two thirds of `c`'s and `o` holds more than half of `c`'s pulses.
fn is_subharmonic_of(c: &Candidate, o: &Candidate) -> bool {
    if 1.5 * o.score.period > c.score.period {
        return false;
    }
    let shared = c.members.iter().filter(|k| o.members.binary_search(k).is_ok()).count();
    2 * shared > c.members.len()
}

struct Candidate {
    members: Vec<usize>,
    score: TrainScore,
    t_first: f64,
}

/// Greedy residual extraction of pulse trains from increasing pulse times.
///
/// Every seed pair closer than `max_period` grows a maximal chain. Among
/// chains meeting `min_pulses` and `min_regularity`, those whose pulses are
/// a strict subset of another qualifying chain, or mostly shared with a
/// qualifying chain at most two thirds their period, are set aside (this removes
/// every-other-pulse sub-harmonics, including ones that picked up a stray
/// noise peak); the most regular of the rest wins, then
/// the longer, then the earlier. Its pulses are removed and the search
/// repeats until nothing qualifies.
pub fn extract_trains(times: &[f64], params: &TrainParams) -> Vec<PulseTrain> {
    let n = times.len();
    let mut used = vec![false; n];
    let mut trains = Vec::new();
    loop {
        let mut candidates: Vec<Candidate> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for i in (0..n).filter(|&i| !used[i]) {
            for j in (i + 1..n).filter(|&j| !used[j]) {
                if times[j] - times[i] > params.max_period {
                    break;
                }
                if times[j] <= times[i] {
                    continue;
                }
                let members = grow_chain(times, &used, i, j, params);
                if members.len() < params.min_pulses || !seen.insert(members.clone()) {
                    continue;
                }
                let t: Vec<f64> = members.iter().map(|&k| times[k]).collect();
                let score = pulse_train_score(&t).expect("chain has at least min_pulses >= 3 pulses");
                if score.regularity >= params.min_regularity {
                    candidates.push(Candidate {
                        t_first: t[0],
                        members,
                        score,
                    });
                }
            }
        }
        candidates.sort_by(|a, b| {
            let ra = (a.score.regularity * 1e9).round();
            let rb = (b.score.regularity * 1e9).round();
            rb.total_cmp(&ra)
                .then(b.score.count.cmp(&a.score.count))
                .then(a.t_first.total_cmp(&b.t_first))
        });
        let best = candidates
            .iter()
            .find(|c| !candidates.iter().any(|o| is_strict_subset(&c.members, &o.members) || is_subharmonic_of(c, o)));
        let Some(best) = best else { break };
        for &k in &best.members {
            used[k] = true;
        }
        let pulse_times: Vec<f64> = best.members.iter().map(|&k| times[k]).collect();
        trains.push(PulseTrain {
            span: (pulse_times[0], pulse_times[pulse_times.len() - 1]),
            period: best.score.period,
            regularity: best.score.regularity,
            count: best.score.count,
            pulse_times,
        });
    }
    trains
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Type2Params {
    /// `[f_lo, f_hi]` in Hz.
    pub band: [f64; 2],
    /// Pulse threshold as a multiple of the projection median.
    pub threshold_factor: f64,
    /// Pulses must also exceed this fraction of the projection maximum.
    pub peak_fraction: f64,
    pub min_gap: f64,
    #[serde(flatten)]
    pub train: TrainParams,
}

impl Default for Type2Params {
    fn default() -> Self {
        Type2Params {
            band: [100.0, 600.0],
            threshold_factor: 8.0,
            peak_fraction: 0.05,
            min_gap: 0.1,
            train: TrainParams::default(),
        }
    }
}

impl Type2Params {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.band[0] >= 0.0 && self.band[0] < self.band[1]) {
            return Err(format!("band [{}, {}] is not ordered", self.band[0], self.band[1]));
        }
        if !(self.threshold_factor > 0.0) || !(0.0..1.0).contains(&self.peak_fraction) {
            return Err("threshold_factor must be positive and peak_fraction in [0, 1)".into());
        }
        if !(self.min_gap > 0.0) {
            return Err(format!("min_gap must be positive, got {}", self.min_gap));
        }
        self.train.validate()
    }
}

/// Pulses in the band's energy projection, grouped into trains. Each train
/// becomes one detection spanning its first to last pulse over the band,
/// scored by its regularity.
pub fn type2_detect(spec: &Spectrogram, params: &Type2Params) -> Result<(Vec<Detection>, Vec<PulseTrain>), DspError> {
    params.validate().map_err(DspError::InvalidArgument)?;
    let band = (params.band[0], params.band[1].min(spec.nyquist()));
    let proj = energy_projection(spec, ProjectionAxis::Time, band)?;
    let mut sorted = proj.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let threshold = (params.threshold_factor * median(&sorted)).max(params.peak_fraction * sorted[sorted.len() - 1]);
    let min_gap = params.min_gap.max(spec.frame_hop);
    let times = detect_pulses(&proj, spec.frame_hop, spec.t0, threshold, min_gap);
    let trains = extract_trains(&times, &params.train);
    let dets = trains
        .iter()
        .map(|t| Detection {
            bbox: BBox {
                t_start: t.span.0,
                t_end: t.span.1,
                f_lo: band.0,
                f_hi: band.1,
            },
            score: t.regularity,
        })
        .collect();
    Ok((dets, trains))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::SampleBlock;
    use crate::dsp::{stft, StftParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn impulses_found() {
        let mut p = vec![0.0; 400];
        for i in [100, 200, 300] {
            p[i] = 5.0;
        }
        assert_eq!(detect_pulses(&p, 0.01, 0.0, 1.0, 0.05), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn below_threshold_is_empty() {
        assert!(detect_pulses(&[0.5; 50], 0.01, 0.0, 1.0, 0.05).is_empty());
    }

    #[test]
    fn close_peaks_merge_to_larger() {
        let mut p = vec![0.0; 100];
        p[40] = 3.0;
        p[45] = 4.0;
        assert_eq!(detect_pulses(&p, 0.01, 0.0, 1.0, 0.1), vec![0.45]);
    }

    #[test]
    fn exact_period_scores_perfectly() {
        let t: Vec<f64> = (0..10).map(|k| k as f64 * 0.5).collect();
        let s = pulse_train_score(&t).unwrap();
        assert_eq!(s.period, 0.5);
        assert_eq!(s.regularity, 1.0);
        assert_eq!(s.count, 10);
        assert_eq!(pulse_train_score(&[0.0, 1.0]), Err(InsufficientPulses(2)));
    }

    #[test]
    fn jittered_train_scores_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let jitter = Normal::new(0.0, 0.05 * 0.5).unwrap();
        let t: Vec<f64> = (0..20).map(|k| k as f64 * 0.5 + jitter.sample(&mut rng)).collect();
        let s = pulse_train_score(&t).unwrap();
        assert!((s.period - 0.5).abs() <= 0.025, "{s:?}");
        assert!((0.8..1.0).contains(&s.regularity), "{s:?}");
    }

    proptest! {
        #[test]
        fn score_translation_and_scaling(
            gaps in proptest::collection::vec(0.05f64..2.0, 2..30),
            shift in -1e3f64..1e3,
            c in 0.1f64..10.0,
        ) {
            let mut t = vec![0.0];
            for g in &gaps {
                t.push(t[t.len() - 1] + g);
            }
            let base = pulse_train_score(&t).unwrap();
            let moved: Vec<f64> = t.iter().map(|x| x + shift).collect();
            let m = pulse_train_score(&moved).unwrap();
            prop_assert!((m.period - base.period).abs() < 1e-9);
            prop_assert!((m.regularity - base.regularity).abs() < 1e-6);
            let scaled: Vec<f64> = t.iter().map(|x| x * c).collect();
            let s = pulse_train_score(&scaled).unwrap();
            prop_assert!((s.period - c * base.period).abs() < 1e-9 * c.max(1.0));
            prop_assert!((s.regularity - base.regularity).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&base.regularity));
        }

        #[test]
        fn extracted_trains_respect_thresholds(
            times in proptest::collection::btree_set(0u32..20_000, 0..60),
        ) {
            let t: Vec<f64> = times.into_iter().map(|ms| ms as f64 / 1000.0).collect();
            let params = TrainParams::default();
            let trains = extract_trains(&t, &params);
            prop_assert!(trains.len() <= t.len() / params.min_pulses);
            let mut all: Vec<f64> = Vec::new();
            for tr in &trains {
                prop_assert!(tr.count >= params.min_pulses);
                prop_assert!(tr.regularity >= params.min_regularity);
                prop_assert!(tr.pulse_times.windows(2).all(|w| w[0] < w[1]));
                all.extend(&tr.pulse_times);
            }
            let n = all.len();
            all.sort_by(f64::total_cmp);
            all.dedup();
            prop_assert_eq!(all.len(), n, "a pulse was used twice");
        }
    }

    fn is_perfect(t: &[f64]) -> bool {
        let d = t[1] - t[0];
        t.windows(2).all(|w| ((w[1] - w[0]) - d).abs() < 1e-9)
    }

    /// All inclusion-maximal perfectly periodic subsets of at least `min`
    /// pulses, found by enumerating every subset.
    fn exhaustive_perfect_trains(t: &[f64], min: usize) -> Vec<Vec<f64>> {
        let n = t.len();
        let mut perfect: Vec<u32> = Vec::new();
        for mask in 0u32..(1 << n) {
            if (mask.count_ones() as usize) < min {
                continue;
            }
            let sub: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| t[i]).collect();
            if is_perfect(&sub) {
                perfect.push(mask);
            }
        }
        let maximal: Vec<u32> = perfect
            .iter()
            .copied()
            .filter(|&m| !perfect.iter().any(|&o| o != m && o & m == m))
            .collect();
        let mut out: Vec<Vec<f64>> = maximal
            .into_iter()
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| t[i]).collect())
            .collect();
        out.sort_by(|a, b| a[0].total_cmp(&b[0]));
        out
    }

    #[test]
    fn interleaved_trains_match_exhaustive_search() {
        let a: Vec<f64> = (0..10).map(|k| 0.1 + 0.4 * k as f64).collect();
        let b: Vec<f64> = (0..5).map(|k| k as f64).collect();
        let mut all: Vec<f64> = a.iter().chain(&b).copied().collect();
        all.sort_by(f64::total_cmp);
        let oracle = exhaustive_perfect_trains(&all, 5);
        let mut expected = vec![a.clone(), b.clone()];
        expected.sort_by(|x, y| x[0].total_cmp(&y[0]));
        assert_eq!(oracle, expected, "fixture must have exactly two maximal periodic subsets");

        let trains = extract_trains(&all, &TrainParams::default());
        assert_eq!(trains.len(), 2);
        let mut got: Vec<Vec<f64>> = trains.iter().map(|t| t.pulse_times.clone()).collect();
        got.sort_by(|x, y| x[0].total_cmp(&y[0]));
        assert_eq!(got, oracle);
    }

    #[test]
    fn stray_peak_does_not_promote_every_other_pulse() {
        // alternate intervals 0.53/0.57 make the full train slightly less
        // regular than its every-other-pulse chain, which a stray peak at
        // 5.4 extends past the end of the train
        let mut t: Vec<f64> = (0..7).map(|k| 1.0 + 0.55 * k as f64 + if k % 2 == 1 { -0.02 } else { 0.0 }).collect();
        t.push(1.94);
        t.push(5.4);
        t.sort_by(f64::total_cmp);
        let trains = extract_trains(&t, &TrainParams::default());
        assert_eq!(trains.len(), 1, "{trains:?}");
        assert_eq!(trains[0].count, 7);
        assert!((trains[0].period - 0.55).abs() < 0.03, "{:?}", trains[0]);
    }

    #[test]
    fn single_pulse_gives_nothing() {
        assert!(extract_trains(&[1.0], &TrainParams::default()).is_empty());
    }

    pub(crate) fn pulse_signal(rate: u32, total: f64, starts: &[f64], freq: f64, len: f64, amp: f64) -> Vec<f64> {
        let n = (total * rate as f64) as usize;
        let mut x = vec![0.0; n];
        for &s in starts {
            let i0 = (s * rate as f64) as usize;
            let m = (len * rate as f64) as usize;
            for i in 0..m {
                if i0 + i < n {
                    let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / m as f64).cos();
                    x[i0 + i] += amp * w * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin();
                }
            }
        }
        x
    }

    fn fine_spec(x: Vec<f64>) -> Spectrogram {
        let block = SampleBlock {
            channel_id: "A".into(),
            start_utc: 0.0,
            sample_rate: 2000,
            samples: x,
        };
        stft(
            &block,
            StftParams {
                window_len: 64,
                hop: 16,
                ..StftParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn train_in_noise_recovered() {
        let starts: Vec<f64> = (0..20).map(|k| 2.0 + 0.4 * k as f64).collect();
        let mut x = pulse_signal(2000, 14.0, &starts, 300.0, 0.05, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.05).unwrap();
        for v in &mut x {
            *v += noise.sample(&mut rng);
        }
        let (dets, trains) = type2_detect(&fine_spec(x), &Type2Params::default()).unwrap();
        assert_eq!(dets.len(), 1, "{trains:?}");
        assert!(trains[0].count.abs_diff(20) <= 1, "{:?}", trains[0]);
        assert!((trains[0].period - 0.4).abs() <= 0.04, "{:?}", trains[0]);
        assert_eq!(dets[0].score, trains[0].regularity);
    }

    #[test]
    fn isolated_pulse_in_silence_gives_nothing() {
        let x = pulse_signal(2000, 5.0, &[2.0], 300.0, 0.05, 0.5);
        let (dets, _) = type2_detect(&fine_spec(x), &Type2Params::default()).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn noise_alone_gives_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..2000 * 30).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let (dets, trains) = type2_detect(&fine_spec(x), &Type2Params::default()).unwrap();
        assert!(dets.is_empty(), "{trains:?}");
    }
}
