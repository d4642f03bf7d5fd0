//! Load/query timing across backends on a seeded dummy dataset.
//!
//! Each backend is written once, then timed over five repetitions of a full
//! load and of a fixed three-query suite; the median is reported. Every query
//! opens the store from disk, so non-indexed backends pay their full decode
//! cost per query. Absolute times depend on the host; only the ordering is
//! meaningful. File-cache state is not controlled.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{store_load, store_query, store_write, Backend, EventRecord, Query, StoreError};
use crate::time::UtcMillis;

pub const MIN_BENCH_EVENTS: usize = 1000;
const RUNS: usize = 5;
/// 2013-01-01T00:00:00Z
const BENCH_EPOCH_MS: i64 = 1_356_998_400_000;
const DAY_MS: i64 = 86_400_000;
const SPAN_DAYS: i64 = 30;
/// Expected query-time ordering, fastest first.
pub const EXPECTED_ORDER: [Backend; 4] = [Backend::Indexed, Backend::Array, Backend::Flat, Backend::Xml];

const TAGS: [&str; 5] = ["right whale", "minke", "humpback", "fin", "airgun"];
const DETECTORS: [&str; 4] = ["type1", "type2", "template", "hog_ann"];

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("benchmark needs at least {MIN_BENCH_EVENTS} events, got {0}")]
    TooFewEvents(usize),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("backend {0} returned different query results")]
    Inconsistent(Backend),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendTiming {
    pub backend: Backend,
    pub load_s: f64,
    pub query_s: f64,
    pub extrapolated_load_s: f64,
    pub extrapolated_query_s: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub n_events: usize,
    pub seed: u64,
    pub timings: Vec<BackendTiming>,
    /// Backends sorted by measured query time, fastest first.
    pub query_order: Vec<Backend>,
    pub verdict: bool,
}

impl BenchReport {
    /// Tab-separated table with one row per backend.
    pub fn to_table(&self) -> String {
        let mut s = String::from("backend\tload_s\tquery_s\tload_s_x10\tquery_s_x10\n");
        for t in &self.timings {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                t.backend, t.load_s, t.query_s, t.extrapolated_load_s, t.extrapolated_query_s
            ));
        }
        let order: Vec<_> = self.query_order.iter().map(|b| b.name()).collect();
        s.push_str(&format!(
            "# query order (fastest first): {}; expected {}: {}\n",
            order.join(" < "),
            EXPECTED_ORDER.map(|b| b.name()).join(" < "),
            if self.verdict { "REPRODUCED" } else { "NOT REPRODUCED" }
        ));
        s
    }
}

/// Seeded dummy events spread over 30 days, sorted by begin time.
pub fn dummy_events(n: usize, seed: u64) -> Vec<EventRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<EventRecord> = (0..n)
        .map(|_| {
            let begin = BENCH_EPOCH_MS + rng.gen_range(0..SPAN_DAYS * DAY_MS);
            let dur = rng.gen_range(500..3000);
            let f_lo = (rng.gen_range(50.0..500.0_f64) * 100.0).round() / 100.0;
            let bw = (rng.gen_range(20.0..300.0_f64) * 100.0).round() / 100.0;
            EventRecord {
                event_id: String::new(),
                run_id: "bench".into(),
                channel_id: format!("CH{:02}", rng.gen_range(0..8)),
                begin: UtcMillis(begin),
                end: UtcMillis(begin + dur),
                f_lo,
                f_hi: f_lo + bw,
                score: rng.gen_range(0..=1_000_000) as f64 / 1e6,
                detector_id: DETECTORS[rng.gen_range(0..DETECTORS.len())].into(),
                tag: TAGS[rng.gen_range(0..TAGS.len())].into(),
            }
            .canonical()
        })
        .collect();
    super::sort_canonical(&mut events);
    for (i, e) in events.iter_mut().enumerate() {
        e.event_id = format!("bench:{i}");
    }
    events
}

/// The fixed query suite: a one-hour window, a top-score cut, and a one-day
/// window restricted to one tag.
pub fn query_suite() -> [Query; 3] {
    [
        Query {
            time_range: Some((UtcMillis(BENCH_EPOCH_MS + 10 * DAY_MS), UtcMillis(BENCH_EPOCH_MS + 10 * DAY_MS + 3_600_000))),
            ..Query::default()
        },
        Query {
            min_score: Some(0.999),
            ..Query::default()
        },
        Query {
            time_range: Some((UtcMillis(BENCH_EPOCH_MS + 20 * DAY_MS), UtcMillis(BENCH_EPOCH_MS + 21 * DAY_MS))),
            tag: Some("minke".into()),
            ..Query::default()
        },
    ]
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Runs the benchmark with stores written under `dir`.
pub fn store_benchmark(dir: &Path, n_events: usize, seed: u64) -> Result<BenchReport, BenchError> {
    if n_events < MIN_BENCH_EVENTS {
        return Err(BenchError::TooFewEvents(n_events));
    }
    let events = dummy_events(n_events, seed);
    let suite = query_suite();
    let mut timings = Vec::new();
    let mut reference: Option<Vec<Vec<EventRecord>>> = None;
    for backend in Backend::ALL {
        let path = dir.join(format!("bench.{}", backend.extension()));
        store_write(backend, &path, &events)?;

        let mut loads = Vec::with_capacity(RUNS);
        let mut queries = Vec::with_capacity(RUNS);
        let mut results = Vec::new();
        for _ in 0..RUNS {
            let t = Instant::now();
            let loaded = store_load(backend, &path)?;
            loads.push(t.elapsed().as_secs_f64());
            debug_assert_eq!(loaded.len(), n_events);

            let t = Instant::now();
            results = suite
                .iter()
                .map(|q| store_query(backend, &path, q))
                .collect::<Result<Vec<_>, _>>()?;
            queries.push(t.elapsed().as_secs_f64());
        }
        match &reference {
            None => reference = Some(results),
            Some(r) if *r != results => return Err(BenchError::Inconsistent(backend)),
            Some(_) => {}
        }
        let (load_s, query_s) = (median(loads), median(queries));
        timings.push(BackendTiming {
            backend,
            load_s,
            query_s,
            extrapolated_load_s: 10.0 * load_s,
            extrapolated_query_s: 10.0 * query_s,
        });
    }
    let mut order: Vec<_> = timings.iter().map(|t| (t.query_s, t.backend)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let query_order: Vec<Backend> = order.into_iter().map(|(_, b)| b).collect();
    let verdict = query_order == EXPECTED_ORDER;
    Ok(BenchReport {
        n_events,
        seed,
        timings,
        query_order,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_events() {
        assert_eq!(dummy_events(2000, 7), dummy_events(2000, 7));
        assert_ne!(dummy_events(2000, 7), dummy_events(2000, 8));
    }

    #[test]
    fn dummy_events_are_valid() {
        for e in dummy_events(1000, 1) {
            e.validate().unwrap();
            assert_eq!(e.clone().canonical(), e);
        }
    }

    #[test]
    fn too_few_events_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(store_benchmark(dir.path(), 999, 1), Err(BenchError::TooFewEvents(999))));
    }

    #[test]
    fn small_benchmark_extrapolates_linearly() {
        let dir = tempfile::tempdir().unwrap();
        let r = store_benchmark(dir.path(), 2000, 3).unwrap();
        assert_eq!(r.timings.len(), 4);
        for t in &r.timings {
            assert!(t.load_s > 0.0 && t.query_s > 0.0);
            assert_eq!(t.extrapolated_load_s, 10.0 * t.load_s);
            assert_eq!(t.extrapolated_query_s, 10.0 * t.query_s);
        }
    }
}
