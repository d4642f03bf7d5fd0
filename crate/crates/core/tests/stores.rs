use adamine::eventstore::{sort_canonical, store_load, store_query, store_write, Backend, EventRecord, Query};
use adamine::time::UtcMillis;
use proptest::prelude::*;

fn arb_event() -> impl Strategy<Value = EventRecord> {
    (
        0i64..1_000_000,
        1i64..60_000,
        0.0f64..1000.0,
        1.0f64..500.0,
        0.0f64..=1.0,
        prop::sample::select(vec!["upcall", "minke", ""]),
        prop::sample::select(vec!["d1", "d2"]),
        0u32..1000,
    )
        .prop_map(|(begin, len, lo, bw, score, tag, det, id)| {
            EventRecord {
                event_id: format!("run:{id}"),
                run_id: "run".into(),
                channel_id: "CH01".into(),
                begin: UtcMillis(begin),
                end: UtcMillis(begin + len),
                f_lo: lo,
                f_hi: lo + bw,
                score,
                detector_id: det.into(),
                tag: tag.into(),
            }
            .canonical()
        })
}

fn arb_query() -> impl Strategy<Value = Query> {
    (
        prop::option::of((0i64..1_000_000, 0i64..500_000)),
        prop::option::of(0.0f64..1.0),
        prop::option::of(prop::sample::select(vec!["upcall", "minke", "other"])),
        prop::option::of(prop::sample::select(vec!["d1", "d2"])),
    )
        .prop_map(|(range, min_score, tag, det)| Query {
            time_range: range.map(|(a, w)| (UtcMillis(a), UtcMillis(a + w))),
            min_score,
            tag: tag.map(String::from),
            detector: det.map(String::from),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_backend_answers_queries_like_a_filter(
        events in prop::collection::vec(arb_event(), 0..200),
        queries in prop::collection::vec(arb_query(), 1..5),
    ) {
        let dir = tempfile::tempdir().unwrap();
        for backend in Backend::ALL {
            let path = dir.path().join(format!("s.{}", backend.extension()));
            store_write(backend, &path, &events).unwrap();
            let mut all = store_load(backend, &path).unwrap();
            sort_canonical(&mut all);
            let mut expected_all = events.clone();
            sort_canonical(&mut expected_all);
            prop_assert_eq!(&all, &expected_all);
            for q in &queries {
                let mut got = store_query(backend, &path, q).unwrap();
                sort_canonical(&mut got);
                let want: Vec<EventRecord> = expected_all.iter().filter(|e| q.matches(e)).cloned().collect();
                prop_assert_eq!(got, want, "{} {:?}", backend, q);
            }
        }
    }
}
