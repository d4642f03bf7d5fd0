use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Backend, EventRecord, StoreError};
use crate::time::UtcMillis;

pub const HEADER: &str =
    "event_id\trun_id\tchannel\tbegin_iso8601\tend_iso8601\tlow_hz\thigh_hz\tscore\tdetector\ttag";

pub fn format_row(e: &EventRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
        e.event_id,
        e.run_id,
        e.channel_id,
        e.begin.to_iso(),
        e.end.to_iso(),
        e.f_lo,
        e.f_hi,
        e.score,
        e.detector_id,
        e.tag
    )
}

pub fn write(path: &Path, events: &[EventRecord]) -> Result<(), StoreError> {
    let file = File::create(path).map_err(|e| StoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| {
        writeln!(w, "{HEADER}")?;
        for e in events {
            writeln!(w, "{}", format_row(e))?;
        }
        w.flush()
    })();
    res.map_err(|e| StoreError::io(path, e))
}

fn parse_row(line: &str, lineno: usize) -> Result<EventRecord, StoreError> {
    let bad = |what: &str| StoreError::format(Backend::Flat, format!("line {lineno}: {what}"));
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 10 {
        return Err(bad(&format!("expected 10 fields, found {}", fields.len())));
    }
    let time = |s: &str| UtcMillis::parse_iso(s).map_err(|e| bad(&e.to_string()));
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
    Ok(EventRecord {
        event_id: fields[0].to_string(),
        run_id: fields[1].to_string(),
        channel_id: fields[2].to_string(),
        begin: time(fields[3])?,
        end: time(fields[4])?,
        f_lo: num(fields[5])?,
        f_hi: num(fields[6])?,
        score: num(fields[7])?,
        detector_id: fields[8].to_string(),
        tag: fields[9].to_string(),
    })
}

pub fn parse(text: &str) -> Result<Vec<EventRecord>, StoreError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        _ => return Err(StoreError::format(Backend::Flat, "missing header line")),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| parse_row(l, i + 2))
        .collect()
}

pub fn read(path: &Path) -> Result<Vec<EventRecord>, StoreError> {
    let bytes = std::fs::read(path).map_err(|e| StoreError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| StoreError::format(Backend::Flat, "not UTF-8"))?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventstore::testutil::event;

    #[test]
    fn bit_exact_row_layout() {
        let mut e = event(0, 0.5, "upcall");
        e.f_lo = 101.25;
        assert_eq!(
            format_row(&e),
            "r:0\tr\tA\t2006-01-01T00:00:00.000Z\t2006-01-01T00:00:00.750Z\t101.250000\t200.250000\t0.500000\tupcall\tupcall"
        );
    }

    #[test]
    fn short_row_is_format_error() {
        let text = format!("{HEADER}\na\tb\tc\n");
        assert!(matches!(parse(&text), Err(StoreError::Format { backend: Backend::Flat, .. })));
    }
}
