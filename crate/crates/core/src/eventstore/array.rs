//! Whole-store binary image.
//!
//! Layout (little endian): magic `ADAARR1\n`, `u64` record count, then each
//! record as five length-prefixed UTF-8 strings (`u32` length) followed by
//! `begin`, `end` (`i64` ms) and `f_lo`, `f_hi`, `score` (`f64`).

use std::path::Path;

use super::{Backend, EventRecord, StoreError};
use crate::time::UtcMillis;

const MAGIC: &[u8; 8] = b"ADAARR1\n";

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub(super) fn encode_record(buf: &mut Vec<u8>, e: &EventRecord) {
    put_str(buf, &e.event_id);
    put_str(buf, &e.run_id);
    put_str(buf, &e.channel_id);
    put_str(buf, &e.detector_id);
    put_str(buf, &e.tag);
    buf.extend_from_slice(&e.begin.0.to_le_bytes());
    buf.extend_from_slice(&e.end.0.to_le_bytes());
    buf.extend_from_slice(&e.f_lo.to_le_bytes());
    buf.extend_from_slice(&e.f_hi.to_le_bytes());
    buf.extend_from_slice(&e.score.to_le_bytes());
}

/// Byte cursor over an encoded buffer; every read is bounds checked.
pub(super) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(super) fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub(super) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    pub(super) fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(super) fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(super) fn i64(&mut self) -> Option<i64> {
        self.take(8).map(|b| i64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(super) fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Option<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }

    pub(super) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub(super) fn decode_record(c: &mut Cursor<'_>) -> Option<EventRecord> {
    let event_id = c.string()?;
    let run_id = c.string()?;
    let channel_id = c.string()?;
    let detector_id = c.string()?;
    let tag = c.string()?;
    Some(EventRecord {
        event_id,
        run_id,
        channel_id,
        begin: UtcMillis(c.i64()?),
        end: UtcMillis(c.i64()?),
        f_lo: c.f64()?,
        f_hi: c.f64()?,
        score: c.f64()?,
        detector_id,
        tag,
    })
}

/// Encodes a full array image.
pub fn encode_records(events: &[EventRecord]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + events.len() * 96);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(events.len() as u64).to_le_bytes());
    for e in events {
        encode_record(&mut buf, e);
    }
    buf
}

/// Decodes an image produced by [`encode_records`]; `None` on any corruption.
pub fn decode_records(buf: &[u8]) -> Option<Vec<EventRecord>> {
    let mut c = Cursor::new(buf);
    if c.take(8)? != MAGIC {
        return None;
    }
    let n = c.u64()? as usize;
    // A record needs at least 60 bytes; reject counts the buffer cannot hold.
    if n > buf.len() / 60 + 1 {
        return None;
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(decode_record(&mut c)?);
    }
    c.is_empty().then_some(out)
}

pub fn write(path: &Path, events: &[EventRecord]) -> Result<(), StoreError> {
    std::fs::write(path, encode_records(events)).map_err(|e| StoreError::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<EventRecord>, StoreError> {
    let buf = std::fs::read(path).map_err(|e| StoreError::io(path, e))?;
    decode_records(&buf).ok_or_else(|| StoreError::format(Backend::Array, "truncated or malformed image"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventstore::testutil::event;

    #[test]
    fn truncated_image_rejected() {
        let buf = encode_records(&[event(0, 0.5, "a"), event(1, 0.5, "b")]);
        assert!(decode_records(&buf).is_some());
        assert!(decode_records(&buf[..buf.len() - 1]).is_none());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(decode_records(&extra).is_none());
    }
}
