use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use quick_xml::escape::escape;
use quick_xml::events::Event;
use quick_xml::Reader;

use super::{Backend, EventRecord, StoreError};
use crate::time::UtcMillis;

const FIELDS: [&str; 9] = [
    "run_id", "channel", "begin", "end", "low_hz", "high_hz", "score", "detector", "tag",
];

pub fn write(path: &Path, events: &[EventRecord]) -> Result<(), StoreError> {
    let file = File::create(path).map_err(|e| StoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| {
        writeln!(w, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>")?;
        writeln!(w, "<events>")?;
        for e in events {
            writeln!(
                w,
                "  <event id=\"{}\"><run_id>{}</run_id><channel>{}</channel><begin>{}</begin><end>{}</end>\
                 <low_hz>{:.6}</low_hz><high_hz>{:.6}</high_hz><score>{:.6}</score>\
                 <detector>{}</detector><tag>{}</tag></event>",
                escape(e.event_id.as_str()),
                escape(e.run_id.as_str()),
                escape(e.channel_id.as_str()),
                e.begin.to_iso(),
                e.end.to_iso(),
                e.f_lo,
                e.f_hi,
                e.score,
                escape(e.detector_id.as_str()),
                escape(e.tag.as_str()),
            )?;
        }
        writeln!(w, "</events>")?;
        w.flush()
    })();
    res.map_err(|e| StoreError::io(path, e))
}

#[derive(Default)]
struct Partial {
    id: Option<String>,
    fields: [Option<String>; 9],
}

impl Partial {
    fn finish(self) -> Result<EventRecord, String> {
        let id = self.id.ok_or("event without id attribute")?;
        let [run_id, channel, begin, end, lo, hi, score, detector, tag] = self.fields;
        let need = |v: Option<String>, name: &str| v.ok_or_else(|| format!("event {id}: missing <{name}>"));
        let time = |s: String| UtcMillis::parse_iso(&s).map_err(|e| e.to_string());
        let num = |s: String| s.parse::<f64>().map_err(|_| format!("bad number `{s}`"));
        Ok(EventRecord {
            run_id: need(run_id, "run_id")?,
            channel_id: need(channel, "channel")?,
            begin: time(need(begin, "begin")?)?,
            end: time(need(end, "end")?)?,
            f_lo: num(need(lo, "low_hz")?)?,
            f_hi: num(need(hi, "high_hz")?)?,
            score: num(need(score, "score")?)?,
            detector_id: need(detector, "detector")?,
            tag: tag.unwrap_or_default(),
            event_id: id,
        })
    }
}

pub fn parse(text: &str) -> Result<Vec<EventRecord>, StoreError> {
    let bad = |d: String| StoreError::format(Backend::Xml, d);
    let mut reader = Reader::from_str(text);
    let mut out = Vec::new();
    let mut seen_root = false;
    let mut current: Option<Partial> = None;
    let mut field: Option<usize> = None;
    loop {
        match reader.read_event().map_err(|e| bad(e.to_string()))? {
            Event::Start(s) => match s.name().as_ref() {
                b"events" if !seen_root => seen_root = true,
                b"event" if seen_root && current.is_none() => {
                    let mut p = Partial::default();
                    for a in s.attributes() {
                        let a = a.map_err(|e| bad(e.to_string()))?;
                        if a.key.as_ref() == b"id" {
                            p.id = Some(a.unescape_value().map_err(|e| bad(e.to_string()))?.into_owned());
                        }
                    }
                    current = Some(p);
                }
                name if current.is_some() => {
                    let idx = FIELDS
                        .iter()
                        .position(|f| f.as_bytes() == name)
                        .ok_or_else(|| bad(format!("unexpected element <{}>", String::from_utf8_lossy(name))))?;
                    field = Some(idx);
                }
                name => return Err(bad(format!("unexpected element <{}>", String::from_utf8_lossy(name)))),
            },
            Event::Text(t) => {
                if let (Some(p), Some(i)) = (current.as_mut(), field) {
                    p.fields[i] = Some(t.unescape().map_err(|e| bad(e.to_string()))?.into_owned());
                } else if !t.iter().all(u8::is_ascii_whitespace) {
                    return Err(bad("text outside an event field".into()));
                }
            }
            Event::End(e) => match e.name().as_ref() {
                b"event" => {
                    let p = current.take().ok_or_else(|| bad("unbalanced </event>".into()))?;
                    out.push(p.finish().map_err(bad)?);
                }
                b"events" => {
                    if current.is_some() {
                        return Err(bad("unterminated <event>".into()));
                    }
                    return Ok(out);
                }
                _ => {
                    if let (Some(p), Some(i)) = (current.as_mut(), field.take()) {
                        // <tag></tag> has no text event
                        p.fields[i].get_or_insert_with(String::new);
                    }
                }
            },
            Event::Empty(e) => {
                if let Some(p) = current.as_mut() {
                    if let Some(i) = FIELDS.iter().position(|f| f.as_bytes() == e.name().as_ref()) {
                        p.fields[i] = Some(String::new());
                    }
                } else if e.name().as_ref() == b"events" && !seen_root {
                    return Ok(out);
                }
            }
            Event::Eof => return Err(bad("unexpected end of document".into())),
            _ => {}
        }
    }
}

pub fn read(path: &Path) -> Result<Vec<EventRecord>, StoreError> {
    let bytes = std::fs::read(path).map_err(|e| StoreError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| StoreError::format(Backend::Xml, "not UTF-8"))?;
    parse(&text)
}
