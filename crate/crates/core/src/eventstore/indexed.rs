//! Single-file indexed store.
//!
//! ```text
//! header      magic "ADAIDX1\0", n_records u64, n_pages u64,
//!             dir_offset u64, score_offset u64, page_records u32, 0u32
//! pages       records sorted by begin time, PAGE_RECORDS per page
//! directory   per page: first_begin i64, last_begin i64, offset u64, len u32, count u32
//! score index per record: score f64, page u32, slot u32, sorted by score
//! ```
//!
//! Queries binary-search the directory or the score index with positioned
//! reads and decode only the pages that can hold matches.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::array::{decode_record, encode_record, Cursor};
use super::{sort_canonical, Backend, EventRecord, Query, QueryStats, StoreError};

pub const PAGE_RECORDS: usize = 64;

const MAGIC: &[u8; 8] = b"ADAIDX1\0";
const HEADER_LEN: u64 = 48;
const DIR_ENTRY: u64 = 32;
const SCORE_ENTRY: u64 = 16;

pub fn write(path: &Path, events: &[EventRecord]) -> Result<(), StoreError> {
    let mut sorted = events.to_vec();
    sort_canonical(&mut sorted);

    let mut pages = Vec::new();
    let mut dir = Vec::new();
    let mut score_idx: Vec<(f64, u32, u32)> = Vec::with_capacity(sorted.len());
    for (p, chunk) in sorted.chunks(PAGE_RECORDS).enumerate() {
        let offset = HEADER_LEN + pages.len() as u64;
        let start = pages.len();
        for (slot, e) in chunk.iter().enumerate() {
            encode_record(&mut pages, e);
            score_idx.push((e.score, p as u32, slot as u32));
        }
        dir.extend_from_slice(&chunk[0].begin.0.to_le_bytes());
        dir.extend_from_slice(&chunk[chunk.len() - 1].begin.0.to_le_bytes());
        dir.extend_from_slice(&offset.to_le_bytes());
        dir.extend_from_slice(&((pages.len() - start) as u32).to_le_bytes());
        dir.extend_from_slice(&(chunk.len() as u32).to_le_bytes());
    }
    score_idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let n_pages = sorted.len().div_ceil(PAGE_RECORDS) as u64;
    let dir_offset = HEADER_LEN + pages.len() as u64;
    let score_offset = dir_offset + dir.len() as u64;

    let file = File::create(path).map_err(|e| StoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| {
        w.write_all(MAGIC)?;
        w.write_all(&(sorted.len() as u64).to_le_bytes())?;
        w.write_all(&n_pages.to_le_bytes())?;
        w.write_all(&dir_offset.to_le_bytes())?;
        w.write_all(&score_offset.to_le_bytes())?;
        w.write_all(&(PAGE_RECORDS as u32).to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        w.write_all(&pages)?;
        w.write_all(&dir)?;
        for (s, p, slot) in &score_idx {
            w.write_all(&s.to_le_bytes())?;
            w.write_all(&p.to_le_bytes())?;
            w.write_all(&slot.to_le_bytes())?;
        }
        w.flush()
    })();
    res.map_err(|e| StoreError::io(path, e))
}

struct DirEntry {
    first_begin: i64,
    last_begin: i64,
    offset: u64,
    len: u32,
    count: u32,
}

struct Reader<'p> {
    path: &'p Path,
    file: File,
    n_records: u64,
    n_pages: u64,
    dir_offset: u64,
    score_offset: u64,
    stats: QueryStats,
}

fn corrupt(detail: impl Into<String>) -> StoreError {
    StoreError::format(Backend::Indexed, detail)
}

impl<'p> Reader<'p> {
    fn open(path: &'p Path) -> Result<Self, StoreError> {
        let mut file = File::open(path).map_err(|e| StoreError::io(path, e))?;
        let file_len = file.metadata().map_err(|e| StoreError::io(path, e))?.len();
        let mut h = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut h).map_err(|_| corrupt("short header"))?;
        let mut c = Cursor::new(&h);
        if c.take(8) != Some(MAGIC.as_slice()) {
            return Err(corrupt("bad magic"));
        }
        let n_records = c.u64().unwrap();
        let n_pages = c.u64().unwrap();
        let dir_offset = c.u64().unwrap();
        let score_offset = c.u64().unwrap();
        let page_records = c.u32().unwrap() as u64;
        let expected_len = n_pages
            .checked_mul(DIR_ENTRY)
            .zip(n_records.checked_mul(SCORE_ENTRY))
            .and_then(|(d, s)| score_offset.checked_add(s).map(|end| (d, end)));
        match expected_len {
            Some((dir_len, end))
                if page_records > 0
                    && n_pages == n_records.div_ceil(page_records)
                    && dir_offset >= HEADER_LEN
                    && dir_offset + dir_len == score_offset
                    && end == file_len => {}
            _ => return Err(corrupt("inconsistent header")),
        }
        Ok(Reader {
            path,
            file,
            n_records,
            n_pages,
            dir_offset,
            score_offset,
            stats: QueryStats::default(),
        })
    }

    fn read_at(&mut self, offset: u64, buf: &mut [u8]) -> Result<(), StoreError> {
        self.file
            .seek(SeekFrom::Start(offset))
            .and_then(|_| self.file.read_exact(buf))
            .map_err(|e| StoreError::io(self.path, e))
    }

    fn dir_entry(&mut self, page: u64) -> Result<DirEntry, StoreError> {
        let mut b = [0u8; DIR_ENTRY as usize];
        self.read_at(self.dir_offset + page * DIR_ENTRY, &mut b)?;
        self.stats.index_probes += 1;
        let mut c = Cursor::new(&b);
        Ok(DirEntry {
            first_begin: c.i64().unwrap(),
            last_begin: c.i64().unwrap(),
            offset: c.u64().unwrap(),
            len: c.u32().unwrap(),
            count: c.u32().unwrap(),
        })
    }

    fn page(&mut self, entry: &DirEntry) -> Result<Vec<EventRecord>, StoreError> {
        if entry.offset < HEADER_LEN || entry.offset + entry.len as u64 > self.dir_offset {
            return Err(corrupt("page outside data section"));
        }
        let mut buf = vec![0u8; entry.len as usize];
        self.read_at(entry.offset, &mut buf)?;
        let mut c = Cursor::new(&buf);
        let mut out = Vec::with_capacity(entry.count as usize);
        for _ in 0..entry.count {
            out.push(decode_record(&mut c).ok_or_else(|| corrupt("malformed record"))?);
        }
        if !c.is_empty() {
            return Err(corrupt("trailing bytes in page"));
        }
        self.stats.records_read += out.len();
        Ok(out)
    }

    fn score_entry(&mut self, i: u64) -> Result<(f64, u32, u32), StoreError> {
        let mut b = [0u8; SCORE_ENTRY as usize];
        self.read_at(self.score_offset + i * SCORE_ENTRY, &mut b)?;
        self.stats.index_probes += 1;
        let mut c = Cursor::new(&b);
        Ok((c.f64().unwrap(), c.u32().unwrap(), c.u32().unwrap()))
    }

    /// First page whose last begin time is at or after `from`.
    fn first_page_from(&mut self, from: i64) -> Result<u64, StoreError> {
        let (mut lo, mut hi) = (0u64, self.n_pages);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.dir_entry(mid)?.last_begin < from {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    fn by_time(&mut self, from: i64, to: i64, q: &Query) -> Result<Vec<EventRecord>, StoreError> {
        let mut out = Vec::new();
        let mut p = self.first_page_from(from)?;
        while p < self.n_pages {
            let entry = self.dir_entry(p)?;
            if entry.first_begin >= to {
                break;
            }
            out.extend(self.page(&entry)?.into_iter().filter(|e| q.matches(e)));
            p += 1;
        }
        Ok(out)
    }

    fn by_score(&mut self, min: f64, q: &Query) -> Result<Vec<EventRecord>, StoreError> {
        let (mut lo, mut hi) = (0u64, self.n_records);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.score_entry(mid)?.0 < min {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let k = (self.n_records - lo) as usize;
        let mut buf = vec![0u8; k * SCORE_ENTRY as usize];
        self.read_at(self.score_offset + lo * SCORE_ENTRY, &mut buf)?;
        self.stats.index_probes += k;
        let mut c = Cursor::new(&buf);
        let mut wanted: Vec<(u32, u32)> = (0..k)
            .map(|_| {
                c.f64();
                (c.u32().unwrap(), c.u32().unwrap())
            })
            .collect();
        wanted.sort_unstable();
        let mut out = Vec::new();
        let mut i = 0;
        while i < wanted.len() {
            let page_no = wanted[i].0;
            if page_no as u64 >= self.n_pages {
                return Err(corrupt("score index points past last page"));
            }
            let entry = self.dir_entry(page_no as u64)?;
            let records = self.page(&entry)?;
            while i < wanted.len() && wanted[i].0 == page_no {
                let e = records
                    .get(wanted[i].1 as usize)
                    .ok_or_else(|| corrupt("score index slot out of range"))?;
                if q.matches(e) {
                    out.push(e.clone());
                }
                i += 1;
            }
        }
        Ok(out)
    }

    fn scan(&mut self, q: &Query) -> Result<Vec<EventRecord>, StoreError> {
        let mut out = Vec::with_capacity(self.n_records as usize);
        for p in 0..self.n_pages {
            let entry = self.dir_entry(p)?;
            out.extend(self.page(&entry)?.into_iter().filter(|e| q.matches(e)));
        }
        Ok(out)
    }
}

pub fn read_all(path: &Path) -> Result<Vec<EventRecord>, StoreError> {
    Reader::open(path)?.scan(&Query::default())
}

pub fn query(path: &Path, q: &Query) -> Result<(Vec<EventRecord>, QueryStats), StoreError> {
    let mut r = Reader::open(path)?;
    let hits = if let Some((from, to)) = q.time_range {
        if from >= to {
            Vec::new()
        } else {
            r.by_time(from.0, to.0, q)?
        }
    } else if let Some(min) = q.min_score {
        r.by_score(min, q)?
    } else {
        r.scan(q)?
    };
    Ok((hits, r.stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventstore::testutil::event;
    use crate::time::UtcMillis;

    fn store_of(n: i64) -> (tempfile::TempDir, std::path::PathBuf, Vec<EventRecord>) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.idx");
        let events: Vec<_> = (0..n).map(|i| event(i, ((i * 37) % 1000) as f64 / 1000.0, "t")).collect();
        write(&p, &events).unwrap();
        (dir, p, events)
    }

    #[test]
    fn time_range_reads_few_pages() {
        let (_d, p, events) = store_of(10_000);
        let q = Query {
            time_range: Some((events[5000].begin, events[5010].begin)),
            ..Query::default()
        };
        let (hits, stats) = query(&p, &q).unwrap();
        assert_eq!(hits.len(), 10);
        assert!(stats.records_read <= 3 * PAGE_RECORDS, "{stats:?}");
    }

    #[test]
    fn score_index_matches_scan() {
        let (_d, p, events) = store_of(1000);
        let q = Query {
            min_score: Some(0.99),
            ..Query::default()
        };
        let (mut hits, _) = query(&p, &q).unwrap();
        sort_canonical(&mut hits);
        let expected: Vec<_> = events.iter().filter(|e| q.matches(e)).cloned().collect();
        assert_eq!(hits, expected);
    }

    #[test]
    fn inverted_range_is_empty() {
        let (_d, p, _) = store_of(100);
        let q = Query {
            time_range: Some((UtcMillis(10), UtcMillis(5))),
            ..Query::default()
        };
        assert!(query(&p, &q).unwrap().0.is_empty());
    }

    #[test]
    fn truncated_file_rejected() {
        let (_d, p, _) = store_of(100);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_all(&p), Err(StoreError::Format { .. })));
    }
}
