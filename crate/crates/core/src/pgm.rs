//! Binary portable graymap (P5, 8-bit) files.

use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum PgmError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PGM: {0}")]
    Format(String),
}

pub fn encode(width: usize, height: usize, px: &[u8]) -> Vec<u8> {
    assert_eq!(px.len(), width * height, "pixel count must match dimensions");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(px);
    out
}

pub fn write(path: &Path, width: usize, height: usize, px: &[u8]) -> Result<(), PgmError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(width, height, px))?;
    Ok(())
}

/// Parses a P5 image with maxval 255; returns `(width, height, pixels)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), PgmError> {
    let mut pos = 0;
    let mut token = || -> Result<String, PgmError> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(PgmError::Format("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(PgmError::Format("not a P5 graymap".into()));
    }
    let mut num = |what: &str| -> Result<usize, PgmError> {
        token()?
            .parse()
            .map_err(|_| PgmError::Format(format!("bad {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    if num("maxval")? != 255 {
        return Err(PgmError::Format("only 8-bit graymaps are supported".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let data = bytes
        .get(start..start + width * height)
        .ok_or_else(|| PgmError::Format("truncated raster".into()))?;
    Ok((width, height, data.to_vec()))
}

pub fn read(path: &Path) -> Result<(usize, usize, Vec<u8>), PgmError> {
    decode(&std::fs::read(path)?)
}
