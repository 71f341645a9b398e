//! Binary PPM (P6) images and PGM (P5) label maps.
//!
//! Both use the plain netpbm header `P6\n<width> <height>\n255\n` (or `P5`)
//! followed by row-major bytes. Image channels are stored as
//! `round(clamp(v, 0, 1) · 255)`; label maps store one class index per
//! byte, so the header maxval is always 255 and the class count travels
//! separately (see [`crate::dataset`]).

use std::io::{BufRead, Read, Write};

use cace_core::{FeatureMap, LabelMap};

#[derive(Debug, thiserror::Error)]
pub enum PnmError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("expected {expected} pixel bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Core(#[from] cace_core::Error),
}

pub type Result<T> = std::result::Result<T, PnmError>;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_ppm(mut w: impl Write, image: &FeatureMap) -> Result<()> {
    if image.channels() != 3 {
        return Err(PnmError::Header(format!("PPM needs 3 channels, image has {}", image.channels())));
    }
    write!(w, "P6\n{} {}\n255\n", image.width(), image.height())?;
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_byte(v)).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_pgm(mut w: impl Write, labels: &LabelMap) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", labels.width(), labels.height())?;
    w.write_all(labels.indices())?;
    Ok(())
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c as char);
    }
    if tok.is_empty() {
        return Err(PnmError::Header("unexpected end of header".into()));
    }
    Ok(tok)
}

fn number(r: &mut impl BufRead, what: &str) -> Result<usize> {
    let t = token(r)?;
    t.parse().map_err(|_| PnmError::Header(format!("{what} is not a number: {t:?}")))
}

/// Magic, width, height; the single whitespace byte after maxval has been
/// consumed.
fn header(r: &mut impl BufRead, magic: &str) -> Result<(usize, usize)> {
    let m = token(r)?;
    if m != magic {
        return Err(PnmError::Header(format!("expected {magic}, found {m:?}")));
    }
    let width = number(r, "width")?;
    let height = number(r, "height")?;
    let maxval = number(r, "maxval")?;
    if maxval != 255 {
        return Err(PnmError::Header(format!("only maxval 255 is supported, found {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(PnmError::Header("zero-sized image".into()));
    }
    Ok((width, height))
}

fn body(r: &mut impl Read, expected: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(expected);
    r.take(expected as u64).read_to_end(&mut buf)?;
    if buf.len() != expected {
        return Err(PnmError::Truncated { expected, found: buf.len() });
    }
    Ok(buf)
}

pub fn read_ppm(mut r: impl BufRead) -> Result<FeatureMap> {
    let (w, h) = header(&mut r, "P6")?;
    let bytes = body(&mut r, w * h * 3)?;
    let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(FeatureMap::from_vec(h, w, 3, data)?)
}

pub fn read_pgm(mut r: impl BufRead, classes: usize) -> Result<LabelMap> {
    let (w, h) = header(&mut r, "P5")?;
    let bytes = body(&mut r, w * h)?;
    Ok(LabelMap::from_indices(h, w, classes, bytes)?)
}
