//! Grayscale PGM (`P2` ASCII and `P5` binary).

use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::error::{HarnessError, Result};
use crate::record::write_atomic;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("unsupported format {0:?}; only P2 and P5 are read")]
    UnsupportedFormat(String),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("maxval must be in 1..=65535, got {0}")]
    BadMaxval(u64),
    #[error("pixel data truncated: expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("sample {value} exceeds maxval {maxval}")]
    SampleTooLarge { value: u32, maxval: u32 },
}

/// Header tokenizer that skips whitespace and `#` comments.
struct Tokens<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.data.len() && self.data[self.pos] == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.data.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some(&self.data[start..self.pos])
    }

    fn number(&mut self, what: &str) -> std::result::Result<u64, PgmError> {
        let t = self
            .next()
            .ok_or_else(|| PgmError::BadHeader(format!("missing {what}")))?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::BadHeader(format!("{what} is not a number")))
    }
}

/// Decodes a PGM image into values in `[0, 1]`.
pub fn decode_pgm(data: &[u8]) -> std::result::Result<Array2<f64>, PgmError> {
    let mut tok = Tokens { data, pos: 0 };
    let magic = tok
        .next()
        .ok_or_else(|| PgmError::BadHeader("empty file".into()))?;
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(PgmError::UnsupportedFormat(
                String::from_utf8_lossy(other).into_owned(),
            ))
        }
    };
    let width = tok.number("width")? as usize;
    let height = tok.number("height")? as usize;
    let maxval = tok.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::BadMaxval(maxval));
    }
    let maxval = maxval as u32;
    let n = width * height;
    let mut samples = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = tok.pos + 1;
        let raster = data.get(start..).unwrap_or(&[]);
        let wide = maxval > 255;
        let bytes = if wide { 2 } else { 1 };
        let found = raster.len() / bytes;
        if found < n {
            return Err(PgmError::Truncated { expected: n, found });
        }
        for i in 0..n {
            let v = if wide {
                u32::from(raster[2 * i]) << 8 | u32::from(raster[2 * i + 1])
            } else {
                u32::from(raster[i])
            };
            samples.push(v);
        }
    } else {
        while samples.len() < n {
            match tok.next() {
                Some(t) => {
                    let v = std::str::from_utf8(t)
                        .ok()
                        .and_then(|s| s.parse::<u32>().ok())
                        .ok_or_else(|| PgmError::BadHeader("non-numeric sample".into()))?;
                    samples.push(v);
                }
                None => {
                    return Err(PgmError::Truncated {
                        expected: n,
                        found: samples.len(),
                    })
                }
            }
        }
    }
    if let Some(&value) = samples.iter().find(|&&v| v > maxval) {
        return Err(PgmError::SampleTooLarge { value, maxval });
    }
    let scale = 1.0 / f64::from(maxval);
    Ok(Array2::from_shape_vec(
        (height, width),
        samples.into_iter().map(|v| f64::from(v) * scale).collect(),
    )
    .expect("sample count checked"))
}

/// Binary `P5` encoding; values are clipped to `[0, 1]` and rounded.
pub fn encode_pgm(image: &Array2<f64>, maxval: u16) -> Vec<u8> {
    let maxval = maxval.max(1);
    let (h, w) = image.dim();
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    let m = f64::from(maxval);
    for &v in image.iter() {
        let q = (v.clamp(0.0, 1.0) * m).round() as u16;
        if maxval > 255 {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

pub fn load_pgm(path: &Path) -> Result<Array2<f64>> {
    let data = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode_pgm(&data).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
}

pub fn save_pgm(image: &Array2<f64>, path: &Path, maxval: u16) -> Result<()> {
    write_atomic(path, &encode_pgm(image, maxval))
}
