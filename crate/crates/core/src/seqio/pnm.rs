//! Minimal binary PGM (P5) and PPM (P6) codecs.
//!
//! 16-bit samples are big-endian, as the netpbm format requires.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// A decoded graymap with its declared maxval.
#[derive(Debug, Clone, PartialEq)]
pub struct Graymap {
    pub maxval: u16,
    pub pixels: Grid<u16>,
}

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Format(format!(
            "expected magic {}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&bytes[..bytes.len().min(2)])
        )));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated or malformed header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("header value out of range".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("maxval {maxval} out of range")));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval,
        data_offset: pos,
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Graymap> {
    let h = parse_header(bytes, b"P5")?;
    let n = h.width * h.height;
    let wide = h.maxval > 255;
    let need = if wide { 2 * n } else { n };
    let raster = &bytes[h.data_offset..];
    if raster.len() < need {
        return Err(Error::Format(format!(
            "raster truncated: need {need} bytes, have {}",
            raster.len()
        )));
    }
    let data: Vec<u16> = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster[..n].iter().map(|&b| b as u16).collect()
    };
    if let Some(v) = data.iter().find(|&&v| v as u32 > h.maxval) {
        return Err(Error::Format(format!(
            "sample {v} exceeds maxval {}",
            h.maxval
        )));
    }
    Ok(Graymap {
        maxval: h.maxval as u16,
        pixels: Grid::from_vec(h.width, h.height, data)?,
    })
}

pub fn encode_pgm(pixels: &Grid<u16>, maxval: u16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pixels.width(), pixels.height(), maxval).into_bytes();
    if maxval > 255 {
        out.reserve(2 * pixels.len());
        for &v in pixels.as_slice() {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(pixels.as_slice().iter().map(|&v| v.min(maxval) as u8));
    }
    out
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(3 * rgb.len());
    for px in rgb {
        out.extend_from_slice(px);
    }
    out
}

pub fn read_pgm(path: &Path) -> Result<Graymap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_pgm(path: &Path, pixels: &Grid<u16>, maxval: u16) -> Result<()> {
    fs::write(path, encode_pgm(pixels, maxval)).map_err(|e| Error::io(path, e))
}
