//! On-disk sequence format: a directory holding `meta.json`, frames named
//! `frame_00000.pgm`, and optional masks named `mask_00000.pgm`.
//!
//! Frames are binary PGM (P5). 8-bit sequences use maxval 255, 16-bit
//! sequences use maxval 65535 with big-endian samples. Masks are always
//! 8-bit with 0 for background and 255 for foreground.

pub mod pnm;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const META_FILE: &str = "meta.json";

/// Geometry and acquisition metadata shared by every frame of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_spacing_mm: Option<f64>,
    pub bit_depth: u8,
}

impl SequenceMeta {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Validation(format!(
                "sequence dimensions {}x{} below the 16x16 minimum",
                self.width, self.height
            )));
        }
        if self.frame_count < 1 {
            return Err(Error::Validation("frame_count must be at least 1".into()));
        }
        if !matches!(self.bit_depth, 8 | 16) {
            return Err(Error::Validation(format!(
                "bit_depth {} not in {{8, 16}}",
                self.bit_depth
            )));
        }
        if let Some(s) = self.pixel_spacing_mm {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Validation(format!("pixel_spacing_mm {s} must be > 0")));
            }
        }
        Ok(())
    }

    /// Spacing in mm per pixel, or 1.0 (pixel units) when unknown.
    pub fn pixel_spacing(&self) -> f64 {
        self.pixel_spacing_mm.unwrap_or(1.0)
    }

    pub fn max_intensity(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }
}

/// One grayscale frame `I_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub bit_depth: u8,
    pub pixels: Grid<u16>,
}

impl Frame {
    pub fn new(index: usize, bit_depth: u8, pixels: Grid<u16>) -> Result<Self> {
        if !matches!(bit_depth, 8 | 16) {
            return Err(Error::Validation(format!("bit_depth {bit_depth} not in {{8, 16}}")));
        }
        let limit = 1u32 << bit_depth;
        if let Some(v) = pixels.as_slice().iter().find(|&&v| v as u32 >= limit) {
            return Err(Error::Validation(format!(
                "frame {index}: intensity {v} exceeds {bit_depth}-bit range"
            )));
        }
        Ok(Self {
            index,
            bit_depth,
            pixels,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dims()
    }
}

/// Binary label grid: 0 = background, 1 = tumor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub index: usize,
    labels: Grid<u8>,
}

impl Mask {
    pub fn empty(index: usize, width: usize, height: usize) -> Self {
        Self {
            index,
            labels: Grid::filled(width, height, 0),
        }
    }

    /// Build from a label grid; every value must be 0 or 1.
    pub fn from_labels(index: usize, labels: Grid<u8>) -> Result<Self> {
        if let Some(v) = labels.as_slice().iter().find(|&&v| v > 1) {
            return Err(Error::Validation(format!("mask label {v} not in {{0, 1}}")));
        }
        Ok(Self { index, labels })
    }

    /// Nonzero values become foreground.
    pub fn from_fn(index: usize, width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            index,
            labels: Grid::from_fn(width, height, |x, y| f(x, y) as u8),
        }
    }

    pub fn labels(&self) -> &Grid<u8> {
        &self.labels
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    #[inline]
    pub fn is_fg(&self, x: usize, y: usize) -> bool {
        self.labels.at(x, y) != 0
    }

    pub fn set(&mut self, x: usize, y: usize, fg: bool) {
        self.labels.set(x, y, fg as u8);
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.as_slice().iter().filter(|&&v| v != 0).count()
    }

    pub fn is_blank(&self) -> bool {
        self.labels.as_slice().iter().all(|&v| v == 0)
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width();
        self.labels
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Inclusive bounding box `(x_min, y_min, x_max, y_max)`, `None` if blank.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        self.foreground().fold(None, |acc, (x, y)| match acc {
            None => Some((x, y, x, y)),
            Some((x0, y0, x1, y1)) => Some((x0.min(x), y0.min(y), x1.max(x), y1.max(y))),
        })
    }

    /// Foreground pixel with at least one background 4-neighbour; pixels
    /// outside the image count as background.
    pub fn is_boundary(&self, x: usize, y: usize) -> bool {
        if !self.is_fg(x, y) {
            return false;
        }
        let (w, h) = self.dims();
        x == 0
            || y == 0
            || x + 1 == w
            || y + 1 == h
            || !self.is_fg(x - 1, y)
            || !self.is_fg(x + 1, y)
            || !self.is_fg(x, y - 1)
            || !self.is_fg(x, y + 1)
    }
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:05}.pgm"))
}

pub fn mask_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("mask_{index:05}.pgm"))
}

pub fn read_meta(dir: &Path) -> Result<SequenceMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: SequenceMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    meta.validate()?;
    Ok(meta)
}

pub fn write_meta(dir: &Path, meta: &SequenceMeta) -> Result<()> {
    meta.validate()?;
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Indices `n` of files in `dir` named `<prefix>NNNNN.pgm`.
fn numbered_files(dir: &Path, prefix: &str) -> Result<BTreeSet<usize>> {
    let mut found = BTreeSet::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(num) = name.strip_prefix(prefix).and_then(|s| s.strip_suffix(".pgm")) else {
            continue;
        };
        if num.len() == 5 && num.bytes().all(|b| b.is_ascii_digit()) {
            found.insert(num.parse().expect("five digits"));
        }
    }
    Ok(found)
}

/// Check that exactly indices `0..count` are present; report the first
/// missing or surplus index.
fn check_numbering(found: &BTreeSet<usize>, count: usize, what: &str) -> Result<()> {
    if let Some(missing) = (0..count).find(|i| !found.contains(i)) {
        return Err(Error::Structural {
            index: missing,
            reason: format!("missing {what} file"),
        });
    }
    if let Some(&extra) = found.range(count..).next() {
        return Err(Error::Structural {
            index: extra,
            reason: format!("unexpected {what} file beyond frame_count {count}"),
        });
    }
    Ok(())
}

pub fn read_frame(path: &Path, index: usize, meta: &SequenceMeta) -> Result<Frame> {
    let g = pnm::read_pgm(path)?;
    if g.pixels.dims() != (meta.width, meta.height) {
        return Err(Error::Validation(format!(
            "frame {index}: dimensions {}x{} differ from meta {}x{}",
            g.pixels.width(),
            g.pixels.height(),
            meta.width,
            meta.height
        )));
    }
    Frame::new(index, meta.bit_depth, g.pixels)
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    let maxval = ((1u32 << frame.bit_depth) - 1) as u16;
    pnm::write_pgm(path, &frame.pixels, maxval)
}

/// Read and check a sequence directory's meta and frame numbering without
/// loading frames; pair with [`read_frame`] for streaming.
pub fn open_sequence(dir: &Path) -> Result<SequenceMeta> {
    let meta = read_meta(dir)?;
    check_numbering(&numbered_files(dir, "frame_")?, meta.frame_count, "frame")?;
    Ok(meta)
}

/// Load every frame of a sequence directory in index order.
pub fn read_sequence(dir: &Path) -> Result<(SequenceMeta, Vec<Frame>)> {
    let meta = open_sequence(dir)?;
    let frames = (0..meta.frame_count)
        .map(|i| read_frame(&frame_path(dir, i), i, &meta))
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, frames))
}

/// Load `mask_%05d.pgm` files `0..count` from a directory.
pub fn read_mask_series(dir: &Path, count: usize) -> Result<Vec<Mask>> {
    check_numbering(&numbered_files(dir, "mask_")?, count, "mask")?;
    (0..count)
        .map(|i| read_mask(&mask_path(dir, i)).map(|m| m.with_index(i)))
        .collect()
}

/// Number of consecutive `mask_%05d.pgm` files starting at 0, validated
/// against stray higher indices.
pub fn count_masks(dir: &Path) -> Result<usize> {
    let found = numbered_files(dir, "mask_")?;
    let count = found.len();
    check_numbering(&found, count, "mask")?;
    Ok(count)
}

/// Write meta, frames and (optionally) masks as a sequence directory.
pub fn write_sequence(dir: &Path, meta: &SequenceMeta, frames: &[Frame], masks: Option<&[Mask]>) -> Result<()> {
    if frames.len() != meta.frame_count {
        return Err(Error::Validation(format!(
            "meta declares {} frames but {} given",
            meta.frame_count,
            frames.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_meta(dir, meta)?;
    for f in frames {
        if f.dims() != (meta.width, meta.height) {
            return Err(Error::Validation(format!("frame {} dimension mismatch", f.index)));
        }
        write_frame(&frame_path(dir, f.index), f)?;
    }
    if let Some(masks) = masks {
        for m in masks {
            write_mask(m, &mask_path(dir, m.index))?;
        }
    }
    Ok(())
}

/// Read a P5 graymap as a mask; samples above 127 are foreground.
///
/// 16-bit files are first scaled to 8 bits (`v >> 8`).
pub fn read_mask(path: &Path) -> Result<Mask> {
    let g = pnm::read_pgm(path)?;
    let wide = g.maxval > 255;
    let labels = g.pixels.map(|&v| {
        let v8 = if wide { v >> 8 } else { v };
        (v8 > 127) as u8
    });
    Mask::from_labels(0, labels)
}

pub fn write_mask(mask: &Mask, path: &Path) -> Result<()> {
    let px = mask.labels().map(|&v| if v != 0 { 255u16 } else { 0 });
    pnm::write_pgm(path, &px, 255)
}

const OVERLAY_COLOR: [u8; 3] = [255, 0, 0];

/// Grayscale frame scaled to 0..255 with the mask boundary in red.
pub fn overlay_rgb(frame: &Frame, mask: &Mask) -> Result<Vec<[u8; 3]>> {
    if frame.dims() != mask.dims() {
        return Err(Error::Validation(format!(
            "overlay: frame {}x{} vs mask {}x{}",
            frame.pixels.width(),
            frame.pixels.height(),
            mask.width(),
            mask.height()
        )));
    }
    let px = frame.pixels.as_slice();
    let lo = px.iter().copied().min().unwrap_or(0) as f64;
    let hi = px.iter().copied().max().unwrap_or(0) as f64;
    let span = hi - lo;
    let (w, h) = frame.dims();
    let mut rgb = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            if mask.is_boundary(x, y) {
                rgb.push(OVERLAY_COLOR);
            } else {
                let v = frame.pixels.at(x, y) as f64;
                let g = if span > 0.0 {
                    ((v - lo) / span * 255.0).round() as u8
                } else {
                    0
                };
                rgb.push([g, g, g]);
            }
        }
    }
    Ok(rgb)
}

/// Write the overlay as a binary PPM (P6).
pub fn render_overlay(frame: &Frame, mask: &Mask, out: &Path) -> Result<()> {
    let rgb = overlay_rgb(frame, mask)?;
    let (w, h) = frame.dims();
    fs::write(out, pnm::encode_ppm(w, h, &rgb)).map_err(|e| Error::io(out, e))
}
