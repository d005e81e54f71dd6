//! Feature encoders producing per-site key and value grids.
//!
//! [`MultiScaleEncoder`] is the built-in deterministic encoder. Any other
//! implementation of [`Encoder`] can be plugged into the tracker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{reflect, Grid, Plane};

/// Geometry of an encoder's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub stride: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.key_dim == 0 || self.value_dim == 0 {
            return Err(Error::Config(format!(
                "encoder spec needs stride, key_dim, value_dim >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Feature-grid size for an image of the given size.
    pub fn grid_dims(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if !width.is_multiple_of(self.stride) || !height.is_multiple_of(self.stride) {
            return Err(Error::Config(format!(
                "stride {} does not divide resolution {}x{}",
                self.stride, width, height
            )));
        }
        Ok((width / self.stride, height / self.stride))
    }
}

/// Keys and values for every feature site of one frame, site-major
/// (`keys[site * key_dim + channel]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub width: usize,
    pub height: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub stride: usize,
    pub frame_index: usize,
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
}

impl FeatureGrid {
    pub fn sites(&self) -> usize {
        self.width * self.height
    }

    pub fn key(&self, site: usize) -> &[f64] {
        &self.keys[site * self.key_dim..(site + 1) * self.key_dim]
    }

    pub fn value(&self, site: usize) -> &[f64] {
        &self.values[site * self.value_dim..(site + 1) * self.value_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.keys.iter().chain(&self.values).all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sites();
        if self.keys.len() != n * self.key_dim || self.values.len() != n * self.value_dim {
            return Err(Error::Validation(format!(
                "feature grid {}x{} has inconsistent buffer lengths",
                self.width, self.height
            )));
        }
        if !self.is_finite() {
            return Err(Error::Validation(format!(
                "feature grid for frame {} contains non-finite values",
                self.frame_index
            )));
        }
        Ok(())
    }
}

/// A feature extractor usable by the tracker.
pub trait Encoder: Send + Sync {
    fn spec(&self) -> EncoderSpec;

    /// Keys for the query side; values are zero.
    fn encode_query(&self, image: &Plane, frame_index: usize) -> Result<FeatureGrid>;

    /// Keys identical to [`Encoder::encode_query`] plus values carrying the
    /// label probability in channel 0 and its complement in channel 1.
    fn encode_memory(&self, image: &Plane, mask_prob: &Plane, frame_index: usize) -> Result<FeatureGrid>;

    /// Memory features for an image whose query encoding is already known.
    /// Must equal `encode_memory(image, mask_prob, ..)`; the default simply
    /// re-encodes.
    fn encode_memory_from_query(&self, query: FeatureGrid, image: &Plane, mask_prob: &Plane) -> Result<FeatureGrid> {
        self.encode_memory(image, mask_prob, query.frame_index)
    }
}

/// Window sizes of the built-in encoder.
pub const WINDOWS: [usize; 3] = [3, 7, 15];
/// Channels per window: local mean, local stdev, d/dx, d/dy, Laplacian.
pub const CHANNELS_PER_WINDOW: usize = 5;
pub const KEY_DIM: usize = WINDOWS.len() * CHANNELS_PER_WINDOW;

/// Scale applied to each statistic's channels. The local means carry the
/// matching; the other statistics refine it without letting pixel noise
/// dominate distances.
pub const STAT_WEIGHTS: [f64; CHANNELS_PER_WINDOW] = [1.0, 0.1, 0.1, 0.1, 0.1];

/// Key channel of statistic `stat` (0 mean, 1 stdev, 2 d/dx, 3 d/dy,
/// 4 Laplacian) at window `window` (index into [`WINDOWS`]). Channels are
/// grouped by statistic so the high-variance means come first.
pub const fn key_channel(stat: usize, window: usize) -> usize {
    stat * WINDOWS.len() + window
}
pub const VALUE_DIM: usize = 3;
pub const DEFAULT_STRIDE: usize = 4;
/// Window of the local-mean appearance channel in the values.
const APPEARANCE_WINDOW: usize = 7;

/// Handcrafted multi-scale descriptor: for each window in [`WINDOWS`],
/// the reflect-padded box mean and standard deviation plus central
/// differences and a 5-point Laplacian of the box-smoothed image taken at
/// the window radius, scaled by [`STAT_WEIGHTS`]. Per-pixel features are
/// mean-pooled over each `stride x stride` cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiScaleEncoder {
    stride: usize,
}

impl Default for MultiScaleEncoder {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
        }
    }
}

impl MultiScaleEncoder {
    pub fn new(stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        Ok(Self { stride })
    }

    fn key_planes(&self, image: &Plane) -> Vec<Plane> {
        let mut planes = vec![Grid::filled(0, 0, 0.0); KEY_DIM];
        let squares = image.map(|v| v * v);
        for (wi, &w) in WINDOWS.iter().enumerate() {
            let r = w / 2;
            let mean = box_mean(image, w);
            let mean_sq = box_mean(&squares, w);
            let std = Grid::from_fn(image.width(), image.height(), |x, y| {
                let m = mean.at(x, y);
                (mean_sq.at(x, y) - m * m).max(0.0).sqrt()
            });
            let (gx, gy, lap) = derivatives(&mean, r);
            for (stat, plane) in [mean, std, gx, gy, lap].into_iter().enumerate() {
                let weight = STAT_WEIGHTS[stat];
                planes[key_channel(stat, wi)] = if weight == 1.0 { plane } else { plane.map(|v| v * weight) };
            }
        }
        planes
    }

    fn keys(&self, image: &Plane) -> Result<(usize, usize, Vec<f64>)> {
        let (gw, gh) = self.spec().grid_dims(image.width(), image.height())?;
        let pooled: Vec<Plane> = self
            .key_planes(image)
            .iter()
            .map(|p| mean_pool(p, self.stride))
            .collect();
        let mut keys = Vec::with_capacity(gw * gh * KEY_DIM);
        for site in 0..gw * gh {
            keys.extend(pooled.iter().map(|p| p.as_slice()[site]));
        }
        Ok((gw, gh, keys))
    }
}

impl Encoder for MultiScaleEncoder {
    fn spec(&self) -> EncoderSpec {
        EncoderSpec {
            stride: self.stride,
            key_dim: KEY_DIM,
            value_dim: VALUE_DIM,
        }
    }

    fn encode_query(&self, image: &Plane, frame_index: usize) -> Result<FeatureGrid> {
        let (width, height, keys) = self.keys(image)?;
        Ok(FeatureGrid {
            width,
            height,
            key_dim: KEY_DIM,
            value_dim: VALUE_DIM,
            stride: self.stride,
            frame_index,
            keys,
            values: vec![0.0; width * height * VALUE_DIM],
        })
    }

    fn encode_memory(&self, image: &Plane, mask_prob: &Plane, frame_index: usize) -> Result<FeatureGrid> {
        self.check_prob(image, mask_prob)?;
        let (width, height, keys) = self.keys(image)?;
        self.with_values(width, height, keys, image, mask_prob, frame_index)
    }

    fn encode_memory_from_query(&self, query: FeatureGrid, image: &Plane, mask_prob: &Plane) -> Result<FeatureGrid> {
        let (gw, gh) = self.spec().grid_dims(image.width(), image.height())?;
        if (query.width, query.height, query.key_dim) != (gw, gh, KEY_DIM) {
            return self.encode_memory(image, mask_prob, query.frame_index);
        }
        self.check_prob(image, mask_prob)?;
        self.with_values(gw, gh, query.keys, image, mask_prob, query.frame_index)
    }
}

impl MultiScaleEncoder {
    fn check_prob(&self, image: &Plane, mask_prob: &Plane) -> Result<()> {
        if mask_prob.dims() != image.dims() {
            return Err(Error::Validation(format!(
                "mask probability {}x{} does not match image {}x{}",
                mask_prob.width(),
                mask_prob.height(),
                image.width(),
                image.height()
            )));
        }
        Ok(())
    }

    fn with_values(
        &self,
        width: usize,
        height: usize,
        keys: Vec<f64>,
        image: &Plane,
        mask_prob: &Plane,
        frame_index: usize,
    ) -> Result<FeatureGrid> {
        let prob = mean_pool(mask_prob, self.stride);
        let appearance = mean_pool(&box_mean(image, APPEARANCE_WINDOW), self.stride);
        let mut values = Vec::with_capacity(width * height * VALUE_DIM);
        for (&p, &a) in prob.as_slice().iter().zip(appearance.as_slice()) {
            values.extend_from_slice(&[p, 1.0 - p, a]);
        }
        Ok(FeatureGrid {
            width,
            height,
            key_dim: KEY_DIM,
            value_dim: VALUE_DIM,
            stride: self.stride,
            frame_index,
            keys,
            values,
        })
    }
}

/// Reflect-padded `w x w` box mean, separable, summed in a fixed order so
/// that results depend only on the window contents.
pub fn box_mean(img: &Plane, w: usize) -> Plane {
    let (width, height) = img.dims();
    let r = w / 2;
    let norm = 1.0 / (w * w) as f64;
    let mut rows = vec![0.0; width * height];
    let mut padded = vec![0.0; width + 2 * r];
    for y in 0..height {
        let src = img.row(y);
        for (i, p) in padded.iter_mut().enumerate() {
            *p = src[reflect(i as isize - r as isize, width)];
        }
        let dst = &mut rows[y * width..(y + 1) * width];
        for (x, o) in dst.iter_mut().enumerate() {
            let mut s = 0.0;
            for &v in &padded[x..x + w] {
                s += v;
            }
            *o = s;
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        let dst = &mut out[y * width..(y + 1) * width];
        for d in 0..w {
            let sy = reflect(y as isize + d as isize - r as isize, height);
            for (o, &v) in dst.iter_mut().zip(&rows[sy * width..(sy + 1) * width]) {
                *o += v;
            }
        }
        for o in dst.iter_mut() {
            *o *= norm;
        }
    }
    Grid::from_vec(width, height, out).expect("sized above")
}

fn derivatives(smooth: &Plane, r: usize) -> (Plane, Plane, Plane) {
    let (w, h) = smooth.dims();
    let inv_2r = 1.0 / (2 * r) as f64;
    let inv_r2 = 1.0 / (r * r) as f64;
    let xl: Vec<usize> = (0..w).map(|x| reflect(x as isize - r as isize, w)).collect();
    let xr: Vec<usize> = (0..w).map(|x| reflect((x + r) as isize, w)).collect();
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    let mut lap = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = smooth.row(y);
        let up = smooth.row(reflect(y as isize - r as isize, h));
        let down = smooth.row(reflect((y + r) as isize, h));
        for x in 0..w {
            let (l, rt, u, d, c) = (row[xl[x]], row[xr[x]], up[x], down[x], row[x]);
            gx.push((rt - l) * inv_2r);
            gy.push((d - u) * inv_2r);
            lap.push((rt + l + d + u - 4.0 * c) * inv_r2);
        }
    }
    let g = |v| Grid::from_vec(w, h, v).expect("sized above");
    (g(gx), g(gy), g(lap))
}

/// Mean over non-overlapping `stride x stride` cells. Dimensions must be
/// multiples of `stride`.
pub fn mean_pool(img: &Plane, stride: usize) -> Plane {
    let (w, h) = img.dims();
    let norm = 1.0 / (stride * stride) as f64;
    Grid::from_fn(w / stride, h / stride, |cx, cy| {
        let mut s = 0.0;
        for y in cy * stride..(cy + 1) * stride {
            for &v in &img.row(y)[cx * stride..(cx + 1) * stride] {
                s += v;
            }
        }
        s * norm
    })
}
