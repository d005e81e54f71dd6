//! Frame preprocessing: z-score normalization, ROI crop/resize to the
//! working resolution and back, and deterministic affine/intensity
//! transforms used for robustness checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Plane};
use crate::seqio::{Frame, Mask};

/// Lower bound on the divisor in z-score normalization.
pub const ZSCORE_EPS: f64 = 1e-8;

/// Zero-mean, unit-variance copy of the frame. Constant frames map to all zeros.
pub fn normalize_zscore(frame: &Frame) -> Plane {
    let px = frame.pixels.as_slice();
    let n = px.len() as f64;
    let mean = px.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = px
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let scale = var.sqrt().max(ZSCORE_EPS);
    frame.pixels.map(|&v| (v as f64 - mean) / scale)
}

/// Crop rectangle in source pixels plus the working resolution it maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiTransform {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub target_width: usize,
    pub target_height: usize,
}

impl RoiTransform {
    /// Whole-image crop.
    pub fn identity(width: usize, height: usize, target: (usize, usize)) -> Self {
        Self {
            x0: 0,
            y0: 0,
            width,
            height,
            target_width: target.0,
            target_height: target.1,
        }
    }

    pub fn validate(&self, source: (usize, usize)) -> Result<()> {
        if self.target_width < 16 || self.target_height < 16 {
            return Err(Error::Config(format!(
                "working resolution {}x{} below 16x16",
                self.target_width, self.target_height
            )));
        }
        if self.width == 0
            || self.height == 0
            || self.x0 + self.width > source.0
            || self.y0 + self.height > source.1
        {
            return Err(Error::Validation(format!(
                "crop ({}, {}, {}x{}) outside {}x{} image",
                self.x0, self.y0, self.width, self.height, source.0, source.1
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }

    pub fn target(&self) -> (usize, usize) {
        (self.target_width, self.target_height)
    }
}

/// Place an extent of `len` centred at `center` inside `0..limit`, shifting
/// it back in bounds and shrinking it only when it exceeds the image.
fn place_extent(center: f64, len: f64, limit: usize) -> (usize, usize) {
    let len = (len.round() as usize).clamp(1, limit);
    let start = (center - len as f64 / 2.0).round();
    let start = start.clamp(0.0, (limit - len) as f64) as usize;
    (start, len)
}

/// Crop around the mask's foreground.
///
/// The tight bounding box is grown by `pad_factor` times its own size on
/// each side, the shorter side is then grown to the target aspect ratio,
/// and the result is shifted (or, if larger than the image, clipped) to lie
/// inside the image.
pub fn roi_from_mask(mask: &Mask, pad_factor: f64, target: (usize, usize)) -> Result<RoiTransform> {
    if !(pad_factor.is_finite() && pad_factor >= 0.0) {
        return Err(Error::Config(format!("pad_factor {pad_factor} must be >= 0")));
    }
    if target.0 < 16 || target.1 < 16 {
        return Err(Error::Config(format!(
            "working resolution {}x{} below 16x16",
            target.0, target.1
        )));
    }
    let (bx0, by0, bx1, by1) = mask.bounding_box().ok_or(Error::EmptyInitialMask)?;
    let bw = (bx1 - bx0 + 1) as f64;
    let bh = (by1 - by0 + 1) as f64;
    let cx = (bx0 + bx1 + 1) as f64 / 2.0;
    let cy = (by0 + by1 + 1) as f64 / 2.0;
    let mut ew = bw * (1.0 + 2.0 * pad_factor);
    let mut eh = bh * (1.0 + 2.0 * pad_factor);
    let aspect = target.0 as f64 / target.1 as f64;
    if ew / eh < aspect {
        ew = eh * aspect;
    } else {
        eh = ew / aspect;
    }
    let (x0, width) = place_extent(cx, ew, mask.width());
    let (y0, height) = place_extent(cy, eh, mask.height());
    Ok(RoiTransform {
        x0,
        y0,
        width,
        height,
        target_width: target.0,
        target_height: target.1,
    })
}

/// Source coordinate of target pixel `t` for bilinear sampling (pixel-centre aligned).
#[inline]
fn source_coord(t: usize, origin: usize, extent: usize, target: usize) -> f64 {
    origin as f64 + ((2 * t + 1) * extent) as f64 / (2 * target) as f64 - 0.5
}

#[inline]
fn sample_bilinear_clamped(img: &Plane, x: f64, y: f64) -> f64 {
    let (w, h) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    bilinear_at(img, x, y)
}

/// Bilinear interpolation at an in-bounds coordinate.
#[inline]
fn bilinear_at(img: &Plane, x: f64, y: f64) -> f64 {
    let (w, h) = img.dims();
    let xi = (x.floor() as usize).min(w - 1);
    let yi = (y.floor() as usize).min(h - 1);
    let fx = x - xi as f64;
    let fy = y - yi as f64;
    let xj = (xi + 1).min(w - 1);
    let yj = (yi + 1).min(h - 1);
    let a = img.at(xi, yi);
    let b = img.at(xj, yi);
    let c = img.at(xi, yj);
    let d = img.at(xj, yj);
    (1.0 - fx) * (1.0 - fy) * a + fx * (1.0 - fy) * b + (1.0 - fx) * fy * c + fx * fy * d
}

/// Bilinear crop + resize of an intensity plane to the working resolution.
pub fn crop_resize_plane(img: &Plane, xf: &RoiTransform) -> Plane {
    let xs: Vec<f64> = (0..xf.target_width)
        .map(|t| source_coord(t, xf.x0, xf.width, xf.target_width))
        .collect();
    Grid::from_fn(xf.target_width, xf.target_height, |tx, ty| {
        let sy = source_coord(ty, xf.y0, xf.height, xf.target_height);
        sample_bilinear_clamped(img, xs[tx], sy)
    })
}

#[inline]
fn nearest_source(t: usize, origin: usize, extent: usize, target: usize) -> usize {
    origin + ((2 * t + 1) * extent) / (2 * target)
}

/// Nearest-neighbour crop + resize of a mask; output stays binary.
pub fn crop_resize_mask(mask: &Mask, xf: &RoiTransform) -> Mask {
    Mask::from_fn(mask.index, xf.target_width, xf.target_height, |tx, ty| {
        let sx = nearest_source(tx, xf.x0, xf.width, xf.target_width);
        let sy = nearest_source(ty, xf.y0, xf.height, xf.target_height);
        mask.is_fg(sx, sy)
    })
}

/// Map a working-resolution mask back into source coordinates.
/// Pixels outside the crop rectangle are background.
pub fn uncrop_mask(mask: &Mask, xf: &RoiTransform, source: (usize, usize)) -> Mask {
    let (tw, th) = mask.dims();
    let mut out = Mask::empty(mask.index, source.0, source.1);
    for y in xf.y0..(xf.y0 + xf.height).min(source.1) {
        let ty = ((2 * (y - xf.y0) + 1) * th / (2 * xf.height)).min(th - 1);
        for x in xf.x0..(xf.x0 + xf.width).min(source.0) {
            let tx = ((2 * (x - xf.x0) + 1) * tw / (2 * xf.width)).min(tw - 1);
            if mask.is_fg(tx, ty) {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Geometric and intensity perturbation.
///
/// Geometry is rotation about the image centre, then isotropic scaling
/// about the centre, then translation. Intensity output is
/// `gain * value + bias`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
    pub gain: f64,
    pub bias: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self {
            rotation_deg: 0.0,
            dx: 0.0,
            dy: 0.0,
            scale: 1.0,
            gain: 1.0,
            bias: 0.0,
        }
    }
}

impl AffineParams {
    fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Validation(format!("affine scale {} must be > 0", self.scale)));
        }
        Ok(())
    }

    /// Inverse map: output pixel -> source coordinate.
    fn source_of(&self, x: usize, y: usize, w: usize, h: usize) -> (f64, f64) {
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let u = (x as f64 - self.dx - cx) / self.scale;
        let v = (y as f64 - self.dy - cy) / self.scale;
        (cos * u + sin * v + cx, -sin * u + cos * v + cy)
    }
}

/// Rounding slack when deciding whether a warped coordinate left the image.
const EDGE_TOL: f64 = 1e-9;

/// Warp an intensity plane; samples falling outside the source read the
/// source minimum.
pub fn apply_affine(img: &Plane, params: &AffineParams) -> Result<Plane> {
    params.validate()?;
    let (w, h) = img.dims();
    let floor = img.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    Ok(Grid::from_fn(w, h, |x, y| {
        let (sx, sy) = params.source_of(x, y, w, h);
        let v = if sx < -EDGE_TOL || sy < -EDGE_TOL || sx > max_x + EDGE_TOL || sy > max_y + EDGE_TOL {
            floor
        } else {
            bilinear_at(img, sx.clamp(0.0, max_x), sy.clamp(0.0, max_y))
        };
        params.gain * v + params.bias
    }))
}

/// Warp a mask with nearest-neighbour sampling; the intensity terms are
/// ignored and out-of-bounds samples are background.
pub fn apply_affine_mask(mask: &Mask, params: &AffineParams) -> Result<Mask> {
    params.validate()?;
    let (w, h) = mask.dims();
    Ok(Mask::from_fn(mask.index, w, h, |x, y| {
        let (sx, sy) = params.source_of(x, y, w, h);
        let (rx, ry) = (sx.round(), sy.round());
        rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64 && mask.is_fg(rx as usize, ry as usize)
    }))
}
