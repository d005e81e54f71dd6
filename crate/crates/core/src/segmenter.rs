//! Label-transfer decoding of a memory readout into a probability map.

use crate::error::{Error, Result};
use crate::grid::{Grid, Plane};
use crate::memory::Readout;

/// Guard on the label renormalization denominator.
pub const RENORM_EPS: f64 = 1e-8;

/// Per-pixel tumor probability at working resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub index: usize,
    pub values: Plane,
}

impl ProbMap {
    pub fn new(index: usize, values: Plane) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self { index, values })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }
}

/// Site probability `c0 / max(c0 + c1, eps)` from the two label channels.
#[inline]
pub fn site_probability(c0: f64, c1: f64) -> f64 {
    (c0 / (c0 + c1).max(RENORM_EPS)).clamp(0.0, 1.0)
}

/// Turn a readout into a probability map at `stride` times the readout's
/// grid size. Site values sit at cell centres and are bilinearly
/// interpolated, clamping at the outer half-cells.
pub fn decode(readout: &Readout, stride: usize, frame_index: usize) -> Result<ProbMap> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    if readout.value_dim < 2 {
        return Err(Error::Validation(format!(
            "readout has {} value channels, label transfer needs 2",
            readout.value_dim
        )));
    }
    let (gw, gh) = (readout.width, readout.height);
    let sites = Grid::from_fn(gw, gh, |x, y| {
        let v = readout.value(y * gw + x);
        site_probability(v[0], v[1])
    });
    Ok(ProbMap {
        index: frame_index,
        values: upsample_bilinear(&sites, stride),
    })
}

fn axis_weights(n_out: usize, n_in: usize, stride: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|p| {
            let u = ((p as f64 + 0.5) / stride as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i = (u.floor() as usize).min(n_in - 1);
            let j = (i + 1).min(n_in - 1);
            (i, j, u - i as f64)
        })
        .collect()
}

fn upsample_bilinear(sites: &Plane, stride: usize) -> Plane {
    let (gw, gh) = sites.dims();
    let xs = axis_weights(gw * stride, gw, stride);
    let ys = axis_weights(gh * stride, gh, stride);
    Grid::from_fn(gw * stride, gh * stride, |x, y| {
        let (x0, x1, fx) = xs[x];
        let (y0, y1, fy) = ys[y];
        let top = (1.0 - fx) * sites.at(x0, y0) + fx * sites.at(x1, y0);
        let bottom = (1.0 - fx) * sites.at(x0, y1) + fx * sites.at(x1, y1);
        ((1.0 - fy) * top + fy * bottom).clamp(0.0, 1.0)
    })
}
