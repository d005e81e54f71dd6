//! Segmentation and runtime metrics: Dice, HD95, mean surface distance,
//! per-frame latency statistics.
//!
//! Surface distances are exact Euclidean distances between boundary pixels,
//! computed through an exact squared distance transform of the other
//! mask's boundary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqio::Mask;

fn check_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Validation(format!(
            "mask dimensions differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Dice similarity `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dsc(a: &Mask, b: &Mask) -> Result<f64> {
    check_dims(a, b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels().as_slice().iter().zip(b.labels().as_slice()) {
        let (x, y) = (x != 0, y != 0);
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Boundary pixels in row-major order.
pub fn boundary_pixels(mask: &Mask) -> Vec<(usize, usize)> {
    mask.foreground().filter(|&(x, y)| mask.is_boundary(x, y)).collect()
}

/// Directed boundary distance lists in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDistances {
    pub a_to_b: Vec<f64>,
    pub b_to_a: Vec<f64>,
}

impl SurfaceDistances {
    pub fn combined(&self) -> Vec<f64> {
        let mut all = Vec::with_capacity(self.a_to_b.len() + self.b_to_a.len());
        all.extend_from_slice(&self.a_to_b);
        all.extend_from_slice(&self.b_to_a);
        all
    }

    pub fn hd95(&self) -> f64 {
        percentile(&self.combined(), 0.95)
    }

    pub fn msd(&self) -> f64 {
        let all = self.combined();
        all.iter().sum::<f64>() / all.len() as f64
    }

    /// Classical (100th percentile) Hausdorff distance.
    pub fn hausdorff(&self) -> f64 {
        self.a_to_b
            .iter()
            .chain(&self.b_to_a)
            .copied()
            .fold(0.0, f64::max)
    }
}

/// 1-D lower envelope pass of the Felzenszwalb–Huttenlocher transform.
/// `f` holds squared distances (`INFINITY` where no site); result is
/// written back into `f`.
fn edt_1d(f: &mut [f64], v: &mut [usize], z: &mut [f64], out: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                break;
            }
            let p = v[k as usize];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * (q - p)) as f64;
            if s <= z[k as usize] {
                k -= 1;
            } else {
                k += 1;
                v[k as usize] = q;
                z[k as usize] = s;
                break;
            }
        }
    }
    if k < 0 {
        return;
    }
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate().take(n) {
        while j < k as usize && z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
    f.copy_from_slice(&out[..n]);
}

/// Exact squared Euclidean distance (in pixels²) from every pixel to the
/// nearest site. Returns all `INFINITY` when there are no sites.
pub fn squared_edt(width: usize, height: usize, sites: &[(usize, usize)]) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; width * height];
    for &(x, y) in sites {
        d[y * width + x] = 0.0;
    }
    let n = width.max(height);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut col = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = d[y * width + x];
        }
        edt_1d(&mut col, &mut v, &mut z, &mut out);
        for y in 0..height {
            d[y * width + x] = col[y];
        }
    }
    for y in 0..height {
        edt_1d(&mut d[y * width..(y + 1) * width], &mut v, &mut z, &mut out);
    }
    d
}

/// Distances from each boundary pixel of one mask to the nearest boundary
/// pixel of the other, both directions. `None` when either mask is empty.
pub fn surface_distances(a: &Mask, b: &Mask, spacing: f64) -> Result<Option<SurfaceDistances>> {
    check_dims(a, b)?;
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::Validation(format!("spacing {spacing} must be > 0")));
    }
    let ba = boundary_pixels(a);
    let bb = boundary_pixels(b);
    if ba.is_empty() || bb.is_empty() {
        return Ok(None);
    }
    let (w, h) = a.dims();
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| -> Vec<f64> {
        let dt = squared_edt(w, h, to);
        from.iter().map(|&(x, y)| dt[y * w + x].sqrt() * spacing).collect()
    };
    Ok(Some(SurfaceDistances {
        a_to_b: directed(&ba, &bb),
        b_to_a: directed(&bb, &ba),
    }))
}

/// Linear-interpolation percentile: position `p * (n - 1)` in the sorted
/// values, zero-indexed. Empty input gives NaN.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        v[lo]
    } else {
        v[lo] + frac * (v[hi] - v[lo])
    }
}

/// 95th percentile of the pooled directed surface distances.
pub fn hd95(a: &Mask, b: &Mask, spacing: f64) -> Result<Option<f64>> {
    Ok(surface_distances(a, b, spacing)?.map(|s| s.hd95()))
}

/// Mean of the pooled directed surface distances.
pub fn msd(a: &Mask, b: &Mask, spacing: f64) -> Result<Option<f64>> {
    Ok(surface_distances(a, b, spacing)?.map(|s| s.msd()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceUnit {
    Mm,
    Px,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub frame: usize,
    pub dsc: f64,
    pub hd95: Option<f64>,
    pub msd: Option<f64>,
    pub elapsed_s: Option<f64>,
    pub valid_surface: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: percentile(values, 0.5),
            count: values.len(),
        })
    }
}

/// Per-frame latency summary against a budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
    pub budget_s: f64,
    /// Frames whose latency exceeded the budget.
    pub budget_violations: usize,
    pub mean_within_budget: bool,
}

impl LatencyStats {
    pub fn from_latencies(latencies: &[f64], budget_s: f64) -> Option<Self> {
        if latencies.is_empty() {
            return None;
        }
        let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
        Some(Self {
            count: latencies.len(),
            mean_s: mean,
            median_s: percentile(latencies, 0.5),
            p95_s: percentile(latencies, 0.95),
            max_s: latencies.iter().copied().fold(0.0, f64::max),
            budget_s,
            budget_violations: latencies.iter().filter(|&&l| l > budget_s).count(),
            mean_within_budget: mean < budget_s,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub dsc: Option<Summary>,
    pub hd95: Option<Summary>,
    pub msd: Option<Summary>,
    pub latency: Option<LatencyStats>,
    pub invalid_surface_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub unit: DistanceUnit,
    pub rows: Vec<MetricRow>,
    pub aggregates: Aggregates,
}

pub const CSV_HEADER: &str = "frame,dsc,hd95,msd,elapsed_s,valid_surface";

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.frame,
                r.dsc,
                opt_field(r.hd95),
                opt_field(r.msd),
                opt_field(r.elapsed_s),
                r.valid_surface
            );
        }
        s
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "unit": self.unit,
            "frames": self.rows.len(),
            "aggregates": self.aggregates,
        })
    }
}

/// Score aligned prediction/reference lists.
///
/// Frames with an empty prediction or reference keep their DSC but get no
/// HD95/MSD and are left out of those aggregates. `spacing_mm` of `None`
/// reports distances in pixels.
pub fn evaluate_run(
    predictions: &[Mask],
    references: &[Mask],
    latencies: Option<&[f64]>,
    spacing_mm: Option<f64>,
    budget_s: f64,
) -> Result<MetricReport> {
    if predictions.len() != references.len() {
        return Err(Error::Validation(format!(
            "{} predictions vs {} references",
            predictions.len(),
            references.len()
        )));
    }
    if let Some(l) = latencies {
        if l.len() != predictions.len() {
            return Err(Error::Validation(format!(
                "{} latencies vs {} frames",
                l.len(),
                predictions.len()
            )));
        }
    }
    let spacing = spacing_mm.unwrap_or(1.0);
    let mut rows = Vec::with_capacity(predictions.len());
    for (i, (p, r)) in predictions.iter().zip(references).enumerate() {
        let surf = surface_distances(p, r, spacing)?;
        rows.push(MetricRow {
            frame: i,
            dsc: dsc(p, r)?,
            hd95: surf.as_ref().map(SurfaceDistances::hd95),
            msd: surf.as_ref().map(SurfaceDistances::msd),
            elapsed_s: latencies.map(|l| l[i]),
            valid_surface: surf.is_some(),
        });
    }
    let collect = |f: fn(&MetricRow) -> Option<f64>| -> Vec<f64> { rows.iter().filter_map(f).collect() };
    let aggregates = Aggregates {
        dsc: Summary::of(&collect(|r| Some(r.dsc))),
        hd95: Summary::of(&collect(|r| r.hd95)),
        msd: Summary::of(&collect(|r| r.msd)),
        latency: latencies.and_then(|l| LatencyStats::from_latencies(l, budget_s)),
        invalid_surface_frames: rows.iter().filter(|r| !r.valid_surface).count(),
    };
    Ok(MetricReport {
        unit: if spacing_mm.is_some() {
            DistanceUnit::Mm
        } else {
            DistanceUnit::Px
        },
        rows,
        aggregates,
    })
}
