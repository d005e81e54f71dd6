//! Temporal smoothing, binarization and largest-component cleanup.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqio::Mask;
use crate::segmenter::ProbMap;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.5;

/// Exponential moving average over probability maps.
#[derive(Debug, Clone)]
pub struct SmootherState {
    alpha: f64,
    ema: Option<ProbMap>,
}

impl SmootherState {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {alpha} not in (0, 1]")));
        }
        Ok(Self { alpha, ema: None })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn current(&self) -> Option<&ProbMap> {
        self.ema.as_ref()
    }

    /// `alpha * p + (1 - alpha) * ema`; the first map passes through.
    pub fn update(&mut self, p: &ProbMap) -> Result<ProbMap> {
        let out = match &self.ema {
            None => p.clone(),
            Some(prev) => {
                if prev.dims() != p.dims() {
                    return Err(Error::Validation(format!(
                        "probability map {:?} does not match smoother state {:?}",
                        p.dims(),
                        prev.dims()
                    )));
                }
                let a = self.alpha;
                let mut values = p.values.clone();
                for (v, &e) in values.as_mut_slice().iter_mut().zip(prev.values.as_slice()) {
                    *v = (a * *v + (1.0 - a) * e).clamp(0.0, 1.0);
                }
                ProbMap { index: p.index, values }
            }
        };
        self.ema = Some(out.clone());
        Ok(out)
    }
}

/// Foreground where `p >= tau`.
pub fn threshold(p: &ProbMap, tau: f64) -> Mask {
    let (w, h) = p.dims();
    Mask::from_fn(p.index, w, h, |x, y| p.values.at(x, y) >= tau)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// Component label per pixel (0 = background, 1.. in discovery order) and
/// the size of each component. Discovery follows row-major order, so
/// component `i` contains the smallest (row, col) pixel not in earlier ones.
pub fn label_components(mask: &Mask, conn: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if labels[start] != 0 || mask.labels().as_slice()[start] == 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in conn.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if labels[j] == 0 && mask.labels().as_slice()[j] != 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keep only the largest component; on equal sizes, the one holding the
/// smallest (row, col) pixel.
pub fn largest_component(mask: &Mask, conn: Connectivity) -> Mask {
    let (labels, sizes) = label_components(mask, conn);
    let Some((best, _)) = sizes
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, usize)>, (i, &s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((i, s)),
        })
    else {
        return mask.clone();
    };
    let keep = best as u32 + 1;
    let (w, h) = mask.dims();
    Mask::from_fn(mask.index, w, h, |x, y| labels[y * w + x] == keep)
}
