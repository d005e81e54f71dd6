//! Synthetic cine phantom: a bright ellipse moving sinusoidally in `y`
//! over a smooth random texture, with optional deformation, gain drift and
//! Gaussian noise. Every frame is reproducible from the seed alone.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Plane};
use crate::seqio::{self, Frame, Mask, SequenceMeta};

const TEXTURE_WAVES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Ellipse centre at rest, pixel coordinates (pixel centres on integers).
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    /// Peak vertical displacement in pixels.
    pub amplitude: f64,
    /// Motion period in frames.
    pub period: f64,
    /// Relative semi-axis modulation, in `[0, 1)`.
    pub deformation: f64,
    /// Noise standard deviation in intensity units.
    pub noise_sigma: f64,
    /// Gain change per frame as a fraction (`gain_t = 1 + drift * t`).
    pub drift: f64,
    pub background: f64,
    /// Peak texture excursion around `background`.
    pub texture_amplitude: f64,
    /// Tumor intensity above `background`.
    pub contrast: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Square phantom with the tumor centred and sized relative to the image.
    pub fn centered(size: usize, frames: usize) -> Self {
        let s = size as f64;
        Self {
            width: size,
            height: size,
            frames,
            center: ((s - 1.0) / 2.0, (s - 1.0) / 2.0),
            semi_axes: (s * 0.11, s * 0.08),
            amplitude: 0.0,
            period: 20.0,
            deformation: 0.0,
            noise_sigma: 0.0,
            drift: 0.0,
            background: 1000.0,
            texture_amplitude: 150.0,
            contrast: 400.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.width < 16 || self.height < 16 {
            return bad(format!("phantom size {}x{} below 16x16", self.width, self.height));
        }
        if self.frames < 1 {
            return bad("phantom needs at least one frame".into());
        }
        if self.period.is_nan() || self.period < 2.0 {
            return bad(format!("period {} must be >= 2", self.period));
        }
        if !(0.0..1.0).contains(&self.deformation) {
            return bad(format!("deformation {} not in [0, 1)", self.deformation));
        }
        if !(self.semi_axes.0 > 0.0 && self.semi_axes.1 > 0.0) {
            return bad("semi-axes must be positive".into());
        }
        if !(self.amplitude >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("amplitude and noise must be non-negative".into());
        }
        for v in [self.background, self.texture_amplitude, self.contrast, self.drift] {
            if !v.is_finite() {
                return bad("intensity parameters must be finite".into());
            }
        }
        let grow = 1.0 + self.deformation;
        let (cx, cy) = self.center;
        let (a, b) = (self.semi_axes.0 * grow, self.semi_axes.1 * grow);
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if cx - a < 0.0 || cx + a > max_x || cy - self.amplitude - b < 0.0 || cy + self.amplitude + b > max_y {
            return bad(format!(
                "ellipse (centre {:?}, semi-axes up to {a:.2}x{b:.2}, amplitude {}) leaves the {}x{} image",
                self.center, self.amplitude, self.width, self.height
            ));
        }
        Ok(())
    }

    pub fn meta(&self) -> SequenceMeta {
        SequenceMeta {
            width: self.width,
            height: self.height,
            frame_count: self.frames,
            pixel_spacing_mm: None,
            bit_depth: 16,
        }
    }
}

/// Ellipse pose at frame `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsePose {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
}

impl EllipsePose {
    /// Pixel-centre-inside rule.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let u = (x as f64 - self.cx) / self.a;
        let v = (y as f64 - self.cy) / self.b;
        u * u + v * v <= 1.0
    }
}

/// A validated phantom with its background texture precomputed.
#[derive(Debug, Clone)]
pub struct Phantom {
    spec: PhantomSpec,
    texture: Plane,
}

impl Phantom {
    pub fn new(spec: PhantomSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let size = spec.width.min(spec.height) as f64;
        let waves: Vec<(f64, f64, f64, f64)> = (0..TEXTURE_WAVES)
            .map(|_| {
                let wavelength = rng.gen_range(size / 4.0..size);
                let theta = rng.gen_range(0.0..PI);
                let k = 2.0 * PI / wavelength;
                let amp = rng.gen_range(0.3..1.0);
                let phase = rng.gen_range(0.0..2.0 * PI);
                (k * theta.cos(), k * theta.sin(), amp, phase)
            })
            .collect();
        let total: f64 = waves.iter().map(|w| w.2).sum();
        let scale = spec.texture_amplitude / total;
        let texture = Grid::from_fn(spec.width, spec.height, |x, y| {
            waves
                .iter()
                .map(|&(kx, ky, amp, phase)| amp * (kx * x as f64 + ky * y as f64 + phase).cos())
                .sum::<f64>()
                * scale
        });
        Ok(Self { spec, texture })
    }

    pub fn spec(&self) -> &PhantomSpec {
        &self.spec
    }

    pub fn pose(&self, t: usize) -> EllipsePose {
        let s = &self.spec;
        let phase = 2.0 * PI * t as f64 / s.period;
        let grow = 1.0 + s.deformation * (phase + PI / 2.0).sin();
        EllipsePose {
            cx: s.center.0,
            cy: s.center.1 + s.amplitude * phase.sin(),
            a: s.semi_axes.0 * grow,
            b: s.semi_axes.1 * grow,
        }
    }

    pub fn mask(&self, t: usize) -> Mask {
        let pose = self.pose(t);
        Mask::from_fn(t, self.spec.width, self.spec.height, |x, y| pose.contains(x, y))
    }

    pub fn frame(&self, t: usize) -> Frame {
        let s = &self.spec;
        let pose = self.pose(t);
        let gain = 1.0 + s.drift * t as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(t as u64 + 1);
        let noise = (s.noise_sigma > 0.0).then(|| Normal::new(0.0, s.noise_sigma).expect("sigma > 0"));
        let px = Grid::from_fn(s.width, s.height, |x, y| {
            let mut v = s.background + self.texture.at(x, y);
            if pose.contains(x, y) {
                v += s.contrast;
            }
            v *= gain;
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            v.round().clamp(0.0, 65535.0) as u16
        });
        Frame::new(t, 16, px).expect("values clamped to 16 bits")
    }
}

/// Whole sequence in memory.
pub fn generate(spec: &PhantomSpec) -> Result<(SequenceMeta, Vec<Frame>, Vec<Mask>)> {
    let p = Phantom::new(spec.clone())?;
    let frames = (0..spec.frames).map(|t| p.frame(t)).collect();
    let masks = (0..spec.frames).map(|t| p.mask(t)).collect();
    Ok((spec.meta(), frames, masks))
}

/// Generate and write a sequence directory with frames and ground-truth masks.
pub fn write_phantom(spec: &PhantomSpec, dir: &Path) -> Result<SequenceMeta> {
    let (meta, frames, masks) = generate(spec)?;
    seqio::write_sequence(dir, &meta, &frames, Some(&masks))?;
    Ok(meta)
}
