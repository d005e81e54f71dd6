//! Streaming single-object tracker: initialize from an annotated first
//! frame, then propagate the mask frame by frame through the feature memory.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, MultiScaleEncoder};
use crate::error::{Error, Result};
use crate::imaging::{crop_resize_mask, crop_resize_plane, normalize_zscore, roi_from_mask, RoiTransform};
use crate::memory::{MemoryStore, DEFAULT_CAPACITY, DEFAULT_TOP_K, DEFAULT_WRITE_CADENCE};
use crate::metrics::LatencyStats;
use crate::postprocess::{largest_component, threshold, Connectivity, SmootherState, DEFAULT_ALPHA, DEFAULT_TAU};
use crate::segmenter::decode;
use crate::seqio::{Frame, Mask};
use crate::grid::Grid;

pub const DEFAULT_RESOLUTION: (usize, usize) = (384, 384);
pub const DEFAULT_PAD_FACTOR: f64 = 2.0;
pub const DEFAULT_LATENCY_BUDGET_S: f64 = 1.0;

/// All pipeline knobs. Missing fields in a JSON config take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Working resolution `(width, height)`.
    pub resolution: (usize, usize),
    /// Memory write cadence in frames.
    pub k: usize,
    pub capacity: usize,
    pub top_k: usize,
    /// Softmax temperature; `None` uses `sqrt(key_dim)`.
    pub temperature: Option<f64>,
    pub alpha: f64,
    pub tau: f64,
    pub connectivity: Connectivity,
    pub pad_factor: f64,
    pub latency_budget_s: f64,
    pub stride: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            k: DEFAULT_WRITE_CADENCE,
            capacity: DEFAULT_CAPACITY,
            top_k: DEFAULT_TOP_K,
            temperature: None,
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
            connectivity: Connectivity::default(),
            pad_factor: DEFAULT_PAD_FACTOR,
            latency_budget_s: DEFAULT_LATENCY_BUDGET_S,
            stride: crate::encoder::DEFAULT_STRIDE,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k < 1 {
            return bad("k must be >= 1".into());
        }
        if self.capacity < 1 {
            return bad("capacity must be >= 1".into());
        }
        if self.top_k < 1 {
            return bad("top_k must be >= 1".into());
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("temperature {t} must be positive and finite"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} not in (0, 1]", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} not in (0, 1)", self.tau));
        }
        if !(self.pad_factor >= 0.0 && self.pad_factor.is_finite()) {
            return bad(format!("pad_factor {} must be >= 0", self.pad_factor));
        }
        if self.latency_budget_s.is_nan() || self.latency_budget_s <= 0.0 {
            return bad(format!("latency budget {} must be > 0", self.latency_budget_s));
        }
        let (w, h) = self.resolution;
        if w < 16 || h < 16 {
            return bad(format!("resolution {w}x{h} below 16x16"));
        }
        if self.stride == 0 || w % self.stride != 0 || h % self.stride != 0 {
            return bad(format!("stride {} does not divide resolution {w}x{h}", self.stride));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub index: usize,
    /// Prediction in source-frame coordinates.
    pub mask: Mask,
    pub elapsed_s: f64,
    pub memory_size: usize,
    /// The prediction was empty and the previous mask was held.
    pub fallback: bool,
    pub wrote_memory: bool,
}

/// Tracker state for one sequence.
pub struct Tracker<E: Encoder = MultiScaleEncoder> {
    config: TrackerConfig,
    encoder: E,
    temperature: f64,
    roi: RoiTransform,
    source: (usize, usize),
    memory: MemoryStore,
    smoother: SmootherState,
    last_mask: Mask,
    last_index: usize,
    latencies: Vec<(usize, f64)>,
    written: Vec<usize>,
    high_water: usize,
}

impl Tracker<MultiScaleEncoder> {
    /// Initialize with the built-in encoder.
    pub fn init(frame1: &Frame, mask1: &Mask, config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        let encoder = MultiScaleEncoder::new(config.stride)?;
        Self::with_encoder(frame1, mask1, config, encoder)
    }
}

impl<E: Encoder> Tracker<E> {
    pub fn with_encoder(frame1: &Frame, mask1: &Mask, config: TrackerConfig, encoder: E) -> Result<Self> {
        let start = Instant::now();
        config.validate()?;
        let spec = encoder.spec();
        spec.grid_dims(config.resolution.0, config.resolution.1)?;
        if mask1.dims() != frame1.dims() {
            return Err(Error::Validation(format!(
                "first mask {:?} does not match frame {:?}",
                mask1.dims(),
                frame1.dims()
            )));
        }
        if mask1.is_blank() {
            return Err(Error::EmptyInitialMask);
        }
        let roi = roi_from_mask(mask1, config.pad_factor, config.resolution)?;
        let image = crop_resize_plane(&normalize_zscore(frame1), &roi);
        let working = crop_resize_mask(mask1, &roi);
        let (w, h) = working.dims();
        let prob = Grid::from_fn(w, h, |x, y| if working.is_fg(x, y) { 1.0 } else { 0.0 });
        let features = encoder.encode_memory(&image, &prob, frame1.index)?;
        let mut memory = MemoryStore::new(config.capacity, config.k)?;
        memory.write(features, frame1.index)?;
        let temperature = config.temperature.unwrap_or((spec.key_dim as f64).sqrt());
        let smoother = SmootherState::new(config.alpha)?;
        let elapsed = start.elapsed().as_secs_f64();
        Ok(Self {
            temperature,
            roi,
            source: frame1.dims(),
            memory,
            smoother,
            last_mask: mask1.clone().with_index(frame1.index),
            last_index: frame1.index,
            latencies: vec![(frame1.index, elapsed)],
            written: vec![frame1.index],
            high_water: 1,
            config,
            encoder,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn roi(&self) -> &RoiTransform {
        &self.roi
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.memory
    }

    pub fn memory_size(&self) -> usize {
        self.memory.len()
    }

    /// Largest memory size seen so far.
    pub fn memory_high_water(&self) -> usize {
        self.high_water
    }

    pub fn last_mask(&self) -> &Mask {
        &self.last_mask
    }

    pub fn last_index(&self) -> usize {
        self.last_index
    }

    /// `(frame index, seconds)` for every processed frame, init included.
    pub fn latencies(&self) -> &[(usize, f64)] {
        &self.latencies
    }

    /// Frame indices whose features were stored in memory.
    pub fn written_frames(&self) -> &[usize] {
        &self.written
    }

    pub fn step(&mut self, frame: &Frame) -> Result<FrameResult> {
        let start = Instant::now();
        if frame.index <= self.last_index {
            return Err(Error::Sequencing {
                got: frame.index,
                last: self.last_index,
            });
        }
        if frame.dims() != self.source {
            return Err(Error::Validation(format!(
                "frame {} is {:?}, sequence is {:?}",
                frame.index,
                frame.dims(),
                self.source
            )));
        }
        let image = crop_resize_plane(&normalize_zscore(frame), &self.roi);
        let query = self.encoder.encode_query(&image, frame.index)?;
        let readout = self.memory.read(&query, self.config.top_k, self.temperature)?;
        let prob = decode(&readout, self.encoder.spec().stride, frame.index)?;
        let smoothed = self.smoother.update(&prob)?;
        let working = largest_component(&threshold(&smoothed, self.config.tau), self.config.connectivity);

        let fallback = working.is_blank();
        let mut wrote_memory = false;
        let mask = if fallback {
            self.last_mask.clone().with_index(frame.index)
        } else {
            let mask = crate::imaging::uncrop_mask(&working, &self.roi, self.source).with_index(frame.index);
            if self.memory.is_write_frame(frame.index) {
                let features = self.encoder.encode_memory_from_query(query, &image, &smoothed.values)?;
                wrote_memory = self.memory.write(features, frame.index)?.stored;
                if wrote_memory {
                    self.written.push(frame.index);
                }
            }
            self.last_mask = mask.clone();
            mask
        };
        self.last_index = frame.index;
        self.high_water = self.high_water.max(self.memory.len());
        let elapsed_s = start.elapsed().as_secs_f64();
        self.latencies.push((frame.index, elapsed_s));
        Ok(FrameResult {
            index: frame.index,
            mask,
            elapsed_s,
            memory_size: self.memory.len(),
            fallback,
            wrote_memory,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// One result per input frame; the first is the initial mask itself.
    pub results: Vec<FrameResult>,
    pub latency: LatencyStats,
    pub memory_high_water: usize,
    pub written_frames: Vec<usize>,
    pub roi: RoiTransform,
}

impl RunOutput {
    pub fn fallback_count(&self) -> usize {
        self.results.iter().filter(|r| r.fallback).count()
    }
}

/// Track a whole in-memory sequence starting from `mask1` on `frames[0]`.
pub fn run_sequence(frames: &[Frame], mask1: &Mask, config: &TrackerConfig) -> Result<RunOutput> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Validation("sequence has no frames".into()))?;
    let mut tracker = Tracker::init(first, mask1, config.clone())?;
    let mut results = Vec::with_capacity(frames.len());
    results.push(FrameResult {
        index: first.index,
        mask: tracker.last_mask().clone(),
        elapsed_s: tracker.latencies()[0].1,
        memory_size: tracker.memory_size(),
        fallback: false,
        wrote_memory: true,
    });
    for frame in &frames[1..] {
        results.push(tracker.step(frame)?);
    }
    let times: Vec<f64> = results.iter().map(|r| r.elapsed_s).collect();
    let latency = LatencyStats::from_latencies(&times, config.latency_budget_s).expect("at least one frame");
    Ok(RunOutput {
        results,
        latency,
        memory_high_water: tracker.memory_high_water(),
        written_frames: tracker.written_frames().to_vec(),
        roi: *tracker.roi(),
    })
}
