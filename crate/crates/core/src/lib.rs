//! Memory-based single-object mask propagation for 2D cine sequences.
//!
//! Given a first frame and its binary mask, [`tracker::Tracker`] propagates
//! the mask through later frames by matching local features against a
//! bounded memory of earlier frames.

pub mod cli;
pub mod encoder;
pub mod error;
pub mod grid;
pub mod imaging;
pub mod memory;
pub mod metrics;
pub mod postprocess;
pub mod segmenter;
pub mod seqio;
pub mod synthcine;
pub mod tracker;

pub use error::{Error, Result};
pub use grid::{Grid, Plane};
pub use seqio::{Frame, Mask, SequenceMeta};
pub use tracker::{run_sequence, FrameResult, RunOutput, Tracker, TrackerConfig};
