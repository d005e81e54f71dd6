//! C ABI over the cinetrack tracker and metrics.
//!
//! Every function returns a [`CtStatus`]; on failure the message is
//! available from [`ct_last_error_message`] on the same thread. Images are
//! row-major `width * height` buffers. Mask buffers use 0 for background and
//! any other value for foreground; masks written by the library use 0 and 1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cinetrack::metrics;
use cinetrack::postprocess::Connectivity;
use cinetrack::{Error, Frame, Grid, Mask, Tracker, TrackerConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad dimensions, configuration, or data.
    InvalidInput = 2,
    /// The pipeline failed while running.
    Runtime = 3,
    /// A surface distance is undefined because a mask is empty.
    EmptySurface = 4,
    /// An internal panic was caught.
    Panic = 5,
}

/// Tracker configuration. Start from [`ct_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtConfig {
    pub resolution_width: usize,
    pub resolution_height: usize,
    /// Memory write cadence in frames.
    pub k: usize,
    pub capacity: usize,
    pub top_k: usize,
    /// Readout temperature; 0 selects the square root of the key dimension.
    pub temperature: f64,
    pub alpha: f64,
    pub tau: f64,
    /// 4 or 8.
    pub connectivity: u8,
    pub pad_factor: f64,
    pub latency_budget_s: f64,
    pub stride: usize,
}

/// Per-frame outcome of [`ct_tracker_step`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CtFrameInfo {
    pub elapsed_s: f64,
    pub memory_size: usize,
    /// The prediction was empty and the previous mask was held.
    pub fallback: bool,
    pub wrote_memory: bool,
}

/// Opaque tracker handle.
pub struct CtTracker {
    inner: Tracker,
    width: usize,
    height: usize,
    bit_depth: u8,
}

struct Failure(CtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_invalid_input() {
            CtStatus::InvalidInput
        } else {
            CtStatus::Runtime
        };
        Failure(status, e.to_string())
    }
}

fn null_arg(name: &str) -> Failure {
    Failure(CtStatus::NullPointer, format!("{name} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CtStatus::InvalidInput, msg.into())
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, record any failure or panic, and map it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            CtStatus::Panic
        }
    }
}

fn pixel_count(width: usize, height: usize) -> Result<usize, Failure> {
    match width.checked_mul(height) {
        Some(n) if n > 0 => Ok(n),
        _ => Err(invalid(format!("bad dimensions {width}x{height}"))),
    }
}

/// # Safety
/// `data` must point to `len` readable elements.
unsafe fn slice<'a, T>(data: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if data.is_null() {
        return Err(null_arg(name));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

/// # Safety
/// `data` must point to `width * height` readable bytes.
unsafe fn mask_arg(data: *const u8, width: usize, height: usize, name: &str) -> Result<Mask, Failure> {
    let bytes = slice(data, pixel_count(width, height)?, name)?;
    Ok(Mask::from_fn(0, width, height, |x, y| bytes[y * width + x] != 0))
}

impl From<&TrackerConfig> for CtConfig {
    fn from(c: &TrackerConfig) -> Self {
        Self {
            resolution_width: c.resolution.0,
            resolution_height: c.resolution.1,
            k: c.k,
            capacity: c.capacity,
            top_k: c.top_k,
            temperature: c.temperature.unwrap_or(0.0),
            alpha: c.alpha,
            tau: c.tau,
            connectivity: c.connectivity.into(),
            pad_factor: c.pad_factor,
            latency_budget_s: c.latency_budget_s,
            stride: c.stride,
        }
    }
}

impl TryFrom<&CtConfig> for TrackerConfig {
    type Error = Error;

    fn try_from(c: &CtConfig) -> Result<Self, Error> {
        let config = TrackerConfig {
            resolution: (c.resolution_width, c.resolution_height),
            k: c.k,
            capacity: c.capacity,
            top_k: c.top_k,
            temperature: (c.temperature != 0.0).then_some(c.temperature),
            alpha: c.alpha,
            tau: c.tau,
            connectivity: Connectivity::try_from(c.connectivity).map_err(Error::Config)?,
            pad_factor: c.pad_factor,
            latency_budget_s: c.latency_budget_s,
            stride: c.stride,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Default configuration.
#[no_mangle]
pub extern "C" fn ct_config_default() -> CtConfig {
    CtConfig::from(&TrackerConfig::default())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ct_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version has no interior nul"),
    };
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ct_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Create a tracker from frame 0 and its mask.
///
/// `config` may be null for defaults. `bit_depth` is 8 or 16.
///
/// # Safety
/// `pixels` must point to `width * height` values and `mask` to
/// `width * height` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_tracker_new(
    width: usize,
    height: usize,
    bit_depth: u8,
    pixels: *const u16,
    mask: *const u8,
    config: *const CtConfig,
    out: *mut *mut CtTracker,
) -> CtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        *out = ptr::null_mut();
        let config = match config.as_ref() {
            Some(c) => TrackerConfig::try_from(c)?,
            None => TrackerConfig::default(),
        };
        let n = pixel_count(width, height)?;
        let px = slice(pixels, n, "pixels")?;
        let frame = Frame::new(0, bit_depth, Grid::from_vec(width, height, px.to_vec())?)?;
        let mask = mask_arg(mask, width, height, "mask")?;
        let inner = Tracker::init(&frame, &mask, config)?;
        *out = Box::into_raw(Box::new(CtTracker {
            inner,
            width,
            height,
            bit_depth,
        }));
        Ok(())
    })
}

/// Track one frame. `frame_index` must exceed every earlier index. The
/// predicted mask is written to `out_mask`; `out_info` may be null.
///
/// # Safety
/// `tracker` must come from [`ct_tracker_new`] and not be freed. `pixels`
/// must point to `width * height` values and `out_mask` to as many
/// writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ct_tracker_step(
    tracker: *mut CtTracker,
    frame_index: usize,
    pixels: *const u16,
    out_mask: *mut u8,
    out_info: *mut CtFrameInfo,
) -> CtStatus {
    guard(|| {
        let t = tracker.as_mut().ok_or_else(|| null_arg("tracker"))?;
        if out_mask.is_null() {
            return Err(null_arg("out_mask"));
        }
        let n = t.width * t.height;
        let px = slice(pixels, n, "pixels")?;
        let frame = Frame::new(frame_index, t.bit_depth, Grid::from_vec(t.width, t.height, px.to_vec())?)?;
        let r = t.inner.step(&frame)?;
        let dst = std::slice::from_raw_parts_mut(out_mask, n);
        dst.copy_from_slice(r.mask.labels().as_slice());
        if let Some(info) = out_info.as_mut() {
            *info = CtFrameInfo {
                elapsed_s: r.elapsed_s,
                memory_size: r.memory_size,
                fallback: r.fallback,
                wrote_memory: r.wrote_memory,
            };
        }
        Ok(())
    })
}

/// Number of memory entries.
///
/// # Safety
/// `tracker` must come from [`ct_tracker_new`] and not be freed; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_tracker_memory_size(tracker: *const CtTracker, out: *mut usize) -> CtStatus {
    guard(|| {
        let t = tracker.as_ref().ok_or_else(|| null_arg("tracker"))?;
        let out = out.as_mut().ok_or_else(|| null_arg("out"))?;
        *out = t.inner.memory_size();
        Ok(())
    })
}

/// Release a tracker. Null is ignored.
///
/// # Safety
/// `tracker` must come from [`ct_tracker_new`] and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn ct_tracker_free(tracker: *mut CtTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Dice coefficient of two masks; 1 when both are empty.
///
/// # Safety
/// `a` and `b` must point to `width * height` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_dsc(width: usize, height: usize, a: *const u8, b: *const u8, out: *mut f64) -> CtStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null_arg("out"))?;
        *out = metrics::dsc(&mask_arg(a, width, height, "a")?, &mask_arg(b, width, height, "b")?)?;
        Ok(())
    })
}

type SurfaceMetric = fn(&Mask, &Mask, f64) -> cinetrack::Result<Option<f64>>;

unsafe fn surface_metric(
    metric: SurfaceMetric,
    width: usize,
    height: usize,
    a: *const u8,
    b: *const u8,
    spacing: f64,
    out: *mut f64,
) -> CtStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null_arg("out"))?;
        let value = metric(&mask_arg(a, width, height, "a")?, &mask_arg(b, width, height, "b")?, spacing)?;
        *out = value.ok_or_else(|| Failure(CtStatus::EmptySurface, "a mask is empty".into()))?;
        Ok(())
    })
}

/// 95th-percentile symmetric surface distance, scaled by `spacing`.
/// Returns `EmptySurface` when either mask is empty.
///
/// # Safety
/// `a` and `b` must point to `width * height` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_hd95(
    width: usize,
    height: usize,
    a: *const u8,
    b: *const u8,
    spacing: f64,
    out: *mut f64,
) -> CtStatus {
    surface_metric(metrics::hd95, width, height, a, b, spacing, out)
}

/// Mean symmetric surface distance, scaled by `spacing`.
/// Returns `EmptySurface` when either mask is empty.
///
/// # Safety
/// `a` and `b` must point to `width * height` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_msd(
    width: usize,
    height: usize,
    a: *const u8,
    b: *const u8,
    spacing: f64,
    out: *mut f64,
) -> CtStatus {
    surface_metric(metrics::msd, width, height, a, b, spacing, out)
}
