//! Command-line front end: `track`, `eval`, `synth`, `bench` and `replay`.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 finished
//! but the mean per-frame latency exceeded the budget.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{dsc, evaluate_run, LatencyStats, MetricReport};
use crate::postprocess::Connectivity;
use crate::seqio::{self, Mask};
use crate::synthcine::{write_phantom, PhantomSpec};
use crate::tracker::{run_sequence, Tracker, TrackerConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID_INPUT: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_BUDGET: u8 = 3;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LATENCY_FILE: &str = "latency.json";
pub const TOOL_NAME: &str = "cinetrack";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "cinetrack", version, about = "Single-object mask propagation for cine sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate a first-frame mask through a sequence directory.
    Track(TrackArgs),
    /// Score predicted masks against reference masks.
    Eval(EvalArgs),
    /// Write a synthetic phantom sequence with ground-truth masks.
    Synth(SynthArgs),
    /// Track a generated phantom and report per-frame latency.
    Bench(BenchArgs),
    /// Re-run a recorded track run and compare its masks byte for byte.
    Replay(ReplayArgs),
}

/// Tracker settings: an optional JSON file, then flag overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON tracker config, or a run manifest whose config is reused.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Memory write cadence in frames.
    #[arg(long)]
    pub k: Option<usize>,
    /// Maximum number of memory entries.
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Neighbours per query site.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Temporal smoothing factor in (0, 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Binarization threshold in (0, 1).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Working resolution, `N` or `WxH`.
    #[arg(long, value_parser = parse_resolution)]
    pub resolution: Option<(usize, usize)>,
    /// Mean per-frame latency budget in seconds.
    #[arg(long)]
    pub budget_s: Option<f64>,
    /// Readout softmax temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Feature pooling stride.
    #[arg(long)]
    pub stride: Option<usize>,
    /// ROI padding relative to the first mask's bounding box.
    #[arg(long)]
    pub pad_factor: Option<f64>,
    /// Component connectivity, 4 or 8.
    #[arg(long)]
    pub connectivity: Option<u8>,
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad resolution {s:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

fn json_error(path: &Path, source: serde_json::Error) -> Error {
    Error::Json {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Tracker config from a JSON file holding either a config object or a run
/// manifest with a `config` field.
pub fn load_config(path: &Path) -> Result<TrackerConfig> {
    let value: serde_json::Value = read_json(path)?;
    let inner = match value {
        serde_json::Value::Object(mut map) if map.contains_key("config") => map.remove("config").expect("checked"),
        other => other,
    };
    serde_json::from_value(inner).map_err(|e| json_error(path, e))
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrackerConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => TrackerConfig::default(),
        };
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.capacity {
            c.capacity = v;
        }
        if let Some(v) = self.top_k {
            c.top_k = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some(v) = self.resolution {
            c.resolution = v;
        }
        if let Some(v) = self.budget_s {
            c.latency_budget_s = v;
        }
        if let Some(v) = self.temperature {
            c.temperature = Some(v);
        }
        if let Some(v) = self.stride {
            c.stride = v;
        }
        if let Some(v) = self.pad_factor {
            c.pad_factor = v;
        }
        if let Some(v) = self.connectivity {
            c.connectivity = Connectivity::try_from(v).map_err(Error::Config)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub frame: usize,
    pub seconds: f64,
}

/// Everything needed to reproduce a `track` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: TrackerConfig,
    pub input: PathBuf,
    pub first_mask: PathBuf,
    pub output: PathBuf,
    pub overlays: bool,
    pub frame_count: usize,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub latencies: Vec<LatencyRecord>,
    pub latency: LatencyStats,
    pub memory_high_water: usize,
    pub written_frames: Vec<usize>,
    pub fallback_frames: Vec<usize>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|e| Error::io(path, e))
}

pub fn overlay_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("overlay_{index:05}.ppm"))
}

/// Track `input` from `first_mask`, writing `mask_%05d.pgm` per frame plus
/// `latency.json` and `manifest.json` into `output`. Frames are streamed
/// from disk one at a time.
pub fn track(input: &Path, first_mask: &Path, output: &Path, config: &TrackerConfig, overlays: bool) -> Result<RunManifest> {
    let started = unix_now();
    let meta = seqio::open_sequence(input)?;
    let mask1 = seqio::read_mask(first_mask)?;
    if mask1.dims() != (meta.width, meta.height) {
        return Err(Error::Validation(format!(
            "first mask {}x{} does not match sequence {}x{}",
            mask1.width(),
            mask1.height(),
            meta.width,
            meta.height
        )));
    }
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let emit = |frame: &seqio::Frame, mask: &Mask| -> Result<()> {
        seqio::write_mask(mask, &seqio::mask_path(output, frame.index))?;
        if overlays {
            seqio::render_overlay(frame, mask, &overlay_path(output, frame.index))?;
        }
        Ok(())
    };
    let frame0 = seqio::read_frame(&seqio::frame_path(input, 0), 0, &meta)?;
    let mut tracker = Tracker::init(&frame0, &mask1, config.clone())?;
    emit(&frame0, tracker.last_mask())?;
    let mut fallback_frames = Vec::new();
    for i in 1..meta.frame_count {
        let frame = seqio::read_frame(&seqio::frame_path(input, i), i, &meta)?;
        let result = tracker.step(&frame)?;
        if result.fallback {
            fallback_frames.push(i);
        }
        emit(&frame, &result.mask)?;
    }
    let latencies: Vec<LatencyRecord> = tracker
        .latencies()
        .iter()
        .map(|&(frame, seconds)| LatencyRecord { frame, seconds })
        .collect();
    let seconds: Vec<f64> = latencies.iter().map(|l| l.seconds).collect();
    let latency = LatencyStats::from_latencies(&seconds, config.latency_budget_s).expect("at least one frame");
    let manifest = RunManifest {
        tool: TOOL_NAME.into(),
        version: VERSION.into(),
        config: config.clone(),
        input: absolute(input)?,
        first_mask: absolute(first_mask)?,
        output: absolute(output)?,
        overlays,
        frame_count: meta.frame_count,
        started_unix_s: started,
        finished_unix_s: unix_now(),
        latencies,
        latency,
        memory_high_water: tracker.memory_high_water(),
        written_frames: tracker.written_frames().to_vec(),
        fallback_frames,
    };
    write_json(&output.join(LATENCY_FILE), &manifest.latencies)?;
    write_json(&output.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub frames: usize,
    /// Frames whose replayed mask bytes differ from the recorded ones.
    pub mismatched: Vec<usize>,
}

/// Re-run the manifest's track and compare every mask file with the
/// recorded output. Replayed masks go to `output`, or a temporary directory.
pub fn replay(manifest_path: &Path, output: Option<&Path>) -> Result<ReplayOutcome> {
    let m: RunManifest = read_json(manifest_path)?;
    m.config.validate()?;
    let tmp;
    let out = match output {
        Some(p) => p.to_path_buf(),
        None => {
            tmp = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
            tmp.path().to_path_buf()
        }
    };
    if absolute(&out).ok().as_deref() == Some(m.output.as_path()) {
        return Err(Error::Validation(format!(
            "replay output {} is the recorded output directory",
            out.display()
        )));
    }
    let replayed = track(&m.input, &m.first_mask, &out, &m.config, m.overlays)?;
    let mut mismatched = Vec::new();
    for i in 0..replayed.frame_count {
        let a = seqio::mask_path(&m.output, i);
        let b = seqio::mask_path(&out, i);
        let old = fs::read(&a).map_err(|e| Error::io(&a, e))?;
        let new = fs::read(&b).map_err(|e| Error::io(&b, e))?;
        if old != new {
            mismatched.push(i);
        }
    }
    Ok(ReplayOutcome {
        frames: replayed.frame_count,
        mismatched,
    })
}

/// Path of the JSON summary written next to a CSV report.
pub fn summary_path(report: &Path) -> PathBuf {
    let candidate = report.with_extension("json");
    if candidate == report {
        report.with_extension("summary.json")
    } else {
        candidate
    }
}

fn read_latency_file(path: &Path, frames: usize) -> Result<Vec<f64>> {
    let mut records: Vec<LatencyRecord> = read_json(path)?;
    records.sort_by_key(|r| r.frame);
    let indices: Vec<usize> = records.iter().map(|r| r.frame).collect();
    if indices != (0..frames).collect::<Vec<_>>() {
        return Err(Error::Validation(format!(
            "{} lists {} latency records; expected frames 0..{frames} once each",
            path.display(),
            records.len()
        )));
    }
    Ok(records.into_iter().map(|r| r.seconds).collect())
}

/// Score `pred` against `reference`, writing the CSV to `report` and the
/// JSON summary beside it. A missing latency file leaves runtime empty.
pub fn eval(pred: &Path, reference: &Path, latency: Option<&Path>, report: &Path, budget_s: f64) -> Result<MetricReport> {
    let np = seqio::count_masks(pred)?;
    let nr = seqio::count_masks(reference)?;
    if np != nr {
        return Err(Error::Validation(format!(
            "prediction has {np} masks but reference has {nr}"
        )));
    }
    if np == 0 {
        return Err(Error::Validation(format!("no masks found in {}", pred.display())));
    }
    let preds = seqio::read_mask_series(pred, np)?;
    let refs = seqio::read_mask_series(reference, nr)?;
    let spacing = if reference.join(seqio::META_FILE).is_file() {
        seqio::read_meta(reference)?.pixel_spacing_mm
    } else {
        None
    };
    let latencies = match latency {
        Some(p) if p.is_file() => Some(read_latency_file(p, np)?),
        Some(p) => {
            eprintln!("warning: latency file {} not found; runtime columns left empty", p.display());
            None
        }
        None => None,
    };
    let metrics = evaluate_run(&preds, &refs, latencies.as_deref(), spacing, budget_s)?;
    fs::write(report, metrics.to_csv()).map_err(|e| Error::io(report, e))?;
    write_json(&summary_path(report), &metrics.summary_json())?;
    Ok(metrics)
}

fn print_report(r: &MetricReport) {
    let unit = serde_json::to_value(r.unit).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    println!("{:<12} {:>10} {:>10} {:>6}", "metric", "mean", "median", "n");
    let rows = [
        ("dsc".to_string(), r.aggregates.dsc),
        (format!("hd95 [{unit}]"), r.aggregates.hd95),
        (format!("msd [{unit}]"), r.aggregates.msd),
    ];
    for (name, s) in rows {
        match s {
            Some(s) => println!("{name:<12} {:>10.4} {:>10.4} {:>6}", s.mean, s.median, s.count),
            None => println!("{name:<12} {:>10} {:>10} {:>6}", "-", "-", 0),
        }
    }
    if r.aggregates.invalid_surface_frames > 0 {
        println!("frames without surface distances: {}", r.aggregates.invalid_surface_frames);
    }
    if let Some(l) = r.aggregates.latency {
        print_latency(&l);
    }
}

fn print_latency(l: &LatencyStats) {
    println!(
        "latency [s]  mean {:.4}  median {:.4}  p95 {:.4}  max {:.4}  budget {}  over-budget frames {}",
        l.mean_s, l.median_s, l.p95_s, l.max_s, l.budget_s, l.budget_violations
    );
}

fn budget_code(l: &LatencyStats) -> u8 {
    if l.mean_within_budget {
        EXIT_OK
    } else {
        eprintln!(
            "mean latency {:.4} s exceeds the {} s budget",
            l.mean_s, l.budget_s
        );
        EXIT_BUDGET
    }
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Sequence directory with meta.json and frame_%05d.pgm.
    #[arg(long)]
    pub input: PathBuf,
    /// Binary PGM mask for frame 0.
    #[arg(long)]
    pub first_mask: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write overlay_%05d.ppm with the mask boundary drawn.
    #[arg(long)]
    pub overlays: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// latency.json from a track run.
    #[arg(long)]
    pub latency: Option<PathBuf>,
    /// CSV output; the JSON summary is written beside it.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = crate::tracker::DEFAULT_LATENCY_BUDGET_S)]
    pub budget_s: f64,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Peak vertical displacement in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub amplitude: f64,
    /// Motion period in frames.
    #[arg(long, default_value_t = 20.0)]
    pub period: f64,
    /// Noise standard deviation in intensity units.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative semi-axis modulation in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    pub deformation: f64,
    /// Gain change per frame.
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
}

impl PhantomArgs {
    pub fn spec(&self, size: usize, frames: usize) -> PhantomSpec {
        PhantomSpec {
            amplitude: self.amplitude,
            period: self.period,
            noise_sigma: self.noise,
            seed: self.seed,
            deformation: self.deformation,
            drift: self.drift,
            ..PhantomSpec::centered(size, frames)
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub size: usize,
    #[arg(long)]
    pub frames: usize,
    #[command(flatten)]
    pub phantom: PhantomArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    #[arg(long, default_value_t = 8.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 20.0)]
    pub period: f64,
    #[arg(long, default_value_t = 8.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Write the bench report as JSON.
    #[arg(long)]
    pub save: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Keep replayed masks here instead of a temporary directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub size: usize,
    pub frames: usize,
    pub config: TrackerConfig,
    pub latency: LatencyStats,
    pub memory_high_water: usize,
    pub mean_dsc: f64,
    pub fallback_frames: usize,
}

/// Generate a phantom on disk, load it back and track it.
pub fn bench(args: &BenchArgs) -> Result<BenchReport> {
    let config = args.config.resolve()?;
    let spec = PhantomSpec {
        amplitude: args.amplitude,
        period: args.period,
        noise_sigma: args.noise,
        seed: args.seed,
        ..PhantomSpec::centered(args.size, args.frames)
    };
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    write_phantom(&spec, dir.path())?;
    let (_, frames) = seqio::read_sequence(dir.path())?;
    let truth = seqio::read_mask_series(dir.path(), frames.len())?;
    let out = run_sequence(&frames, &truth[0], &config)?;
    let scores = out
        .results
        .iter()
        .zip(&truth)
        .map(|(r, t)| dsc(&r.mask, t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(BenchReport {
        size: args.size,
        frames: args.frames,
        config,
        latency: out.latency,
        memory_high_water: out.memory_high_water,
        mean_dsc: scores.iter().sum::<f64>() / scores.len() as f64,
        fallback_frames: out.fallback_count(),
    })
}

impl Command {
    /// Run the command; `Ok` carries 0 or the budget exit code.
    pub fn run(&self) -> Result<u8> {
        match self {
            Command::Track(a) => {
                let config = a.config.resolve()?;
                let m = track(&a.input, &a.first_mask, &a.output, &config, a.overlays)?;
                println!(
                    "tracked {} frames into {} (memory high-water {}, fallbacks {})",
                    m.frame_count,
                    a.output.display(),
                    m.memory_high_water,
                    m.fallback_frames.len()
                );
                print_latency(&m.latency);
                Ok(budget_code(&m.latency))
            }
            Command::Eval(a) => {
                let r = eval(&a.pred, &a.reference, a.latency.as_deref(), &a.report, a.budget_s)?;
                println!("frames {}", r.rows.len());
                print_report(&r);
                Ok(EXIT_OK)
            }
            Command::Synth(a) => {
                let meta = write_phantom(&a.phantom.spec(a.size, a.frames), &a.out)?;
                println!(
                    "wrote {} frames of {}x{} to {}",
                    meta.frame_count,
                    meta.width,
                    meta.height,
                    a.out.display()
                );
                Ok(EXIT_OK)
            }
            Command::Bench(a) => {
                let r = bench(a)?;
                let res = r.config.resolution;
                println!(
                    "bench {}x{} phantom, {} frames, working resolution {}x{}",
                    r.size, r.size, r.frames, res.0, res.1
                );
                println!("{:<18} {:>10}", "mean [s]", format!("{:.4}", r.latency.mean_s));
                println!("{:<18} {:>10}", "median [s]", format!("{:.4}", r.latency.median_s));
                println!("{:<18} {:>10}", "p95 [s]", format!("{:.4}", r.latency.p95_s));
                println!("{:<18} {:>10}", "max [s]", format!("{:.4}", r.latency.max_s));
                println!("{:<18} {:>10}", "budget [s]", r.latency.budget_s);
                println!("{:<18} {:>10}", "memory high-water", r.memory_high_water);
                println!("{:<18} {:>10}", "mean dsc", format!("{:.4}", r.mean_dsc));
                println!("{:<18} {:>10}", "fallback frames", r.fallback_frames);
                if let Some(p) = &a.save {
                    write_json(p, &r)?;
                }
                Ok(budget_code(&r.latency))
            }
            Command::Replay(a) => {
                let o = replay(&a.manifest, a.output.as_deref())?;
                if o.mismatched.is_empty() {
                    println!("replayed {} frames: all masks byte-identical", o.frames);
                    Ok(EXIT_OK)
                } else {
                    eprintln!(
                        "replayed {} frames: {} masks differ (first at frame {})",
                        o.frames,
                        o.mismatched.len(),
                        o.mismatched[0]
                    );
                    Ok(EXIT_RUNTIME)
                }
            }
        }
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run_from_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID_INPUT } else { EXIT_OK };
        }
    };
    match cli.command.run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_invalid_input() {
                EXIT_INVALID_INPUT
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
