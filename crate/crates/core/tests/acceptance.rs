//! Acceptance checks, one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach stdout.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cinetrack::cli::{self, BenchArgs, ConfigArgs};
use cinetrack::encoder::FeatureGrid;
use cinetrack::memory::MemoryStore;
use cinetrack::metrics::{self, SurfaceDistances};
use cinetrack::postprocess::{label_components, largest_component, threshold, Connectivity, SmootherState};
use cinetrack::segmenter::ProbMap;
use cinetrack::synthcine::{generate, write_phantom, Phantom, PhantomSpec};
use cinetrack::{run_sequence, Error, Grid, Mask, Tracker, TrackerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean per-frame latency gate in seconds.
const LATENCY_BUDGET_S: f64 = 1.0;
/// Wall-clock gate for the 10,000-frame memory run.
const LONG_RUN_LIMIT_S: f64 = 60.0;
const READOUT_TOL: f64 = 1e-9;
const RATIO_TOL: f64 = 1e-12;
const MSD_TOL: f64 = 1e-9;
const STATIC_DSC_MIN: f64 = 0.99;
const MOTION_MARGIN: f64 = 0.05;
/// Pinned from calibration runs on the seeded phantom (measured mean DSC
/// about 0.91 against a frozen baseline of about 0.69).
const MOTION_DSC_FLOOR: f64 = 0.70;
const PHANTOM_SEED: u64 = 2024;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} {id}. {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, name, pass, detail }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn latency_contract() -> Outcome {
    let args = BenchArgs {
        size: 256,
        frames: 200,
        amplitude: 8.0,
        period: 20.0,
        noise: 8.0,
        seed: PHANTOM_SEED,
        save: None,
        config: ConfigArgs::default(),
    };
    let t0 = Instant::now();
    let r = match cli::bench(&args) {
        Ok(r) => r,
        Err(e) => return report(1, "latency contract", false, format!("bench failed: {e}")),
    };
    let wall = t0.elapsed().as_secs_f64();
    let info = BenchArgs { size: 384, frames: 30, ..args };
    let info_line = match cli::bench(&info) {
        Ok(i) => format!("; info 384x384/30 frames mean {:.3} s", i.latency.mean_s),
        Err(e) => format!("; info 384 run failed: {e}"),
    };
    report(
        1,
        "latency contract",
        r.latency.mean_s < LATENCY_BUDGET_S && r.latency.budget_s == LATENCY_BUDGET_S,
        format!(
            "bench 256x256/200 mean {:.3} s (median {:.3}, p95 {:.3}) < {LATENCY_BUDGET_S} s, wall {wall:.1} s, dsc {:.3}{info_line}",
            r.latency.mean_s, r.latency.median_s, r.latency.p95_s, r.mean_dsc
        ),
    )
}

fn memory_cap_arithmetic() -> Outcome {
    let frames = 10_000;
    let spec = PhantomSpec {
        noise_sigma: 8.0,
        seed: PHANTOM_SEED,
        ..PhantomSpec::centered(128, frames)
    };
    let phantom = Phantom::new(spec).expect("valid phantom");
    let config = TrackerConfig {
        resolution: (64, 64),
        k: 5,
        capacity: 64,
        ..TrackerConfig::default()
    };
    let t0 = Instant::now();
    let mut tracker = Tracker::init(&phantom.frame(0), &phantom.mask(0), config).expect("init");
    let mut over_capacity = false;
    for t in 1..frames {
        if let Err(e) = tracker.step(&phantom.frame(t)) {
            return report(2, "memory cap arithmetic", false, format!("step {t} failed: {e}"));
        }
        over_capacity |= tracker.memory_size() > 64;
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let entries = tracker.memory().entries();
    let has_first = entries.iter().any(|e| e.frame_index == 0 && e.is_permanent());
    let on_cadence = entries.iter().all(|e| e.frame_index % 5 == 0);
    let writes = tracker.written_frames().len();
    let pass = entries.len() == 64 && has_first && on_cadence && !over_capacity && elapsed < LONG_RUN_LIMIT_S;
    report(
        2,
        "memory cap arithmetic",
        pass,
        format!(
            "{frames} frames (128x128 source, 64x64 working): {} entries, frame 0 kept {has_first}, {writes} writes, never above capacity {}, {elapsed:.1} s < {LONG_RUN_LIMIT_S} s",
            entries.len(),
            !over_capacity
        ),
    )
}

fn random_features(rng: &mut ChaCha8Rng, w: usize, h: usize, key_dim: usize, value_dim: usize, coarse: bool) -> FeatureGrid {
    let key = |rng: &mut ChaCha8Rng| {
        if coarse {
            rng.gen_range(-2..=2) as f64 * 0.5
        } else {
            rng.gen_range(-3.0..3.0)
        }
    };
    FeatureGrid {
        width: w,
        height: h,
        key_dim,
        value_dim,
        stride: 1,
        frame_index: 0,
        keys: (0..w * h * key_dim).map(|_| key(rng)).collect(),
        values: (0..w * h * value_dim).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}

/// Brute-force readout: all stored sites ranked by (distance, position in
/// the concatenation of entries), the best `top_k` softmax-weighted.
/// Returns per-site values and per-entry mass.
fn oracle_readout(stored: &[&FeatureGrid], query: &FeatureGrid, top_k: usize, temperature: f64) -> (Vec<f64>, Vec<f64>) {
    let value_dim = stored[0].value_dim;
    let mut values = vec![0.0; query.sites() * value_dim];
    let mut mass = vec![0.0; stored.len()];
    for q in 0..query.sites() {
        let qk = &query.keys[q * query.key_dim..(q + 1) * query.key_dim];
        let mut cands = Vec::new();
        for (e, g) in stored.iter().enumerate() {
            for s in 0..g.sites() {
                let k = &g.keys[s * g.key_dim..(s + 1) * g.key_dim];
                let d: f64 = qk.iter().zip(k).map(|(a, b)| (a - b) * (a - b)).sum();
                cands.push((d, e, s));
            }
        }
        // stable sort keeps concatenation order among equal distances
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        cands.truncate(top_k);
        let sims: Vec<f64> = cands.iter().map(|c| -c.0 / temperature).collect();
        let top = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = sims.iter().map(|s| (s - top).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (&(_, e, s), x) in cands.iter().zip(&exps) {
            let w = x / z;
            mass[e] += w;
            for c in 0..value_dim {
                values[q * value_dim + c] += w * stored[e].values[s * value_dim + c];
            }
        }
    }
    (values, mass)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn readout_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let instances = 1200;
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let key_dim = rng.gen_range(1..=16);
        let value_dim = rng.gen_range(1..=3);
        let coarse = i % 4 == 0;
        let n_entries = rng.gen_range(1..=5);
        let grids: Vec<FeatureGrid> = (0..n_entries)
            .map(|_| {
                let (w, h) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
                random_features(&mut rng, w, h, key_dim, value_dim, coarse)
            })
            .collect();
        let mut store = MemoryStore::new(8, 1).expect("store");
        for (f, g) in grids.iter().enumerate() {
            store.write(g.clone(), f).expect("write");
        }
        let (qw, qh) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let query = random_features(&mut rng, qw, qh, key_dim, value_dim, coarse);
        let total: usize = grids.iter().map(FeatureGrid::sites).sum();
        let top_k = total + rng.gen_range(0..3);
        let temperature = if rng.gen_bool(0.5) {
            (key_dim as f64).sqrt()
        } else {
            rng.gen_range(0.05..5.0)
        };
        let got = match store.read(&query, top_k, temperature) {
            Ok(r) => r,
            Err(e) => return report(3, "readout oracle equivalence", false, format!("instance {i}: {e}")),
        };
        let refs: Vec<&FeatureGrid> = grids.iter().collect();
        let (values, mass) = oracle_readout(&refs, &query, top_k, temperature);
        let sites = query.sites() as f64;
        let usages: Vec<f64> = store.entries()[1..].iter().map(|e| e.usage()).collect();
        let want_usage: Vec<f64> = mass[1..].iter().map(|m| m / sites).collect();
        worst = worst
            .max(max_abs_diff(&got.values, &values))
            .max(max_abs_diff(&got.entry_mass, &mass))
            .max(max_abs_diff(&usages, &want_usage));
    }
    report(
        3,
        "readout oracle equivalence",
        worst <= READOUT_TOL,
        format!("{instances} dense instances, grids up to 8x8, max deviation {worst:.2e} <= {READOUT_TOL:e}"),
    )
}

fn is_boundary_ref(m: &Mask, x: usize, y: usize) -> bool {
    let (w, h) = m.dims();
    if !m.is_fg(x, y) {
        return false;
    }
    let nbrs = [(x as isize - 1, y as isize), (x as isize + 1, y as isize), (x as isize, y as isize - 1), (x as isize, y as isize + 1)];
    nbrs.iter().any(|&(nx, ny)| {
        nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize || !m.is_fg(nx as usize, ny as usize)
    })
}

/// O(n^2) directed boundary distances, row-major boundary order.
fn brute_directed(a: &Mask, b: &Mask, spacing: f64) -> Vec<f64> {
    let (w, h) = a.dims();
    let border = |m: &Mask| -> Vec<(usize, usize)> {
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| is_boundary_ref(m, x, y))
            .collect()
    };
    let (ba, bb) = (border(a), border(b));
    ba.iter()
        .map(|&(x, y)| {
            let best = bb
                .iter()
                .map(|&(u, v)| {
                    let dx = x as i64 - u as i64;
                    let dy = y as i64 - v as i64;
                    (dx * dx + dy * dy) as u64
                })
                .min()
                .expect("non-empty boundary");
            (best as f64).sqrt() * spacing
        })
        .collect()
}

fn brute_percentile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        s[lo]
    } else {
        s[lo] + frac * (s[hi] - s[lo])
    }
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Mask {
    match rng.gen_range(0..3) {
        0 => {
            let p = rng.gen_range(0.05..0.6);
            Mask::from_fn(0, w, h, |_, _| rng.gen_bool(p))
        }
        1 => {
            let rects: Vec<(usize, usize, usize, usize)> = (0..rng.gen_range(1..4))
                .map(|_| {
                    let x0 = rng.gen_range(0..w);
                    let y0 = rng.gen_range(0..h);
                    (x0, y0, rng.gen_range(1..=w - x0), rng.gen_range(1..=h - y0))
                })
                .collect();
            Mask::from_fn(0, w, h, |x, y| rects.iter().any(|&(x0, y0, rw, rh)| x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh))
        }
        _ => {
            let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
            let (a, b) = (rng.gen_range(0.5..w as f64), rng.gen_range(0.5..h as f64));
            Mask::from_fn(0, w, h, |x, y| {
                let u = (x as f64 - cx) / a;
                let v = (y as f64 - cy) / b;
                u * u + v * v <= 1.0
            })
        }
    }
}

fn metric_oracle() -> Outcome {
    let mut failures = Vec::new();
    // hand case: 2x2 block against itself shifted right by one
    let a = Mask::from_fn(0, 6, 6, |x, y| (1..3).contains(&x) && (1..3).contains(&y));
    let b = Mask::from_fn(0, 6, 6, |x, y| (2..4).contains(&x) && (1..3).contains(&y));
    let inter = (0..6).flat_map(|y| (0..6).map(move |x| (x, y))).filter(|&(x, y)| a.is_fg(x, y) && b.is_fg(x, y)).count();
    let hand = 2.0 * inter as f64 / 8.0;
    if hand != 0.5 || metrics::dsc(&a, &b).unwrap() != hand {
        failures.push("shifted block dsc".to_string());
    }
    // interpolation: positions 0.95 * 7 = 6.65 between order statistics 6 and 7
    let stated = SurfaceDistances { a_to_b: vec![0.0, 0.0, 0.0, 10.0], b_to_a: vec![0.0, 0.0, 0.0, 10.0] };
    let sorted_stated = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.0, 10.0];
    let by_hand = sorted_stated[6] + 0.65 * (sorted_stated[7] - sorted_stated[6]);
    if (stated.hd95() - by_hand).abs() > RATIO_TOL || by_hand != 10.0 {
        failures.push(format!("hd95 stated lists {} vs hand {by_hand}", stated.hd95()));
    }
    let single_ten = SurfaceDistances { a_to_b: vec![0.0, 0.0, 0.0, 10.0], b_to_a: vec![0.0; 4] };
    let by_hand = 0.0 + 0.65 * (10.0 - 0.0);
    if (single_ten.hd95() - by_hand).abs() > RATIO_TOL || (by_hand - 6.5).abs() > RATIO_TOL {
        failures.push(format!("hd95 one outlier {} vs hand {by_hand}", single_ten.hd95()));
    }
    let p1 = Mask::from_fn(0, 16, 16, |x, y| (x, y) == (2, 5));
    let p2 = Mask::from_fn(0, 16, 16, |x, y| (x, y) == (5, 9));
    if metrics::hd95(&p1, &p2, 1.0).unwrap() != Some(5.0) || metrics::msd(&p1, &p2, 1.0).unwrap() != Some(5.0) {
        failures.push("single pixels 5 apart".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let pairs = 600;
    let mut compared = 0;
    for i in 0..pairs {
        let (w, h) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
        let a = random_mask(&mut rng, w, h);
        let b = if rng.gen_bool(0.1) { a.clone() } else { random_mask(&mut rng, w, h) };
        let spacing = if rng.gen_bool(0.5) { 1.0 } else { rng.gen_range(0.3..2.5) };
        let (na, nb) = (a.foreground_count(), b.foreground_count());
        let inter = a.foreground().filter(|&(x, y)| b.is_fg(x, y)).count();
        let want_dsc = if na + nb == 0 { 1.0 } else { 2.0 * inter as f64 / (na + nb) as f64 };
        if (metrics::dsc(&a, &b).unwrap() - want_dsc).abs() > RATIO_TOL {
            failures.push(format!("pair {i}: dsc"));
        }
        let got = metrics::surface_distances(&a, &b, spacing).unwrap();
        if na == 0 || nb == 0 {
            if got.is_some() {
                failures.push(format!("pair {i}: empty mask gave distances"));
            }
            continue;
        }
        let got = got.expect("both non-empty");
        let ab = brute_directed(&a, &b, spacing);
        let ba = brute_directed(&b, &a, spacing);
        if got.a_to_b != ab || got.b_to_a != ba {
            failures.push(format!("pair {i}: directed distances differ"));
            continue;
        }
        let all: Vec<f64> = ab.iter().chain(&ba).copied().collect();
        if metrics::hd95(&a, &b, spacing).unwrap() != Some(brute_percentile(&all, 0.95)) {
            failures.push(format!("pair {i}: hd95"));
        }
        let msd = metrics::msd(&a, &b, spacing).unwrap().expect("defined");
        if (msd - mean(&all)).abs() > MSD_TOL {
            failures.push(format!("pair {i}: msd"));
        }
        compared += 1;
    }
    report(
        4,
        "metric oracle equivalence",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{pairs} random pairs up to 64x64 ({compared} with surfaces) plus hand cases: distances exact, dsc within {RATIO_TOL:e}")
        } else {
            format!("{} mismatches, first: {}", failures.len(), failures[0])
        },
    )
}

fn static_fidelity() -> Outcome {
    let spec = PhantomSpec { seed: PHANTOM_SEED, ..PhantomSpec::centered(128, 100) };
    let (_, frames, masks) = generate(&spec).expect("phantom");
    let out = match run_sequence(&frames, &masks[0], &TrackerConfig::default()) {
        Ok(o) => o,
        Err(e) => return report(5, "static-scene fidelity", false, format!("run failed: {e}")),
    };
    let scores: Vec<f64> = out.results.iter().map(|r| metrics::dsc(&r.mask, &masks[0]).unwrap()).collect();
    let min = scores.iter().copied().fold(1.0, f64::min);
    report(
        5,
        "static-scene fidelity",
        min >= STATIC_DSC_MIN,
        format!("100 frames 128x128, min dsc vs first mask {min:.4} >= {STATIC_DSC_MIN}, mean latency {:.3} s", out.latency.mean_s),
    )
}

fn motion_tracking() -> Outcome {
    let spec = PhantomSpec {
        amplitude: 8.0,
        period: 20.0,
        noise_sigma: 0.02 * 400.0,
        seed: PHANTOM_SEED,
        ..PhantomSpec::centered(128, 200)
    };
    assert_eq!(spec.contrast, 400.0);
    let (_, frames, masks) = generate(&spec).expect("phantom");
    let out = match run_sequence(&frames, &masks[0], &TrackerConfig::default()) {
        Ok(o) => o,
        Err(e) => return report(6, "motion tracking beats frozen baseline", false, format!("run failed: {e}")),
    };
    let tracked: Vec<f64> = out.results.iter().zip(&masks).map(|(r, m)| metrics::dsc(&r.mask, m).unwrap()).collect();
    let frozen: Vec<f64> = masks.iter().map(|m| metrics::dsc(&masks[0], m).unwrap()).collect();
    let (t, f) = (mean(&tracked), mean(&frozen));
    report(
        6,
        "motion tracking beats frozen baseline",
        t >= f + MOTION_MARGIN && t > MOTION_DSC_FLOOR,
        format!(
            "mean dsc {t:.4} vs frozen {f:.4} (margin {:.4} >= {MOTION_MARGIN}), floor {MOTION_DSC_FLOOR}, fallbacks {}",
            t - f,
            out.fallback_count()
        ),
    )
}

fn flood_components(m: &Mask, diagonal: bool) -> usize {
    let (w, h) = m.dims();
    let mut seen = vec![false; w * h];
    let mut count = 0;
    for start in 0..w * h {
        let (sx, sy) = (start % w, start / w);
        if seen[start] || !m.is_fg(sx, sy) {
            continue;
        }
        count += 1;
        let mut stack = vec![(sx, sy)];
        seen[start] = true;
        while let Some((x, y)) = stack.pop() {
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if (!diagonal && nx != x && ny != y) || seen[ny * w + nx] || !m.is_fg(nx, ny) {
                        continue;
                    }
                    seen[ny * w + nx] = true;
                    stack.push((nx, ny));
                }
            }
        }
    }
    count
}

fn postprocess_properties() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let pm = |v: f64| ProbMap::new(0, Grid::filled(4, 4, v)).unwrap();

    let (alpha, p0, target) = (0.3, 0.9, 0.2);
    let mut s = SmootherState::new(alpha).unwrap();
    s.update(&pm(p0)).unwrap();
    for n in 1..=25 {
        let out = s.update(&pm(target)).unwrap();
        let want = (1.0f64 - alpha).powi(n) * (p0 - target);
        if ((out.values.at(0, 0) - target) - want).abs() > RATIO_TOL {
            failures.push(format!("ema step {n}"));
        }
    }
    let mut half = SmootherState::new(0.5).unwrap();
    half.update(&pm(0.0)).unwrap();
    if half.update(&pm(1.0)).unwrap() != pm(0.5) {
        failures.push("ema alpha 0.5".into());
    }

    for (v, want) in [(0.6, 16), (0.5, 16), (0.49, 0)] {
        if threshold(&pm(v), 0.5).foreground_count() != want {
            failures.push(format!("threshold {v}"));
        }
    }

    let rows = ["###......", "##.......", ".........", "......###", "......##."];
    let tie = Mask::from_fn(0, 9, 5, |x, y| rows[y].as_bytes()[x] == b'#');
    let kept = largest_component(&tie, Connectivity::Eight);
    if kept.foreground_count() != 5 || !kept.is_fg(0, 0) || kept.is_fg(6, 3) {
        failures.push("tie-break".into());
    }
    let diag = Mask::from_fn(0, 2, 2, |x, y| x == y);
    if label_components(&diag, Connectivity::Four).1.len() != 2 || label_components(&diag, Connectivity::Eight).1.len() != 1 {
        failures.push("connectivity".into());
    }
    if !largest_component(&Mask::empty(0, 5, 5), Connectivity::Eight).is_blank() {
        failures.push("empty mask".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..400 {
        let (w, h) = (rng.gen_range(1..20), rng.gen_range(1..20));
        let p = rng.gen_range(0.1..0.7);
        let m = Mask::from_fn(0, w, h, |_, _| rng.gen_bool(p));
        let eight = rng.gen_bool(0.5);
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let out = largest_component(&m, conn);
        let subset = out.foreground().all(|(x, y)| m.is_fg(x, y));
        let single = flood_components(&out, eight) == usize::from(!m.is_blank());
        let idempotent = largest_component(&out, conn) == out;
        if !(subset && single && idempotent) {
            failures.push(format!("random mask {i}"));
        }
    }
    report(
        7,
        "postprocessing properties",
        failures.is_empty(),
        if failures.is_empty() {
            "ema convergence, threshold inclusivity, tie-break, connectivity, 400 random subset/single-component/idempotence checks".into()
        } else {
            format!("{} failures, first: {}", failures.len(), failures[0])
        },
    )
}

fn mask_files(dir: &Path, n: usize) -> Vec<Vec<u8>> {
    (0..n).map(|i| fs::read(dir.join(format!("mask_{i:05}.pgm"))).expect("mask file")).collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let seq = dir.path().join("seq");
    let spec = PhantomSpec {
        amplitude: 6.0,
        noise_sigma: 8.0,
        deformation: 0.1,
        seed: PHANTOM_SEED,
        ..PhantomSpec::centered(96, 40)
    };
    write_phantom(&spec, &seq).expect("phantom");
    let config = TrackerConfig { resolution: (192, 192), ..TrackerConfig::default() };
    let first = seq.join("mask_00000.pgm");
    let out = dir.path().join("out");
    let manifest = match cli::track(&seq, &first, &out, &config, false) {
        Ok(m) => m,
        Err(e) => return report(8, "determinism and replay", false, format!("track failed: {e}")),
    };
    let replay = Command::new(env!("CARGO_BIN_EXE_cinetrack"))
        .args(["replay", "--manifest"])
        .arg(out.join("manifest.json"))
        .arg("--output")
        .arg(dir.path().join("replayed"))
        .output()
        .expect("binary runs");
    let replay_ok = replay.status.code() == Some(0);
    let identical = replay_ok && mask_files(&out, 40) == mask_files(&dir.path().join("replayed"), 40);

    let again = dir.path().join("again");
    let second = cli::track(&seq, &first, &again, &config, false).expect("second run");
    let same_run = mask_files(&out, 40) == mask_files(&again, 40) && second.written_frames == manifest.written_frames;
    report(
        8,
        "determinism and replay",
        identical && same_run,
        format!("40-frame run replayed in a separate process: byte-identical {identical}; repeated in-process run identical {same_run}"),
    )
}

#[derive(Debug, Clone)]
struct SimEntry {
    order: u64,
    usage: f64,
    permanent: bool,
}

/// Lowest usage, oldest on ties, among evictable entries.
fn sim_victim(entries: &[SimEntry], exclude: Option<u64>) -> Option<u64> {
    let mut best: Option<&SimEntry> = None;
    for e in entries.iter().filter(|e| !e.permanent && Some(e.order) != exclude) {
        best = match best {
            Some(b) if b.usage < e.usage || (b.usage == e.usage && b.order < e.order) => Some(b),
            _ => Some(e),
        };
    }
    best.map(|e| e.order)
}

fn eviction_policy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut ops = 0usize;
    let mut failures: Vec<String> = Vec::new();
    let mut evictions = 0usize;
    let mut worst_mass: f64 = 0.0;
    for trial in 0..220 {
        let capacity = rng.gen_range(1..=8);
        let cadence = rng.gen_range(1..=3);
        let mut store = MemoryStore::new(capacity, cadence).expect("store");
        let mut sim: Vec<SimEntry> = Vec::new();
        let mut grids: Vec<(u64, FeatureGrid)> = Vec::new();
        let mut next_order = 0u64;
        let mut next_frame = 0usize;
        for _ in 0..50 {
            ops += 1;
            let roll = rng.gen_range(0..100);
            if roll < 45 || store.is_empty() {
                let g = random_features(&mut rng, 2, 2, 2, 1, false);
                let frame = next_frame;
                next_frame += cadence;
                let order = next_order;
                next_order += 1;
                let outcome = store.write(g.clone(), frame).expect("write");
                sim.push(SimEntry { order, usage: if order == 0 { f64::INFINITY } else { 0.0 }, permanent: order == 0 });
                grids.push((order, g));
                if sim.len() > capacity {
                    match sim_victim(&sim, Some(order)) {
                        Some(v) => {
                            evictions += 1;
                            if outcome.evicted.as_ref().map(|e| e.write_order) != Some(v) {
                                failures.push(format!("trial {trial}: write evicted wrong entry"));
                            }
                            sim.retain(|e| e.order != v);
                        }
                        None => {
                            if outcome.stored {
                                failures.push(format!("trial {trial}: write should have been dropped"));
                            }
                            sim.retain(|e| e.order != order);
                        }
                    }
                }
                grids.retain(|(o, _)| sim.iter().any(|e| e.order == *o));
            } else if roll < 85 {
                let query = random_features(&mut rng, 2, 2, 2, 1, false);
                let total = 4 * sim.len();
                let top_k = rng.gen_range(1..=total + 1);
                let r = store.read(&query, top_k, 1.0).expect("read");
                let stored: Vec<&FeatureGrid> = grids.iter().map(|(_, g)| g).collect();
                let (values, mass) = oracle_readout(&stored, &query, top_k, 1.0);
                worst_mass = worst_mass.max(max_abs_diff(&r.entry_mass, &mass)).max(max_abs_diff(&r.values, &values));
                for (e, m) in sim.iter_mut().zip(&r.entry_mass) {
                    e.usage += m / 4.0;
                }
            } else {
                let want = sim_victim(&sim, None);
                match (store.evict_lowest(), want) {
                    (Ok(got), Some(v)) => {
                        evictions += 1;
                        if got.write_order != v {
                            failures.push(format!("trial {trial}: evict_lowest removed {} not {v}", got.write_order));
                        }
                        sim.retain(|e| e.order != v);
                        grids.retain(|(o, _)| *o != v);
                    }
                    (Err(Error::CannotEvict), None) => {}
                    (got, want) => failures.push(format!("trial {trial}: evict_lowest {got:?} vs expected {want:?}")),
                }
            }
            let live: Vec<(u64, f64)> = store.entries().iter().map(|e| (e.write_order, e.usage())).collect();
            let expected: Vec<(u64, f64)> = sim.iter().map(|e| (e.order, e.usage)).collect();
            if live != expected {
                failures.push(format!("trial {trial}: store {live:?} vs simulator {expected:?}"));
            }
            if store.len() > capacity {
                failures.push(format!("trial {trial}: {} entries over capacity {capacity}", store.len()));
            }
            if !store.entries().first().is_some_and(|e| e.write_order == 0 && e.is_permanent()) {
                failures.push(format!("trial {trial}: permanent entry missing"));
            }
        }
    }
    let pass = failures.is_empty() && ops >= 10_000 && worst_mass <= READOUT_TOL;
    report(
        9,
        "eviction policy",
        pass,
        if failures.is_empty() {
            format!("{ops} random ops, {evictions} evictions matched the reference simulator; sparse readout deviation {worst_mass:.2e}")
        } else {
            format!("{} failures, first: {}", failures.len(), failures[0])
        },
    )
}

fn main() {
    let t0 = Instant::now();
    let outcomes = vec![
        latency_contract(),
        memory_cap_arithmetic(),
        readout_oracle(),
        metric_oracle(),
        static_fidelity(),
        motion_tracking(),
        postprocess_properties(),
        determinism(),
        eviction_policy(),
    ];
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    println!(
        "acceptance: {}/{} passed in {:.1} s",
        outcomes.len() - failed.len(),
        outcomes.len(),
        t0.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        for o in failed {
            eprintln!("failed criterion {} ({}): {}", o.id, o.name, o.detail);
        }
        std::process::exit(1);
    }
}
