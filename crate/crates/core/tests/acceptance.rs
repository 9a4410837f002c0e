//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p maskprop --test acceptance` (add `--release` for
//! representative timings).

mod common;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::Texture;
use maskprop::eval::{confusion, format_percent, Confusion, Metrics};
use maskprop::features::{good_features, min_eig_map, CornerParams};
use maskprop::geometry::{fit_affine_lsq, ransac_affine, Correspondences, RansacParams};
use maskprop::imgcore::{build_pyramid_real, BinaryMask, ColorImage, RealImage};
use maskprop::optflow::{lk_track, FlowParams};
use maskprop::pipeline::{run_with, OutputSource, PipelineConfig, RunReport};
use maskprop::segmenter::{LatencyModel, Segmenter};
use maskprop::synth::{SynthScript, Synthesizer};
use nalgebra::{Matrix2, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal};

// Tolerances.
const METRIC_DECIMALS_TOL: f64 = 5e-5;
const NOISELESS_FIT_TOL: f64 = 1e-9;
const ROBUST_MATRIX_TOL: f64 = 0.05;
const ROBUST_TRANSLATION_TOL: f64 = 1.0;
const ROBUST_MIN_SUCCESSES: usize = 95;
const LK_INTEGER_TOL: f64 = 0.25;
const LK_INTEGER_MIN_FRACTION: f64 = 0.95;
const LK_SUBPIXEL_MEAN_TOL: f64 = 0.1;
const EIG_RELATIVE_TOL: f64 = 1e-6;
const RIGID_MIN_BALANCED_ACCURACY: f64 = 0.95;
const BEND_MAX_SPECIFICITY_CHANGE: f64 = 0.02;
const PROPAGATION_BUDGET_MS: f64 = 33.0;
const PROPAGATION_HARD_LIMIT_MS: f64 = 100.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// 1. Metric arithmetic
// ---------------------------------------------------------------------------

fn metric_arithmetic() -> Outcome {
    let a = Metrics::from_rates(Some(0.878), Some(0.887)).balanced_accuracy.unwrap();
    let b = Metrics::from_rates(Some(0.363), Some(0.999)).balanced_accuracy.unwrap();
    let shown = format_percent(a);
    let pass = (a - 0.8825).abs() < METRIC_DECIMALS_TOL && (b - 0.681).abs() < METRIC_DECIMALS_TOL && shown == "88.3";
    outcome(pass, format!("(0.878, 0.887) -> {a:.4} shown as {shown}%; (0.363, 0.999) -> {b:.4}"))
}

// ---------------------------------------------------------------------------
// 2. Affine fitting
// ---------------------------------------------------------------------------

fn centred_points(r: &mut impl Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| (r.random_range(-200.0..200.0), r.random_range(-150.0..150.0)))
        .collect()
}

fn affine_fit() -> Outcome {
    let mut r = common::rng(2024);
    let mut worst_noiseless: f64 = 0.0;
    let mut successes = 0;
    let noise = Normal::new(0.0, 0.5).unwrap();
    let ransac = RansacParams {
        min_inliers: 3,
        ..RansacParams::default()
    };
    for trial in 0..100 {
        let n = r.random_range(10..=200);
        let truth = common::random_affine(&mut r);
        let src = centred_points(&mut r, n);
        let exact: Vec<_> = src.iter().map(|&p| truth.apply(p)).collect();
        let all: Vec<usize> = (0..n).collect();
        match fit_affine_lsq(&Correspondences::new(src.clone(), exact.clone()).unwrap(), &all) {
            Ok(fit) => worst_noiseless = worst_noiseless.max(fit.max_param_diff(&truth)),
            Err(_) => worst_noiseless = f64::INFINITY,
        }

        let n_out = (0.3 * n as f64).round() as usize;
        let dst: Vec<_> = exact
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                if i < n_out {
                    // Gross outlier: at least 30 px from the true position.
                    loop {
                        let q = (r.random_range(-300.0..300.0), r.random_range(-250.0..250.0));
                        if (q.0 - x).hypot(q.1 - y) > 30.0 {
                            break q;
                        }
                    }
                } else {
                    (x + noise.sample(&mut r), y + noise.sample(&mut r))
                }
            })
            .collect();
        let params = RansacParams {
            seed: trial,
            ..ransac
        };
        if let Ok(fit) = ransac_affine(&Correspondences::new(src, dst).unwrap(), &params) {
            let t = fit.transform;
            let matrix_err = (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| (t.a[i][j] - truth.a[i][j]).abs())
                .fold(0.0, f64::max);
            let trans_err = (t.t[0] - truth.t[0]).abs().max((t.t[1] - truth.t[1]).abs());
            if matrix_err <= ROBUST_MATRIX_TOL && trans_err <= ROBUST_TRANSLATION_TOL {
                successes += 1;
            }
        }
    }
    outcome(
        worst_noiseless <= NOISELESS_FIT_TOL && successes >= ROBUST_MIN_SUCCESSES,
        format!("noiseless worst parameter error {worst_noiseless:.2e}; robust recoveries {successes}/100"),
    )
}

// ---------------------------------------------------------------------------
// 3. Lucas-Kanade against block matching
// ---------------------------------------------------------------------------

fn block_match(prev: &RealImage, next: &RealImage, x: isize, y: isize, radius: isize) -> (isize, isize) {
    let mut best = (f64::INFINITY, 0, 0);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let mut ssd = 0.0;
            for j in -5..=5 {
                for i in -5..=5 {
                    let d = prev.get_clamped(x + i, y + j) - next.get_clamped(x + i + dx, y + j + dy);
                    ssd += d * d;
                }
            }
            if ssd < best.0 {
                best = (ssd, dx, dy);
            }
        }
    }
    (best.1, best.2)
}

fn lk_vs_block_matching() -> Outcome {
    const SIZE: usize = 256;
    const MARGIN: usize = 32;
    let params = FlowParams::default();
    let values = [-8i32, -3, -1, 1, 3, 8];
    let shifts: Vec<(i32, i32)> = values.iter().flat_map(|&dx| values.iter().map(move |&dy| (dx, dy))).collect();
    let mut worst_fraction: f64 = 1.0;
    let mut oracle_disagreements = 0;
    let (mut sub_sum, mut sub_n) = (0.0, 0usize);
    for seed in 0..5u64 {
        let tex = Texture::random(100 + seed);
        let prev = tex.render(SIZE, SIZE, 0.0, 0.0);
        let interior = BinaryMask::from_fn(SIZE, SIZE, |x, y| {
            (MARGIN..SIZE - MARGIN).contains(&x) && (MARGIN..SIZE - MARGIN).contains(&y)
        });
        let corners = good_features(
            &prev,
            &interior,
            &CornerParams {
                max_count: 60,
                min_distance: 12.0,
                ..CornerParams::default()
            },
        )
        .unwrap();
        let prev_pyr = build_pyramid_real(prev.clone(), params.levels).unwrap();
        for &(dx, dy) in &shifts {
            let next = tex.render(SIZE, SIZE, dx as f64, dy as f64);
            let tracks = lk_track(&prev_pyr, &build_pyramid_real(next.clone(), params.levels).unwrap(), &corners, &params);
            let mut good = 0;
            for (c, t) in corners.iter().zip(&tracks) {
                if block_match(&prev, &next, c.x as isize, c.y as isize, 9) != (dx as isize, dy as isize) {
                    oracle_disagreements += 1;
                }
                let err = (t.dst.0 - c.x - dx as f64).hypot(t.dst.1 - c.y - dy as f64);
                if t.is_tracked() && err <= LK_INTEGER_TOL {
                    good += 1;
                }
            }
            worst_fraction = worst_fraction.min(good as f64 / corners.len() as f64);
        }
        let next = tex.render(SIZE, SIZE, 0.5, 0.25);
        let tracks = lk_track(&prev_pyr, &build_pyramid_real(next, params.levels).unwrap(), &corners, &params);
        for t in &tracks {
            sub_sum += (t.dst.0 - t.src.0 - 0.5).hypot(t.dst.1 - t.src.1 - 0.25);
            sub_n += 1;
        }
    }
    let sub_mean = sub_sum / sub_n as f64;
    outcome(
        oracle_disagreements == 0 && worst_fraction >= LK_INTEGER_MIN_FRACTION && sub_mean <= LK_SUBPIXEL_MEAN_TOL,
        format!(
            "worst per-shift fraction within {LK_INTEGER_TOL} px: {:.1}%; block-matching disagreements {oracle_disagreements}; \
             sub-pixel mean error {sub_mean:.4} px",
            100.0 * worst_fraction
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Corner detector
// ---------------------------------------------------------------------------

fn brute_min_eig(img: &RealImage, block: usize) -> Vec<f64> {
    let (w, h) = img.dims();
    let at = |x: isize, y: isize| img.get_clamped(x, y);
    let grad = |x: isize, y: isize| {
        let gx = (3.0 * (at(x + 1, y - 1) - at(x - 1, y - 1))
            + 10.0 * (at(x + 1, y) - at(x - 1, y))
            + 3.0 * (at(x + 1, y + 1) - at(x - 1, y + 1)))
            / 32.0;
        let gy = (3.0 * (at(x - 1, y + 1) - at(x - 1, y - 1))
            + 10.0 * (at(x, y + 1) - at(x, y - 1))
            + 3.0 * (at(x + 1, y + 1) - at(x + 1, y - 1)))
            / 32.0;
        (gx, gy)
    };
    let r = (block / 2) as isize;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut m = Matrix2::zeros();
            for dy in -r..=r {
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, w as isize - 1);
                    let sy = (y + dy).clamp(0, h as isize - 1);
                    let (a, b) = grad(sx, sy);
                    m += Matrix2::new(a * a, a * b, a * b, b * b);
                }
            }
            out.push(SymmetricEigen::new(m).eigenvalues.min().max(0.0));
        }
    }
    out
}

fn corner_detector() -> Outcome {
    let mut r = common::rng(77);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..5 {
        let img = RealImage::from_fn(64, 64, |_, _| r.random_range(0.0..255.0));
        let fast = min_eig_map(&img, 5);
        let brute = brute_min_eig(&img, 5);
        let scale = brute.iter().copied().fold(0.0, f64::max);
        for (a, b) in fast.data().iter().zip(&brute) {
            worst_rel = worst_rel.max((a - b).abs() / b.abs().max(1e-9 * scale));
        }
    }

    let mut violations = Vec::new();
    for trial in 0..100 {
        let img = RealImage::from_fn(64, 64, |_, _| r.random_range(0.0..255.0));
        let fg = common::random_blob_mask(&mut r, 64, 64);
        let params = CornerParams {
            max_count: r.random_range(1..60),
            min_distance: r.random_range(0.0..10.0),
            quality_level: r.random_range(0.001..0.5),
            block_size: [3, 5, 7][r.random_range(0..3)],
            erosion_radius: 0,
        };
        let corners = good_features(&img, &fg, &params).unwrap();
        let score = min_eig_map(&img, params.block_size);
        let max = score
            .data()
            .iter()
            .zip(fg.labels())
            .filter(|(_, &f)| f)
            .map(|(&s, _)| s)
            .fold(0.0, f64::max);
        let ok = corners.len() <= params.max_count
            && corners.iter().all(|c| fg.get(c.x as usize, c.y as usize))
            && corners.iter().all(|c| c.score >= params.quality_level * max)
            && corners.windows(2).all(|p| p[0].score >= p[1].score)
            && corners.iter().enumerate().all(|(i, a)| {
                corners[i + 1..].iter().all(|b| (a.x - b.x).hypot(a.y - b.y) >= params.min_distance)
            });
        if !ok {
            violations.push(trial);
        }
    }
    outcome(
        worst_rel <= EIG_RELATIVE_TOL && violations.is_empty(),
        format!(
            "min-eigenvalue map worst relative error {worst_rel:.2e}; constraint violations in {} of 100 cases",
            violations.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5 and 6. End-to-end propagation on synthetic sequences
// ---------------------------------------------------------------------------

fn rigid_script() -> SynthScript {
    SynthScript {
        translate: (3.0, 2.0),
        rotate: 2.0,
        motion_period: 30,
        ..SynthScript::default()
    }
}

fn e2e_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.corners.quality_level = 0.003;
    cfg.segmenter.latency = LatencyModel::FrameCount(3);
    cfg
}

struct E2e {
    total: Confusion,
    excluded: usize,
    fingerprint: u64,
    report: RunReport,
}

/// Runs the pipeline over a rendered script with the ground truth as the
/// segmenter, pooling confusion counts over frames that have a mask.
fn run_synthetic(synth: &Arc<Synthesizer>, cfg: &PipelineConfig, latency: u64) -> E2e {
    let oracle = Arc::clone(synth);
    let segmenter = Segmenter::new(
        Box::new(move |id: u64, _: &ColorImage| Ok(oracle.mask(id as usize))),
        LatencyModel::FrameCount(latency),
    );
    let frames = (0..synth.len()).map(|k| Ok((k as u64, synth.render(k).0)));
    let mut total = Confusion::default();
    let mut excluded = 0;
    let mut hasher = DefaultHasher::new();
    let report = run_with(frames, cfg, segmenter, |out| {
        match &out.mask {
            Some(mask) => total += confusion(mask, &synth.mask(out.frame_id as usize))?,
            None => excluded += 1,
        }
        out.frame_id.hash(&mut hasher);
        out.source.hash(&mut hasher);
        out.keyframe_id.hash(&mut hasher);
        if let Some(m) = &out.mask {
            m.labels().hash(&mut hasher);
        }
        if let Some(t) = out.transform {
            for v in [t.a[0][0], t.a[0][1], t.a[1][0], t.a[1][1], t.t[0], t.t[1]] {
                v.to_bits().hash(&mut hasher);
            }
        }
        Ok(())
    })
    .expect("synthetic run succeeds");
    E2e {
        total,
        excluded,
        fingerprint: hasher.finish(),
        report,
    }
}

fn rates(c: &Confusion) -> Metrics {
    maskprop::eval::metrics(c)
}

fn rigid_propagation(store: &mut Option<Metrics>) -> Outcome {
    let synth = Arc::new(Synthesizer::new(rigid_script(), 5).unwrap());
    let cfg = e2e_config();
    let first = run_synthetic(&synth, &cfg, 3);
    let second = run_synthetic(&synth, &cfg, 3);
    let m = rates(&first.total);
    *store = Some(m);
    let ba = m.balanced_accuracy.unwrap_or(0.0);
    let identical = first.fingerprint == second.fingerprint;
    outcome(
        ba >= RIGID_MIN_BALANCED_ACCURACY && identical,
        format!(
            "300 frames 720x576, latency 3: pooled sensitivity {:.4}, specificity {:.4}, balanced accuracy {ba:.4} \
             ({} frames excluded, {} fallback); reruns bit-identical: {identical}",
            m.sensitivity.unwrap_or(0.0),
            m.specificity.unwrap_or(0.0),
            first.excluded,
            first.report.count(OutputSource::Fallback)
        ),
    )
}

fn bending_degrades(rigid: Option<Metrics>) -> Outcome {
    let Some(rigid) = rigid else {
        return outcome(false, "rigid run unavailable".into());
    };
    let script = SynthScript {
        bend_rate: 5.0,
        ..rigid_script()
    };
    let synth = Arc::new(Synthesizer::new(script, 5).unwrap());
    let bent = rates(&run_synthetic(&synth, &e2e_config(), 3).total);
    let (rs, bs) = (rigid.sensitivity.unwrap_or(0.0), bent.sensitivity.unwrap_or(1.0));
    let (rp, bp) = (rigid.specificity.unwrap_or(0.0), bent.specificity.unwrap_or(0.0));
    outcome(
        bs < rs && (rp - bp).abs() <= BEND_MAX_SPECIFICITY_CHANGE,
        format!("sensitivity {rs:.4} rigid -> {bs:.4} bending; specificity {rp:.4} -> {bp:.4}"),
    )
}

// ---------------------------------------------------------------------------
// 7. Throughput
// ---------------------------------------------------------------------------

fn throughput() -> Outcome {
    let script = SynthScript {
        frames: 60,
        tool_polygon: vec![
            (-200.0, -100.0),
            (0.0, -100.0),
            (200.0, -100.0),
            (220.0, 0.0),
            (200.0, 100.0),
            (-200.0, 100.0),
        ],
        tool_origin: (330.0, 288.0),
        translate: (2.0, 1.0),
        rotate: 0.5,
        motion_period: 20,
        ..SynthScript::default()
    };
    let synth = Arc::new(Synthesizer::new(script, 9).unwrap());
    let mut cfg = e2e_config();
    cfg.corners.max_count = 1000;
    cfg.corners.min_distance = 4.0;
    cfg.corners.quality_level = 0.001;
    let run = run_synthetic(&synth, &cfg, 3);
    let prop = run.report.propagation_stats();
    let corners = run
        .report
        .frames
        .iter()
        .filter(|f| f.keyframe_installed.is_some())
        .map(|f| f.tracked)
        .max()
        .unwrap_or(0);
    let verdict = if prop.mean <= PROPAGATION_BUDGET_MS {
        "within the 33 ms budget"
    } else {
        "advisory: over the 33 ms budget on this machine"
    };
    outcome(
        prop.mean <= PROPAGATION_HARD_LIMIT_MS,
        format!(
            "mean propagation {:.2} ms (p95 {:.2} ms) with ~{corners} tracked keyframe corners at 720x576, {} threads; {verdict}",
            prop.mean,
            prop.p95,
            rayon::current_num_threads()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Schedule
// ---------------------------------------------------------------------------

fn schedule() -> Outcome {
    let mut mismatches = Vec::new();
    for latency in [1u64, 2, 5] {
        let n = 30u64;
        // Single slot, result visible at submission + L, poll both before
        // and after the submission of the current frame.
        let expected: Vec<Option<u64>> = (0..n)
            .map(|f| (f >= latency).then(|| (f / latency - 1) * latency))
            .collect();
        let mut cfg = PipelineConfig::default();
        cfg.flow.window = 9;
        cfg.flow.levels = 2;
        let segmenter = Segmenter::new(
            Box::new(|_: u64, f: &ColorImage| Ok(BinaryMask::from_fn(f.width(), f.height(), |x, y| (x / 4 + y / 4) % 2 == 0))),
            LatencyModel::FrameCount(latency),
        );
        let frames = (0..n).map(|k| {
            Ok((
                k,
                ColorImage::new(
                    64,
                    48,
                    (0..64 * 48)
                        .flat_map(|i| {
                            let v = ((i * 31 + (i / 64) * 17 + k as usize) % 251) as u8;
                            [v, v, v]
                        })
                        .collect(),
                )
                .unwrap(),
            ))
        });
        let report = run_with(frames, &cfg, segmenter, |_| Ok(())).unwrap();
        if report.keyframe_trace() != expected {
            mismatches.push(latency);
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("keyframe traces for L = 1, 2, 5 over 30 frames; mismatching latencies: {mismatches:?}"),
    )
}

fn main() -> ExitCode {
    let mut rigid = None;
    let results = [
        report_line(1, "metric arithmetic", 1, metric_arithmetic),
        report_line(2, "affine fit oracle", 10, affine_fit),
        report_line(3, "optical flow oracle", 30, lk_vs_block_matching),
        report_line(4, "corner detector oracle", 10, corner_detector),
        report_line(5, "rigid propagation", 120, || rigid_propagation(&mut rigid)),
        report_line(6, "bending degradation", 120, || bending_degrades(rigid)),
        report_line(7, "throughput", 120, throughput),
        report_line(8, "pipeline schedule", 5, schedule),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report_line(n: usize, name: &str, budget_secs: u64, check: impl FnOnce() -> Outcome) -> bool {
    let budget = Duration::from_secs(budget_secs);
    let start = Instant::now();
    let out = check();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = out.pass && in_time;
    println!(
        "criterion {n} [{}] {name}: {} ({:.2} s{})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        if in_time { String::new() } else { format!(", over the {budget_secs} s budget") }
    );
    pass
}
