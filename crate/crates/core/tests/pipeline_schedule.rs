//! Schedule and causality properties of the frame loop, checked against a
//! direct simulation of single-slot submission.

use maskprop::imgcore::{BinaryMask, ColorImage};
use maskprop::pipeline::{run_with, OutputSource, PipelineConfig, Stage};
use maskprop::segmenter::{LatencyModel, Segmenter};
use proptest::prelude::*;

const W: usize = 96;
const H: usize = 80;

fn frame(k: u64) -> ColorImage {
    let mut img = ColorImage::filled(W, H, [0, 0, 0]);
    for y in 0..H {
        for x in 0..W {
            let v = ((x * 7 + y * 13 + (x * y) % 11) % 97) as u8;
            img.set_pixel((x + k as usize) % W, y, [v, v.wrapping_mul(3), 255 - v]);
        }
    }
    img
}

fn all_foreground_segmenter(latency: u64) -> Segmenter {
    Segmenter::new(
        Box::new(|_: u64, f: &ColorImage| Ok(BinaryMask::from_fn(f.width(), f.height(), |_, _| true))),
        LatencyModel::FrameCount(latency),
    )
}

/// Keyframe id in effect at each frame under single-slot submission.
fn simulate(n: u64, latency: u64) -> Vec<Option<u64>> {
    let mut in_flight: Option<u64> = None;
    let mut keyframe = None;
    let mut trace = Vec::new();
    for k in 0..n {
        let mut deliver = |in_flight: &mut Option<u64>| {
            if let Some(s) = *in_flight {
                if k >= s + latency {
                    keyframe = Some(s);
                    *in_flight = None;
                }
            }
        };
        deliver(&mut in_flight);
        if in_flight.is_none() {
            in_flight = Some(k);
        }
        deliver(&mut in_flight);
        trace.push(keyframe);
    }
    trace
}

fn config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.flow.window = 9;
    cfg.flow.levels = 2;
    cfg.corners.min_distance = 4.0;
    cfg.ransac.min_inliers = 3;
    cfg
}

#[test]
fn simulation_reproduces_the_documented_trace() {
    let trace = simulate(10, 2);
    assert_eq!(trace, [None, None, Some(0), Some(0), Some(2), Some(2), Some(4), Some(4), Some(6), Some(6)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn keyframe_trace_matches_single_slot_simulation(latency in 0u64..7, n in 1u64..24) {
        let frames = (0..n).map(|k| Ok((k, frame(k))));
        let mut outs = Vec::new();
        let report = run_with(frames, &config(), all_foreground_segmenter(latency), |o| {
            outs.push(o.clone());
            Ok(())
        })
        .unwrap();
        prop_assert_eq!(report.keyframe_trace(), simulate(n, latency));
        let ids: Vec<u64> = outs.iter().map(|o| o.frame_id).collect();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
        let mut latest = None;
        for o in &outs {
            if let Some(k) = o.keyframe_installed {
                latest = Some(k);
            }
            prop_assert_eq!(o.keyframe_id, latest);
            prop_assert!(o.keyframe_id.is_none_or(|k| k <= o.frame_id));
            prop_assert_eq!(o.source == OutputSource::None, o.keyframe_id.is_none());
            if o.source == OutputSource::Warped {
                prop_assert!(o.transform.is_some());
            }
        }
    }
}

#[test]
fn propagation_work_does_not_depend_on_latency() {
    let n = 40;
    let tracked = |latency| {
        let frames = (0..n).map(|k| Ok((k, frame(k))));
        let report = run_with(frames, &config(), all_foreground_segmenter(latency), |_| Ok(())).unwrap();
        let prop = report.propagation_stats();
        let counts: Vec<usize> = report.frames.iter().filter(|f| f.keyframe_id.is_some()).map(|f| f.tracked).collect();
        (prop, counts.iter().sum::<usize>() as f64 / counts.len() as f64, report.stats(Stage::Track))
    };
    let (a, points_a, _) = tracked(2);
    let (b, points_b, _) = tracked(4);
    // Same keyframe corner budget per frame, so the same tracking work.
    assert!((points_a - points_b).abs() <= 0.2 * points_a.max(points_b), "{points_a} vs {points_b}");
    // Timing is noisy; only a gross dependence would show up here.
    assert!(b.p50 < 5.0 * a.p50 + 1.0 && a.p50 < 5.0 * b.p50 + 1.0, "{a:?} vs {b:?}");
}
