mod common;

use common::Texture;
use maskprop::features::{good_features, CornerParams};
use maskprop::imgcore::{build_pyramid_real, BinaryMask, RealImage};
use maskprop::optflow::{lk_track, window_residual, FlowParams};

const SIZE: usize = 160;

/// Integer shift minimising the SSD between windows, searched exhaustively.
fn block_match(prev: &RealImage, next: &RealImage, x: usize, y: usize, half: usize, radius: i64) -> (i64, i64) {
    let mut best = (f64::INFINITY, 0, 0);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let mut ssd = 0.0;
            for j in -(half as i64)..=half as i64 {
                for i in -(half as i64)..=half as i64 {
                    let a = prev.get_clamped((x as i64 + i) as isize, (y as i64 + j) as isize);
                    let b = next.get_clamped((x as i64 + i + dx) as isize, (y as i64 + j + dy) as isize);
                    ssd += (a - b) * (a - b);
                }
            }
            if ssd < best.0 {
                best = (ssd, dx, dy);
            }
        }
    }
    (best.1, best.2)
}

#[test]
fn lk_agrees_with_block_matching_on_integer_shifts() {
    let params = FlowParams::default();
    let margin = 24usize;
    for seed in 0..2u64 {
        let tex = Texture::random(seed);
        let prev = tex.render(SIZE, SIZE, 0.0, 0.0);
        let fg = BinaryMask::from_fn(SIZE, SIZE, |x, y| {
            (margin..SIZE - margin).contains(&x) && (margin..SIZE - margin).contains(&y)
        });
        let corners = good_features(
            &prev,
            &fg,
            &CornerParams {
                max_count: 40,
                min_distance: 10.0,
                ..CornerParams::default()
            },
        )
        .unwrap();
        assert!(corners.len() >= 10);
        let pyr = build_pyramid_real(prev.clone(), params.levels).unwrap();
        for (dx, dy) in [(3i64, -1i64), (-8, 3)] {
            let next = tex.render(SIZE, SIZE, dx as f64, dy as f64);
            let tracks = lk_track(&pyr, &build_pyramid_real(next.clone(), params.levels).unwrap(), &corners, &params);
            let mut good = 0;
            for (c, t) in corners.iter().zip(&tracks) {
                let oracle = block_match(&prev, &next, c.x as usize, c.y as usize, 5, 9);
                assert_eq!(oracle, (dx, dy), "block matching at {c:?}");
                let err = ((t.dst.0 - c.x - dx as f64).powi(2) + (t.dst.1 - c.y - dy as f64).powi(2)).sqrt();
                if t.is_tracked() && err < 0.25 {
                    good += 1;
                }
                if t.is_tracked() {
                    let recheck = window_residual(&prev, &next, t.src, t.dst, params.window).unwrap();
                    assert!((recheck - t.residual).abs() < 1e-9);
                }
            }
            assert!(good * 100 >= corners.len() * 95, "shift ({dx}, {dy}): {good}/{}", corners.len());
        }
    }
}

#[test]
fn sub_pixel_shift_is_recovered() {
    let params = FlowParams::default();
    let tex = Texture::random(9);
    let prev = tex.render(SIZE, SIZE, 0.0, 0.0);
    let next = tex.render(SIZE, SIZE, 0.5, 0.25);
    let fg = BinaryMask::from_fn(SIZE, SIZE, |x, y| (20..140).contains(&x) && (20..140).contains(&y));
    let corners = good_features(&prev, &fg, &CornerParams::default()).unwrap();
    let tracks = lk_track(
        &build_pyramid_real(prev, params.levels).unwrap(),
        &build_pyramid_real(next, params.levels).unwrap(),
        &corners,
        &params,
    );
    let errs: Vec<f64> = tracks
        .iter()
        .map(|t| ((t.dst.0 - t.src.0 - 0.5).powi(2) + (t.dst.1 - t.src.1 - 0.25).powi(2)).sqrt())
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 0.1, "mean error {mean}");
}
