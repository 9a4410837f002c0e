//! Pyramidal Lucas-Kanade sparse optical flow (forward-additive, one
//! structure tensor per level per point).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{min_eigenvalue, Corner};
use crate::imgcore::{gradients, Gradients, Pyramid, RealImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    /// Window side in pixels (odd).
    pub window: usize,
    pub levels: usize,
    pub max_iters: usize,
    /// Stop iterating once an update is shorter than this, pixels.
    pub epsilon: f64,
    /// Floor on `lambda_min(G) / (window_area * 255^2)`.
    pub min_eig_threshold: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            window: 21,
            levels: 3,
            max_iters: 30,
            epsilon: 0.01,
            min_eig_threshold: 1e-4,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Config("flow.window must be odd and >= 3".into()));
        }
        if self.levels == 0 {
            return Err(Error::Config("flow.levels must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("flow.max_iters must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("flow.epsilon must be > 0".into()));
        }
        if !(self.min_eig_threshold >= 0.0) {
            return Err(Error::Config("flow.min_eig_threshold must be >= 0".into()));
        }
        Ok(())
    }

    /// Checks that the coarsest level of a `width x height` frame still holds
    /// a full window.
    pub fn check_frame_size(&self, width: usize, height: usize) -> Result<()> {
        let (mut w, mut h) = (width, height);
        for _ in 1..self.levels {
            w = w.div_ceil(2);
            h = h.div_ceil(2);
        }
        if w < self.window || h < self.window {
            return Err(Error::Config(format!(
                "{} flow levels on a {width}x{height} frame leave a {w}x{h} top level, smaller than the {} px window",
                self.levels, self.window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tracked,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedPoint {
    pub src: (f64, f64),
    pub dst: (f64, f64),
    pub status: TrackStatus,
    /// Mean absolute intensity difference over the window at `dst`.
    pub residual: f64,
}

impl TrackedPoint {
    pub fn is_tracked(&self) -> bool {
        self.status == TrackStatus::Tracked
    }
}

/// A pyramid plus the gradients of every level, built once per keyframe.
#[derive(Debug, Clone)]
pub struct PreparedPyramid {
    pyramid: Pyramid,
    grads: Vec<Gradients>,
}

impl PreparedPyramid {
    pub fn new(pyramid: Pyramid) -> Self {
        let grads = pyramid.levels().par_iter().map(gradients).collect();
        Self { pyramid, grads }
    }

    pub fn pyramid(&self) -> &Pyramid {
        &self.pyramid
    }
}

#[inline]
fn window_fits(img: &RealImage, cx: f64, cy: f64, half: usize) -> bool {
    let h = half as f64;
    cx.is_finite()
        && cy.is_finite()
        && cx - h >= 0.0
        && cy - h >= 0.0
        && cx + h <= (img.width() - 1) as f64
        && cy + h <= (img.height() - 1) as f64
}

/// Integer origin, fractional weight and neighbour step for bilinear reads
/// along one axis. The step is 0 when the weight is 0, so a window that
/// exactly spans the image never reads past its last sample.
#[inline]
fn anchor(c: f64, half: usize) -> (usize, f64, usize) {
    let start = c - half as f64;
    let i = start.floor();
    let f = start - i;
    (i as usize, f, usize::from(f > 0.0))
}

/// Bilinear read set-up for a window: row origin offsets and weights.
struct WindowTaps {
    base: usize,
    row_step: usize,
    col_step: usize,
    w: [f64; 4],
}

#[inline]
fn taps(img: &RealImage, cx: f64, cy: f64, half: usize) -> WindowTaps {
    let (x0, fx, sx) = anchor(cx, half);
    let (y0, fy, sy) = anchor(cy, half);
    WindowTaps {
        base: y0 * img.width() + x0,
        row_step: sy * img.width(),
        col_step: sx,
        w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
    }
}

/// Bilinear samples of the `side x side` window centred on `(cx, cy)`.
/// Requires the window to fit inside the image.
fn sample_window(img: &RealImage, cx: f64, cy: f64, half: usize, out: &mut [f64]) {
    let side = 2 * half + 1;
    let w = img.width();
    let t = taps(img, cx, cy, half);
    let data = img.data();
    for (j, o) in out.chunks_exact_mut(side).enumerate() {
        let r = t.base + j * w;
        let a = &data[r..r + side];
        let b = &data[r + t.col_step..r + t.col_step + side];
        let c = &data[r + t.row_step..r + t.row_step + side];
        let d = &data[r + t.row_step + t.col_step..r + t.row_step + t.col_step + side];
        for ((((v, a), b), c), d) in o.iter_mut().zip(a).zip(b).zip(c).zip(d) {
            *v = t.w[0] * a + t.w[1] * b + t.w[2] * c + t.w[3] * d;
        }
    }
}

const LANES: usize = 4;

/// `sum((tmpl - I) * ix, (tmpl - I) * iy)` with `I` the bilinear window of
/// `img` at `(cx, cy)`, without materialising `I`.
fn mismatch_vector(img: &RealImage, cx: f64, cy: f64, half: usize, s: &Scratch) -> (f64, f64) {
    let side = 2 * half + 1;
    let w = img.width();
    let t = taps(img, cx, cy, half);
    let data = img.data();
    let (mut bx, mut by) = (0.0, 0.0);
    for j in 0..side {
        let r = t.base + j * w;
        let a = &data[r..r + side];
        let b = &data[r + t.col_step..r + t.col_step + side];
        let c = &data[r + t.row_step..r + t.row_step + side];
        let d = &data[r + t.row_step + t.col_step..r + t.row_step + t.col_step + side];
        let k = j * side..(j + 1) * side;
        let (tm, gx, gy) = (&s.tmpl[k.clone()], &s.ix[k.clone()], &s.iy[k]);
        // Four independent lanes so the reduction can be vectorised.
        let (mut rx, mut ry) = ([0.0f64; LANES], [0.0f64; LANES]);
        let full = side / LANES * LANES;
        for i0 in (0..full).step_by(LANES) {
            for l in 0..LANES {
                let i = i0 + l;
                let v = t.w[0] * a[i] + t.w[1] * b[i] + t.w[2] * c[i] + t.w[3] * d[i];
                let diff = tm[i] - v;
                rx[l] += diff * gx[i];
                ry[l] += diff * gy[i];
            }
        }
        for i in full..side {
            let v = t.w[0] * a[i] + t.w[1] * b[i] + t.w[2] * c[i] + t.w[3] * d[i];
            let diff = tm[i] - v;
            rx[0] += diff * gx[i];
            ry[0] += diff * gy[i];
        }
        let (rx, ry) = (rx.iter().sum::<f64>(), ry.iter().sum::<f64>());
        bx += rx;
        by += ry;
    }
    (bx, by)
}

struct Scratch {
    tmpl: Vec<f64>,
    ix: Vec<f64>,
    iy: Vec<f64>,
    cur: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            tmpl: vec![0.0; n],
            ix: vec![0.0; n],
            iy: vec![0.0; n],
            cur: vec![0.0; n],
        }
    }
}

fn lost(src: (f64, f64), dst: (f64, f64)) -> TrackedPoint {
    TrackedPoint {
        src,
        dst: if dst.0.is_finite() && dst.1.is_finite() { dst } else { src },
        status: TrackStatus::Lost,
        residual: 0.0,
    }
}

fn track_one(
    prev: &PreparedPyramid,
    next: &Pyramid,
    src: (f64, f64),
    levels: usize,
    params: &FlowParams,
    s: &mut Scratch,
) -> TrackedPoint {
    let half = params.window / 2;
    let area = (params.window * params.window) as f64;
    let eig_floor = params.min_eig_threshold * area * 255.0 * 255.0;
    let (mut gx, mut gy) = (0.0f64, 0.0f64);

    for level in (0..levels).rev() {
        let scale = (1u64 << level) as f64;
        let (ux, uy) = (src.0 / scale, src.1 / scale);
        let prev_img = prev.pyramid.level(level);
        let next_img = next.level(level);
        let grads = &prev.grads[level];

        let mut step = (0.0, 0.0);
        'level: {
            if !window_fits(prev_img, ux, uy, half) {
                if level == 0 {
                    return lost(src, (src.0 + gx, src.1 + gy));
                }
                break 'level;
            }
            sample_window(prev_img, ux, uy, half, &mut s.tmpl);
            sample_window(&grads.gx, ux, uy, half, &mut s.ix);
            sample_window(&grads.gy, ux, uy, half, &mut s.iy);
            let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
            for (a, b) in s.ix.iter().zip(&s.iy) {
                gxx += a * a;
                gxy += a * b;
                gyy += b * b;
            }
            if min_eigenvalue(gxx, gxy, gyy) < eig_floor || min_eigenvalue(gxx, gxy, gyy) <= 0.0 {
                if level == 0 {
                    return lost(src, (src.0 + gx, src.1 + gy));
                }
                break 'level;
            }
            let det = gxx * gyy - gxy * gxy;

            for _ in 0..params.max_iters {
                let (px, py) = (ux + gx + step.0, uy + gy + step.1);
                if !window_fits(next_img, px, py, half) {
                    if level == 0 {
                        return lost(src, (src.0 + gx + step.0, src.1 + gy + step.1));
                    }
                    break;
                }
                let (bx, by) = mismatch_vector(next_img, px, py, half, s);
                let ex = (gyy * bx - gxy * by) / det;
                let ey = (gxx * by - gxy * bx) / det;
                step.0 += ex;
                step.1 += ey;
                if ex * ex + ey * ey < params.epsilon * params.epsilon {
                    break;
                }
            }
        }

        if level > 0 {
            gx = 2.0 * (gx + step.0);
            gy = 2.0 * (gy + step.1);
        } else {
            gx += step.0;
            gy += step.1;
        }
    }

    let dst = (src.0 + gx, src.1 + gy);
    let base = next.level(0);
    if !window_fits(base, dst.0, dst.1, half) {
        return lost(src, dst);
    }
    sample_window(prev.pyramid.level(0), src.0, src.1, half, &mut s.tmpl);
    sample_window(base, dst.0, dst.1, half, &mut s.cur);
    let residual =
        s.tmpl.iter().zip(&s.cur).map(|(a, b)| (a - b).abs()).sum::<f64>() / s.tmpl.len() as f64;
    if !residual.is_finite() {
        return lost(src, dst);
    }
    TrackedPoint {
        src,
        dst,
        status: TrackStatus::Tracked,
        residual,
    }
}

/// Tracks every point from `prev` into `next`. Output order matches input.
pub fn lk_track_prepared(
    prev: &PreparedPyramid,
    next: &Pyramid,
    points: &[Corner],
    params: &FlowParams,
) -> Vec<TrackedPoint> {
    let levels = params
        .levels
        .min(prev.pyramid.level_count())
        .min(next.level_count());
    let n = params.window * params.window;
    points
        .par_iter()
        .map_init(
            || Scratch::new(n),
            |s, c| track_one(prev, next, (c.x, c.y), levels, params, s),
        )
        .collect()
}

pub fn lk_track(prev: &Pyramid, next: &Pyramid, points: &[Corner], params: &FlowParams) -> Vec<TrackedPoint> {
    lk_track_prepared(&PreparedPyramid::new(prev.clone()), next, points, params)
}

/// Mean absolute difference between the window around `src` in `prev` and
/// the window around `dst` in `next`, or `None` if either leaves the image.
pub fn window_residual(prev: &RealImage, next: &RealImage, src: (f64, f64), dst: (f64, f64), window: usize) -> Option<f64> {
    let half = window / 2;
    if !window_fits(prev, src.0, src.1, half) || !window_fits(next, dst.0, dst.1, half) {
        return None;
    }
    let mut total = 0.0;
    let side = window as isize;
    for j in 0..side {
        for i in 0..side {
            let (ox, oy) = ((i - half as isize) as f64, (j - half as isize) as f64);
            let a = prev.bilinear(src.0 + ox, src.1 + oy);
            let b = next.bilinear(dst.0 + ox, dst.1 + oy);
            total += (a - b).abs();
        }
    }
    Some(total / (window * window) as f64)
}
