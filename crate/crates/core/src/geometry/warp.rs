use super::affine::Affine2D;
use crate::error::Result;
use crate::imgcore::BinaryMask;

/// Inclusive bounding box `(x0, y0, x1, y1)` of the foreground.
fn foreground_bounds(mask: &BinaryMask) -> Option<(usize, usize, usize, usize)> {
    let w = mask.width();
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for (y, row) in mask.labels().chunks_exact(w).enumerate() {
        let (Some(first), Some(last)) = (row.iter().position(|&v| v), row.iter().rposition(|&v| v)) else {
            continue;
        };
        bounds = Some(match bounds {
            None => (first, y, last, y),
            Some((x0, y0, x1, _)) => (x0.min(first), y0, x1.max(last), y),
        });
    }
    bounds
}

/// Nearest-neighbour inverse warp: output pixel `p` takes the label of the
/// input at `round(T⁻¹ p)`; lookups outside the input are background.
///
/// Only output pixels whose preimage can round into the input's foreground
/// bounding box are visited.
pub fn warp_mask(mask: &BinaryMask, transform: &Affine2D) -> Result<BinaryMask> {
    let inv = transform.inverse()?;
    let (w, h) = mask.dims();
    let mut out = BinaryMask::background(w, h);
    let Some((x0, y0, x1, y1)) = foreground_bounds(mask) else {
        return Ok(out);
    };
    // Preimages rounding into the box lie in the box grown by half a pixel;
    // one extra pixel absorbs rounding in the forward map.
    let corners = [
        (x0 as f64 - 0.5, y0 as f64 - 0.5),
        (x1 as f64 + 0.5, y0 as f64 - 0.5),
        (x0 as f64 - 0.5, y1 as f64 + 0.5),
        (x1 as f64 + 0.5, y1 as f64 + 0.5),
    ]
    .map(|c| transform.apply(c));
    let lo = |f: fn(&(f64, f64)) -> f64| corners.iter().map(f).fold(f64::INFINITY, f64::min).floor() - 1.0;
    let hi = |f: fn(&(f64, f64)) -> f64| corners.iter().map(f).fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
    let clamp = |v: f64, n: usize| v.clamp(0.0, n as f64 - 1.0) as usize;
    let (ox0, ox1) = (lo(|c| c.0), hi(|c| c.0));
    let (oy0, oy1) = (lo(|c| c.1), hi(|c| c.1));
    if !(ox0.is_finite() && oy0.is_finite() && ox1 >= 0.0 && oy1 >= 0.0 && ox0 < w as f64 && oy0 < h as f64) {
        return Ok(out);
    }
    let (ox0, ox1, oy0, oy1) = (clamp(ox0, w), clamp(ox1, w), clamp(oy0, h), clamp(oy1, h));
    let (dx, dy) = (inv.a[0][0], inv.a[1][0]);
    for y in oy0..=oy1 {
        let (sx, sy) = inv.apply((0.0, y as f64));
        for x in ox0..=ox1 {
            let (rx, ry) = ((sx + x as f64 * dx + 0.5).floor(), (sy + x as f64 * dy + 0.5).floor());
            if rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64 && mask.get(rx as usize, ry as usize) {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}
