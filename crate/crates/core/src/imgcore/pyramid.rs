use super::{GrayImage, RealImage};
use crate::error::{Error, Result};

const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Multi-resolution stack, level 0 at full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    levels: Vec<RealImage>,
}

impl Pyramid {
    pub fn levels(&self) -> &[RealImage] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &RealImage {
        &self.levels[k]
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn base(&self) -> &RealImage {
        &self.levels[0]
    }
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`).
#[inline]
fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Smooth with the 5-tap binomial kernel and keep every second sample in
/// each direction. Output size rounds up.
fn reduce(src: &RealImage) -> RealImage {
    let (w, h) = src.dims();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let data = src.data();

    // Horizontal pass evaluated only at the surviving columns.
    let col_taps: Vec<[usize; 5]> = (0..nw)
        .map(|i| {
            let c = 2 * i as isize;
            std::array::from_fn(|k| reflect101(c + k as isize - 2, w))
        })
        .collect();
    let mut horiz = vec![0.0; nw * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        let out = &mut horiz[y * nw..(y + 1) * nw];
        for (o, taps) in out.iter_mut().zip(&col_taps) {
            *o = taps.iter().zip(KERNEL).map(|(&x, k)| k * row[x]).sum();
        }
    }

    let mut out = vec![0.0; nw * nh];
    for j in 0..nh {
        let r = 2 * j as isize;
        let rows: [usize; 5] = std::array::from_fn(|k| reflect101(r + k as isize - 2, h));
        let dst = &mut out[j * nw..(j + 1) * nw];
        for (k, &ry) in rows.iter().enumerate() {
            let src_row = &horiz[ry * nw..(ry + 1) * nw];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += KERNEL[k] * s;
            }
        }
    }
    RealImage::new(nw, nh, out).expect("reduced dimensions are consistent")
}

/// Builds `level_count` levels. Fails when `level_count` is zero or when a
/// level with a dimension of 1 would have to be halved again.
pub fn build_pyramid(img: &GrayImage, level_count: usize) -> Result<Pyramid> {
    build_pyramid_real(img.to_real(), level_count)
}

pub fn build_pyramid_real(base: RealImage, level_count: usize) -> Result<Pyramid> {
    if level_count == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let mut levels = Vec::with_capacity(level_count);
    levels.push(base);
    while levels.len() < level_count {
        let prev = levels.last().expect("non-empty");
        if prev.width() < 2 || prev.height() < 2 {
            return Err(Error::Config(format!(
                "{level_count} pyramid levels do not fit a {}x{} image",
                levels[0].width(),
                levels[0].height()
            )));
        }
        let next = reduce(prev);
        levels.push(next);
    }
    Ok(Pyramid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_image_stays_constant() {
        let img = GrayImage::from_fn(37, 23, |_, _| 93);
        let p = build_pyramid(&img, 3).unwrap();
        for level in p.levels() {
            assert!(level.data().iter().all(|&v| (v - 93.0).abs() < 1e-12));
        }
    }

    #[test]
    fn level_sizes_halve_rounding_up() {
        let p = build_pyramid(&GrayImage::from_fn(8, 8, |_, _| 0), 3).unwrap();
        let dims: Vec<_> = p.levels().iter().map(|l| l.dims()).collect();
        assert_eq!(dims, vec![(8, 8), (4, 4), (2, 2)]);
        let p = build_pyramid(&GrayImage::from_fn(9, 5, |_, _| 0), 3).unwrap();
        let dims: Vec<_> = p.levels().iter().map(|l| l.dims()).collect();
        assert_eq!(dims, vec![(9, 5), (5, 3), (3, 2)]);
    }

    #[test]
    fn too_many_levels_is_a_config_error() {
        let img = GrayImage::from_fn(8, 8, |_, _| 0);
        assert!(build_pyramid(&img, 4).is_ok());
        assert!(matches!(build_pyramid(&img, 5), Err(Error::Config(_))));
        assert!(matches!(build_pyramid(&img, 0), Err(Error::Config(_))));
    }

    #[test]
    fn period_two_checkerboard_reduces_to_mid_gray() {
        // Along either axis the taps over an alternating a,b,a,b,a pattern
        // sum to (1+6+1)/16 a + (4+4)/16 b = (a + b) / 2.
        let img = GrayImage::from_fn(16, 16, |x, y| if (x + y) % 2 == 0 { 255 } else { 0 });
        let p = build_pyramid(&img, 2).unwrap();
        assert_eq!(p.level(1).dims(), (8, 8));
        for &v in p.level(1).data() {
            assert!((v - 127.5).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect101(-1, 5), 1);
        assert_eq!(reflect101(-2, 5), 2);
        assert_eq!(reflect101(5, 5), 3);
        assert_eq!(reflect101(6, 5), 2);
        assert_eq!(reflect101(-2, 2), 0);
        assert_eq!(reflect101(3, 1), 0);
    }

    proptest! {
        // With odd width the decimation grid is symmetric, so mirroring
        // commutes with reduction exactly.
        #[test]
        fn mirror_commutes(half_w in 2usize..10, h in 3usize..12, seed in any::<u64>()) {
            let w = 2 * half_w + 1;
            let val = |x: usize, y: usize| ((seed.wrapping_mul(x as u64 * 31 + y as u64 * 17 + 1)) >> 56) as u8;
            let img = GrayImage::from_fn(w, h, val);
            let mirrored = GrayImage::from_fn(w, h, |x, y| val(w - 1 - x, y));
            let a = build_pyramid(&img, 2).unwrap();
            let b = build_pyramid(&mirrored, 2).unwrap();
            let (lw, lh) = a.level(1).dims();
            for y in 0..lh {
                for x in 0..lw {
                    let d = a.level(1).get(x, y) - b.level(1).get(lw - 1 - x, y);
                    prop_assert!(d.abs() < 1e-9);
                }
            }
        }
    }
}
