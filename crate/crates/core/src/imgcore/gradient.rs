use super::RealImage;

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub gx: RealImage,
    pub gy: RealImage,
}

/// Scharr derivatives normalized by 1/32, so a unit ramp has unit slope.
/// Borders are replicated.
pub fn gradients(img: &RealImage) -> Gradients {
    let (w, h) = img.dims();
    let mut gx = RealImage::zeros(w, h);
    let mut gy = RealImage::zeros(w, h);
    let data = img.data();
    let row_of = |y: isize| -> &[f64] {
        let y = y.clamp(0, h as isize - 1) as usize;
        &data[y * w..(y + 1) * w]
    };
    let gxd = gx.data_mut();
    for y in 0..h {
        let up = row_of(y as isize - 1);
        let mid = row_of(y as isize);
        let down = row_of(y as isize + 1);
        for x in 0..w {
            let l = x.saturating_sub(1);
            let r = (x + 1).min(w - 1);
            gxd[y * w + x] =
                (3.0 * (up[r] - up[l]) + 10.0 * (mid[r] - mid[l]) + 3.0 * (down[r] - down[l])) / 32.0;
        }
    }
    let gyd = gy.data_mut();
    for y in 0..h {
        let up = row_of(y as isize - 1);
        let down = row_of(y as isize + 1);
        for x in 0..w {
            let l = x.saturating_sub(1);
            let r = (x + 1).min(w - 1);
            gyd[y * w + x] =
                (3.0 * (down[l] - up[l]) + 10.0 * (down[x] - up[x]) + 3.0 * (down[r] - up[r])) / 32.0;
        }
    }
    Gradients { gx, gy }
}
