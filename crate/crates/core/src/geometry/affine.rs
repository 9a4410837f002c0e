use crate::error::{Error, Result};

/// `x -> A x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2D {
    /// Row-major `[[a11, a12], [a21, a22]]`.
    pub a: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Affine2D {
    pub const IDENTITY: Affine2D = Affine2D {
        a: [[1.0, 0.0], [0.0, 1.0]],
        t: [0.0, 0.0],
    };

    pub fn new(a: [[f64; 2]; 2], t: [f64; 2]) -> Self {
        Self { a, t }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            t: [tx, ty],
            ..Self::IDENTITY
        }
    }

    /// Rotation by `degrees` about `center`, followed by a translation.
    pub fn rotation_about(degrees: f64, center: (f64, f64)) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let a = [[c, -s], [s, c]];
        let t = [
            center.0 - (c * center.0 - s * center.1),
            center.1 - (s * center.0 + c * center.1),
        ];
        Self { a, t }
    }

    pub fn det(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().flatten().chain(&self.t).all(|v| v.is_finite())
    }

    /// Usable for warping: finite with `|det A| > 1e-8`.
    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.det().abs() > 1e-8
    }

    #[inline]
    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.a[0][0] * p.0 + self.a[0][1] * p.1 + self.t[0],
            self.a[1][0] * p.0 + self.a[1][1] * p.1 + self.t[1],
        )
    }

    pub fn inverse(&self) -> Result<Affine2D> {
        let det = self.det();
        if !self.is_valid() {
            return Err(Error::NotInvertible(det));
        }
        let [[a, b], [c, d]] = self.a;
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let t = [
            -(inv[0][0] * self.t[0] + inv[0][1] * self.t[1]),
            -(inv[1][0] * self.t[0] + inv[1][1] * self.t[1]),
        ];
        Ok(Affine2D { a: inv, t })
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &Affine2D) -> Affine2D {
        let m = |i: usize, j: usize| self.a[i][0] * first.a[0][j] + self.a[i][1] * first.a[1][j];
        let (tx, ty) = self.apply((first.t[0], first.t[1]));
        Affine2D {
            a: [[m(0, 0), m(0, 1)], [m(1, 0), m(1, 1)]],
            t: [tx, ty],
        }
    }

    /// Largest absolute difference over the six parameters.
    pub fn max_param_diff(&self, other: &Affine2D) -> f64 {
        let a = self.a.iter().flatten().zip(other.a.iter().flatten());
        let t = self.t.iter().zip(&other.t);
        a.chain(t).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

/// Point pairs `src[i] -> dst[i]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondences {
    pub src: Vec<(f64, f64)>,
    pub dst: Vec<(f64, f64)>,
}

impl Correspondences {
    pub fn new(src: Vec<(f64, f64)>, dst: Vec<(f64, f64)>) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::EstimationFailed(format!(
                "{} source points but {} destination points",
                src.len(),
                dst.len()
            )));
        }
        let finite = |p: &(f64, f64)| p.0.is_finite() && p.1.is_finite();
        if !src.iter().chain(&dst).all(finite) {
            return Err(Error::EstimationFailed("non-finite coordinate".into()));
        }
        Ok(Self { src, dst })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    #[inline]
    pub fn residual(&self, i: usize, t: &Affine2D) -> f64 {
        let (px, py) = t.apply(self.src[i]);
        let (nx, ny) = self.dst[i];
        ((nx - px).powi(2) + (ny - py).powi(2)).sqrt()
    }
}

/// `Σ ||dst_i - A src_i - t||²` over `subset`.
pub fn sum_squared_residual(c: &Correspondences, subset: &[usize], t: &Affine2D) -> f64 {
    subset.iter().map(|&i| c.residual(i, t).powi(2)).sum()
}

/// Least-squares affine over the indexed pairs.
///
/// The six unknowns split into two independent 3-unknown normal systems
/// (one per output coordinate) sharing the same matrix. Coordinates are
/// centred first, which decouples `t` and leaves a 2x2 system for each row
/// of `A`.
pub fn fit_affine_lsq(c: &Correspondences, subset: &[usize]) -> Result<Affine2D> {
    if subset.len() < 3 {
        return Err(Error::Singular("affine fit needs at least 3 points"));
    }
    let n = subset.len() as f64;
    let (mut msx, mut msy, mut mdx, mut mdy) = (0.0, 0.0, 0.0, 0.0);
    for &i in subset {
        msx += c.src[i].0;
        msy += c.src[i].1;
        mdx += c.dst[i].0;
        mdy += c.dst[i].1;
    }
    let (msx, msy, mdx, mdy) = (msx / n, msy / n, mdx / n, mdy / n);

    // Normal matrix [sxx sxy; sxy syy] and right-hand sides per output row.
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut bx, mut by) = ([0.0f64; 2], [0.0f64; 2]);
    for &i in subset {
        let (x, y) = (c.src[i].0 - msx, c.src[i].1 - msy);
        let (u, v) = (c.dst[i].0 - mdx, c.dst[i].1 - mdy);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        bx[0] += x * u;
        bx[1] += y * u;
        by[0] += x * v;
        by[1] += y * v;
    }
    let det = sxx * syy - sxy * sxy;
    let scale = (sxx + syy) * (sxx + syy);
    if !(det > 1e-12 * scale) || scale == 0.0 {
        return Err(Error::Singular("source points are collinear"));
    }
    let solve = |b: [f64; 2]| [(syy * b[0] - sxy * b[1]) / det, (sxx * b[1] - sxy * b[0]) / det];
    let row0 = solve(bx);
    let row1 = solve(by);
    let a = [row0, row1];
    let t = [
        mdx - (a[0][0] * msx + a[0][1] * msy),
        mdy - (a[1][0] * msx + a[1][1] * msy),
    ];
    let fit = Affine2D { a, t };
    if !fit.is_finite() {
        return Err(Error::Singular("non-finite affine solution"));
    }
    Ok(fit)
}
