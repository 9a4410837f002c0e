//! Synthetic sequences with exact ground truth: a textured tool polygon
//! moving rigidly (and optionally bending) over a static textured
//! background, plus transient specular speckles.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{self, Entry};
use crate::error::{Error, Result};
use crate::geometry::Affine2D;
use crate::imgcore::sequence::frame_name;
use crate::imgcore::{pnm, BinaryMask, ColorImage};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScript {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Amplitude of the sinusoidal background grid, grey levels.
    pub background_amplitude: f64,
    /// Period of the background grid, pixels.
    pub background_period: f64,
    /// Amplitude of the seeded value-noise on the background, grey levels.
    pub background_noise: f64,
    /// Tool outline in tool coordinates, pixels.
    pub tool_polygon: Vec<(f64, f64)>,
    /// Image position of the tool-frame origin at frame 0.
    pub tool_origin: (f64, f64),
    /// Vertex the distal part bends about. Vertices with a larger tool-frame
    /// x than the hinge form the distal part.
    pub hinge: Option<usize>,
    /// Translation per frame, pixels.
    pub translate: (f64, f64),
    /// Rotation per frame about the tool origin, degrees.
    pub rotate: f64,
    /// Frames before the motion reverses direction; 0 never reverses.
    pub motion_period: usize,
    /// Bend change per frame, degrees. The bend sweeps between
    /// `-bend_max` and `bend_max`.
    pub bend_rate: f64,
    pub bend_max: f64,
    /// Expected speckles per pixel per frame.
    pub speckle_rate: f64,
}

impl Default for SynthScript {
    fn default() -> Self {
        Self {
            width: 720,
            height: 576,
            frames: 300,
            background_amplitude: 40.0,
            background_period: 48.0,
            background_noise: 30.0,
            tool_polygon: vec![
                (-150.0, -22.0),
                (0.0, -22.0),
                (150.0, -22.0),
                (190.0, -8.0),
                (190.0, 8.0),
                (150.0, 22.0),
                (0.0, 22.0),
                (-150.0, 22.0),
            ],
            tool_origin: (300.0, 288.0),
            hinge: Some(1),
            translate: (3.0, 1.5),
            rotate: 1.0,
            motion_period: 40,
            bend_rate: 0.0,
            bend_max: 30.0,
            speckle_rate: 2e-5,
        }
    }
}

pub const SCRIPT_KEYS: &[(&str, &str)] = &[
    ("width", "canvas width, pixels"),
    ("height", "canvas height, pixels"),
    ("frames", "number of frames"),
    ("background.amplitude", "sinusoidal grid amplitude, grey levels"),
    ("background.period", "sinusoidal grid period, pixels"),
    ("background.noise", "value-noise amplitude, grey levels"),
    ("tool.polygon", "tool outline 'x,y; x,y; ...' in tool coordinates"),
    ("tool.origin", "image position 'x,y' of the tool origin at frame 0"),
    ("tool.hinge", "hinge vertex index for bending, or 'none'"),
    ("motion.translate", "translation per frame 'dx,dy', pixels"),
    ("motion.rotate", "rotation per frame about the tool origin, degrees"),
    ("motion.period", "frames before the motion reverses (0 = never)"),
    ("bend.rate", "bend change per frame, degrees"),
    ("bend.max", "bend amplitude, degrees"),
    ("speckle.rate", "specular speckles per pixel per frame"),
];

impl SynthScript {
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut s = SynthScript::default();
        for e in entries {
            let (k, v) = (e.key.as_str(), e.value.as_str());
            match k {
                "width" => s.width = config::value(k, v)?,
                "height" => s.height = config::value(k, v)?,
                "frames" => s.frames = config::value(k, v)?,
                "background.amplitude" => s.background_amplitude = config::value(k, v)?,
                "background.period" => s.background_period = config::value(k, v)?,
                "background.noise" => s.background_noise = config::value(k, v)?,
                "tool.polygon" => s.tool_polygon = config::points(k, v)?,
                "tool.origin" => s.tool_origin = config::pair(k, v)?,
                "tool.hinge" => s.hinge = if v == "none" { None } else { Some(config::value(k, v)?) },
                "motion.translate" => s.translate = config::pair(k, v)?,
                "motion.rotate" => s.rotate = config::value(k, v)?,
                "motion.period" => s.motion_period = config::value(k, v)?,
                "bend.rate" => s.bend_rate = config::value(k, v)?,
                "bend.max" => s.bend_max = config::value(k, v)?,
                "speckle.rate" => s.speckle_rate = config::value(k, v)?,
                _ => return Err(Error::Config(format!("unknown script key '{k}' (line {})", e.line))),
            }
        }
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_entries(&config::read_kv_file(path)?)
    }

    /// Motion progress at frame `k`: `k` steps, folded back and forth when a
    /// period is set.
    pub fn progress(&self, k: usize) -> f64 {
        if self.motion_period == 0 {
            return k as f64;
        }
        let cycle = 2 * self.motion_period;
        let m = k % cycle;
        (if m <= self.motion_period { m } else { cycle - m }) as f64
    }

    /// Bend angle at frame `k`, degrees: a triangle wave starting at 0.
    pub fn bend_at(&self, k: usize) -> f64 {
        if self.hinge.is_none() || self.bend_rate == 0.0 || self.bend_max <= 0.0 {
            return 0.0;
        }
        let amp = self.bend_max;
        let p = (k as f64 * self.bend_rate.abs()).rem_euclid(4.0 * amp);
        let b = if p <= amp {
            p
        } else if p <= 3.0 * amp {
            2.0 * amp - p
        } else {
            p - 4.0 * amp
        };
        b * self.bend_rate.signum()
    }

    /// Tool-to-image transform at frame `k`.
    pub fn pose(&self, k: usize) -> Affine2D {
        let s = self.progress(k);
        let (sin, cos) = (self.rotate * s).to_radians().sin_cos();
        Affine2D::new(
            [[cos, -sin], [sin, cos]],
            [self.tool_origin.0 + s * self.translate.0, self.tool_origin.1 + s * self.translate.1],
        )
    }

    /// Tool outline in tool coordinates with the distal part bent by
    /// `bend_deg` about the hinge.
    pub fn bent_polygon(&self, bend_deg: f64) -> Vec<(f64, f64)> {
        match self.hinge {
            Some(h) if bend_deg != 0.0 => {
                let hinge = self.tool_polygon[h];
                let rot = Affine2D::rotation_about(bend_deg, hinge);
                self.tool_polygon
                    .iter()
                    .map(|&p| if p.0 > hinge.0 { rot.apply(p) } else { p })
                    .collect()
            }
            _ => self.tool_polygon.clone(),
        }
    }

    pub fn image_polygon(&self, k: usize) -> Vec<(f64, f64)> {
        let pose = self.pose(k);
        self.bent_polygon(self.bend_at(k)).into_iter().map(|p| pose.apply(p)).collect()
    }

    /// Checks the script before anything is rendered.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 8 || self.height < 8 {
            return bad(format!("canvas {}x{} is too small", self.width, self.height));
        }
        if self.tool_polygon.len() < 3 {
            return bad("tool.polygon needs at least 3 vertices".into());
        }
        if let Some(h) = self.hinge {
            if h >= self.tool_polygon.len() {
                return bad(format!("tool.hinge {h} is not a vertex index"));
            }
        }
        let finite = [
            self.background_amplitude,
            self.background_period,
            self.background_noise,
            self.translate.0,
            self.translate.1,
            self.rotate,
            self.bend_rate,
            self.bend_max,
            self.speckle_rate,
        ];
        if !finite.iter().all(|v| v.is_finite()) || self.background_period <= 0.0 || self.speckle_rate < 0.0 {
            return bad("script contains a non-finite or out-of-range value".into());
        }
        for k in 0..self.frames {
            let poly = self.image_polygon(k);
            if !is_simple(&poly) {
                return bad(format!("tool polygon self-intersects at frame {k}"));
            }
            let area = polygon_area(&poly);
            let inside = rasterize_polygon(&poly, self.width, self.height).count_foreground() as f64;
            if inside < 0.5 * area {
                return bad(format!(
                    "only {:.0}% of the tool is in frame at frame {k}",
                    100.0 * inside / area
                ));
            }
        }
        Ok(())
    }
}

pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    orient(a, b, p) == 0.0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

fn segments_touch(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    on_segment(a, b, c) || on_segment(a, b, d) || on_segment(c, d, a) || on_segment(c, d, b)
}

/// No two non-adjacent edges meet.
pub fn is_simple(poly: &[(f64, f64)]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_touch(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Pixel `(x, y)` is foreground when its centre `(x, y)` is inside the
/// polygon; centres exactly on an edge count as inside.
pub fn rasterize_polygon(poly: &[(f64, f64)], width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::background(width, height);
    let n = poly.len();
    let ymin = poly.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let ymax = poly.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).floor().min(height as f64 - 1.0);
    if !(ymin <= ymax) {
        return mask;
    }
    let fill = |mask: &mut BinaryMask, y: usize, x0: f64, x1: f64| {
        let a = x0.ceil().max(0.0);
        let b = x1.floor().min(width as f64 - 1.0);
        if a <= b {
            for x in a as usize..=b as usize {
                mask.set(x, y, true);
            }
        }
    };
    let mut xs = Vec::new();
    for yi in ymin as usize..=ymax as usize {
        let y = yi as f64;
        xs.clear();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if a.1 == b.1 {
                if a.1 == y {
                    fill(&mut mask, yi, a.0.min(b.0), a.0.max(b.0));
                }
                continue;
            }
            let x = a.0 + (y - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if (a.1 <= y && y < b.1) || (b.1 <= y && y < a.1) {
                xs.push(x);
            } else if y == a.1.max(b.1) {
                // Edge endpoint excluded by the half-open rule; still an
                // on-edge tie.
                fill(&mut mask, yi, x, x);
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            fill(&mut mask, yi, pair[0], pair[1]);
        }
    }
    mask
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(ix: i64, iy: i64, salt: u64) -> f64 {
    let h = splitmix(salt ^ splitmix((ix as u64).wrapping_mul(0x1F1F_1F1F) ^ (iy as u64).rotate_left(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Smooth value noise in [-1, 1] with unit lattice spacing.
fn value_noise(x: f64, y: f64, salt: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (s(x - fx), s(y - fy));
    let top = lattice(ix, iy, salt) * (1.0 - tx) + lattice(ix + 1, iy, salt) * tx;
    let bottom = lattice(ix, iy + 1, salt) * (1.0 - tx) + lattice(ix + 1, iy + 1, salt) * tx;
    top * (1.0 - ty) + bottom * ty
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub frame_id: u64,
    pub pose: Affine2D,
    pub bend_deg: f64,
}

/// Renders frames of a validated script.
pub struct Synthesizer {
    script: SynthScript,
    seed: u64,
    background: ColorImage,
}

impl Synthesizer {
    pub fn new(script: SynthScript, seed: u64) -> Result<Self> {
        script.validate()?;
        let (w, h) = (script.width, script.height);
        let mut background = ColorImage::filled(w, h, [0, 0, 0]);
        let salt = splitmix(seed);
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f64, y as f64);
                let grid = (TAU * xf / script.background_period).sin() * (TAU * yf / script.background_period).sin();
                let v = 128.0
                    + script.background_amplitude * grid
                    + script.background_noise * value_noise(xf / 7.0, yf / 7.0, salt);
                background.set_pixel(x, y, [to_u8(60.0 + 0.8 * v), to_u8(0.45 * v), to_u8(0.35 * v)]);
            }
        }
        Ok(Self {
            script,
            seed,
            background,
        })
    }

    pub fn script(&self) -> &SynthScript {
        &self.script
    }

    pub fn len(&self) -> usize {
        self.script.frames
    }

    pub fn is_empty(&self) -> bool {
        self.script.frames == 0
    }

    pub fn truth(&self, k: usize) -> FrameTruth {
        FrameTruth {
            frame_id: k as u64,
            pose: self.script.pose(k),
            bend_deg: self.script.bend_at(k),
        }
    }

    pub fn mask(&self, k: usize) -> BinaryMask {
        rasterize_polygon(&self.script.image_polygon(k), self.script.width, self.script.height)
    }

    /// Frame `k` and its ground-truth mask.
    pub fn render(&self, k: usize) -> (ColorImage, BinaryMask) {
        let s = &self.script;
        let mask = self.mask(k);
        let mut frame = self.background.clone();
        let truth = self.truth(k);
        let inv = truth.pose.inverse().expect("rotation plus translation is invertible");
        let unbend = s
            .hinge
            .filter(|_| truth.bend_deg != 0.0)
            .map(|h| {
                let hinge = s.tool_polygon[h];
                let half = (truth.bend_deg / 2.0).to_radians();
                (hinge, (half.cos(), half.sin()), Affine2D::rotation_about(-truth.bend_deg, hinge))
            });
        let salt = splitmix(self.seed ^ 0xA5A5_A5A5);
        for y in 0..s.height {
            for x in 0..s.width {
                if !mask.get(x, y) {
                    continue;
                }
                let mut q = inv.apply((x as f64, y as f64));
                if let Some((hinge, dir, rot)) = unbend {
                    // Points past the bisector of the bend belong to the distal part.
                    if (q.0 - hinge.0) * dir.0 + (q.1 - hinge.1) * dir.1 > 0.0 {
                        q = rot.apply(q);
                    }
                }
                let u = 140.0 + 55.0 * value_noise(q.0 / 5.0, q.1 / 5.0, salt) + 20.0 * (TAU * q.0 / 19.0).sin();
                frame.set_pixel(x, y, [to_u8(0.35 * u), to_u8(0.45 * u), to_u8(40.0 + 0.75 * u)]);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ (k as u64).wrapping_mul(0x2545_F491_4F6C_DD1D)));
        let expected = s.speckle_rate * (s.width * s.height) as f64;
        let count = expected.floor() as usize + usize::from(rng.random::<f64>() < expected.fract());
        for _ in 0..count {
            let cx = rng.random_range(0..s.width) as isize;
            let cy = rng.random_range(0..s.height) as isize;
            let r = rng.random_range(1..=2i64) as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (px, py) = (cx + dx, cy + dy);
                    if dx * dx + dy * dy <= r * r && px >= 0 && py >= 0 && (px as usize) < s.width && (py as usize) < s.height {
                        frame.set_pixel(px as usize, py as usize, [250, 250, 250]);
                    }
                }
            }
        }
        (frame, mask)
    }
}

pub fn manifest_line(t: &FrameTruth) -> String {
    let a = t.pose.a;
    format!(
        "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
        t.frame_id, a[0][0], a[0][1], a[1][0], a[1][1], t.pose.t[0], t.pose.t[1], t.bend_deg
    )
}

pub fn parse_manifest(text: &str) -> Result<Vec<FrameTruth>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Format(format!("manifest line '{line}' needs 8 fields")));
            }
            let num = |i: usize| -> Result<f64> {
                f[i].trim().parse().map_err(|_| Error::Format(format!("manifest field '{}'", f[i])))
            };
            Ok(FrameTruth {
                frame_id: f[0].trim().parse().map_err(|_| Error::Format(format!("manifest id '{}'", f[0])))?,
                pose: Affine2D::new([[num(1)?, num(2)?], [num(3)?, num(4)?]], [num(5)?, num(6)?]),
                bend_deg: num(7)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub frames_dir: std::path::PathBuf,
    pub masks_dir: std::path::PathBuf,
    pub manifest: std::path::PathBuf,
    pub truth: Vec<FrameTruth>,
}

/// Writes `frames/NNNNNN.ppm`, `masks/NNNNNN.pgm` and `manifest.csv` under
/// `out`.
pub fn synth_sequence(script: &SynthScript, seed: u64, out: &Path) -> Result<SynthOutput> {
    let synth = Synthesizer::new(script.clone(), seed)?;
    let frames_dir = out.join("frames");
    let masks_dir = out.join("masks");
    for d in [&frames_dir, &masks_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut manifest = String::from("# frame_id,a11,a12,a21,a22,tx,ty,bend_deg\n");
    let mut truth = Vec::with_capacity(synth.len());
    for k in 0..synth.len() {
        let (frame, mask) = synth.render(k);
        pnm::save_ppm(&frames_dir.join(frame_name(k as u64, "ppm")), &frame)?;
        pnm::save_mask(&masks_dir.join(frame_name(k as u64, "pgm")), &mask)?;
        let t = synth.truth(k);
        let _ = writeln!(manifest, "{}", manifest_line(&t));
        truth.push(t);
    }
    let manifest_path = out.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(SynthOutput {
        frames_dir,
        masks_dir,
        manifest: manifest_path,
        truth,
    })
}
