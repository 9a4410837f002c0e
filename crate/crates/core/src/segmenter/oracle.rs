use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SegmentBackend;
use crate::error::{Error, Result};
use crate::imgcore::sequence::list_numbered;
use crate::imgcore::{pnm, BinaryMask, ColorImage};

/// Optional damage applied to ground-truth masks to mimic an imperfect
/// segmenter. Off by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    /// Positive dilates, negative erodes, by this many pixels.
    pub radius: i64,
    /// Fraction of boundary pixels whose label is flipped.
    pub flip_fraction: f64,
    pub seed: u64,
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            radius: 0,
            flip_fraction: 0.0,
            seed: 0,
        }
    }
}

impl Corruption {
    pub fn is_active(&self) -> bool {
        self.radius != 0 || self.flip_fraction > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return Err(Error::Config("segmenter.corrupt_flip_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn apply(&self, mask: &BinaryMask, frame_id: u64) -> BinaryMask {
        let mut out = match self.radius {
            r if r > 0 => mask.dilate(r as usize),
            r if r < 0 => mask.erode(r.unsigned_abs() as usize),
            _ => mask.clone(),
        };
        if self.flip_fraction > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ frame_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let (w, h) = out.dims();
            let reference = out.clone();
            for y in 0..h {
                for x in 0..w {
                    let v = reference.get(x, y);
                    let boundary = [(0isize, -1isize), (-1, 0), (1, 0), (0, 1)].iter().any(|&(dx, dy)| {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        nx >= 0
                            && ny >= 0
                            && (nx as usize) < w
                            && (ny as usize) < h
                            && reference.get(nx as usize, ny as usize) != v
                    });
                    if boundary && rng.random::<f64>() < self.flip_fraction {
                        out.set(x, y, !v);
                    }
                }
            }
        }
        out
    }
}

enum Source {
    Dir(HashMap<u64, PathBuf>),
    Memory(HashMap<u64, BinaryMask>),
}

/// Returns the ground-truth mask for the requested frame.
pub struct OracleSegmenter {
    source: Source,
    corruption: Corruption,
}

impl OracleSegmenter {
    /// Masks are `<dir>/<frame number>.pgm`, loaded on demand.
    pub fn from_dir(dir: PathBuf) -> Result<Self> {
        let files = list_numbered(&dir, "pgm")?;
        Ok(Self {
            source: Source::Dir(files.into_iter().collect()),
            corruption: Corruption::default(),
        })
    }

    pub fn from_masks(masks: impl IntoIterator<Item = (u64, BinaryMask)>) -> Self {
        Self {
            source: Source::Memory(masks.into_iter().collect()),
            corruption: Corruption::default(),
        }
    }

    pub fn with_corruption(mut self, corruption: Corruption) -> Self {
        self.corruption = corruption;
        self
    }
}

impl SegmentBackend for OracleSegmenter {
    fn segment(&mut self, frame_id: u64, _frame: &ColorImage) -> Result<BinaryMask> {
        let mask = match &self.source {
            Source::Dir(files) => {
                let path = files
                    .get(&frame_id)
                    .ok_or_else(|| Error::Segmenter(format!("no ground-truth mask for frame {frame_id}")))?;
                pnm::load_mask(path)?
            }
            Source::Memory(masks) => masks
                .get(&frame_id)
                .cloned()
                .ok_or_else(|| Error::Segmenter(format!("no ground-truth mask for frame {frame_id}")))?,
        };
        Ok(if self.corruption.is_active() {
            self.corruption.apply(&mask, frame_id)
        } else {
            mask
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::sequence::frame_name;

    fn square() -> BinaryMask {
        BinaryMask::from_fn(20, 20, |x, y| (5..15).contains(&x) && (5..15).contains(&y))
    }

    #[test]
    fn serves_masks_from_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        pnm::save_mask(&dir.path().join(frame_name(7, "pgm")), &square()).unwrap();
        let mut oracle = OracleSegmenter::from_dir(dir.path().to_path_buf()).unwrap();
        let frame = ColorImage::filled(20, 20, [0, 0, 0]);
        assert_eq!(oracle.segment(7, &frame).unwrap(), square());
        assert!(matches!(oracle.segment(8, &frame), Err(Error::Segmenter(_))));
    }

    #[test]
    fn corruption_changes_the_mask_deterministically() {
        let m = square();
        let grow = Corruption { radius: 2, ..Corruption::default() };
        assert!(grow.apply(&m, 0).count_foreground() > m.count_foreground());
        let shrink = Corruption { radius: -2, ..Corruption::default() };
        assert_eq!(shrink.apply(&m, 0).count_foreground(), 36);
        let flip = Corruption { flip_fraction: 0.5, seed: 3, ..Corruption::default() };
        let a = flip.apply(&m, 4);
        assert_ne!(a, m);
        assert_eq!(a, flip.apply(&m, 4));
        // Only the 1-pixel band around the boundary can change.
        for y in 0..20 {
            for x in 0..20 {
                if a.get(x, y) != m.get(x, y) {
                    assert!((4..16).contains(&x) && (4..16).contains(&y));
                }
            }
        }
    }
}
