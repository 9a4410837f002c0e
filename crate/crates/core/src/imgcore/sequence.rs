//! Directories of zero-padded numbered frames (`000000.ppm`, `000001.ppm`, ...).

use std::fs;
use std::path::{Path, PathBuf};

use super::pnm;
use super::ColorImage;
use crate::error::{Error, Result};

/// File name for frame `id` with the given extension.
pub fn frame_name(id: u64, ext: &str) -> String {
    format!("{id:06}.{ext}")
}

/// Numbered files with extension `ext` in `dir`, sorted by number. Files
/// whose stem is not purely numeric are ignored.
pub fn list_numbered(dir: &Path, ext: &str) -> Result<Vec<(u64, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let id: u64 = stem
            .parse()
            .map_err(|_| Error::Format(format!("{}: frame number overflow", path.display())))?;
        out.push((id, path));
    }
    out.sort_by_key(|(id, _)| *id);
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Format(format!(
            "duplicate frame number {} ({} and {})",
            w[0].0,
            w[0].1.display(),
            w[1].1.display()
        )));
    }
    Ok(out)
}

/// Lazily reads PPM frames of a directory in numeric order.
pub struct PpmDirSource {
    files: std::vec::IntoIter<(u64, PathBuf)>,
}

impl PpmDirSource {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self {
            files: list_numbered(dir, "ppm")?.into_iter(),
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.len() == 0
    }
}

impl Iterator for PpmDirSource {
    type Item = Result<(u64, ColorImage)>;

    fn next(&mut self) -> Option<Self::Item> {
        let (id, path) = self.files.next()?;
        Some(pnm::load_ppm(&path).map(|img| (id, img)))
    }
}
