use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::config::{self, Entry};
use crate::error::{Error, Result};
use crate::features::CornerParams;
use crate::geometry::RansacParams;
use crate::optflow::FlowParams;
use crate::segmenter::{LatencyModel, SegmenterConfig};

/// What to emit when a frame cannot be registered to the keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackPolicy {
    /// Repeat the previous output mask, up to `limit` frames in a row, then
    /// emit nothing.
    Hold { limit: usize },
    /// Emit nothing.
    Drop,
}

impl Default for FallbackPolicy {
    fn default() -> Self {
        FallbackPolicy::Hold { limit: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corners: CornerParams,
    pub flow: FlowParams,
    pub ransac: RansacParams,
    pub segmenter: SegmenterConfig,
    pub fallback: FallbackPolicy,
    /// Recent frames kept so a late segmenter result can find its frame.
    pub frame_cache: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corners: CornerParams::default(),
            flow: FlowParams::default(),
            ransac: RansacParams::default(),
            segmenter: SegmenterConfig::default(),
            fallback: FallbackPolicy::default(),
            frame_cache: 64,
        }
    }
}

/// Every accepted configuration key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("corners.max_count", "maximum keyframe corners [4000]"),
    ("corners.quality_level", "corner score floor as a fraction of the best score [0.01]"),
    ("corners.min_distance", "minimum spacing between corners, px [8]"),
    ("corners.block_size", "structure-tensor window side, odd [5]"),
    ("corners.erosion_radius", "erode the keyframe mask by this radius before picking corners [0]"),
    ("flow.window", "Lucas-Kanade window side, odd [21]"),
    ("flow.levels", "pyramid levels used for tracking [3]"),
    ("flow.max_iters", "iterations per level [30]"),
    ("flow.epsilon", "stop when the update is shorter than this, px [0.01]"),
    ("flow.min_eig_threshold", "lose points whose normalised min eigenvalue is below this [1e-4]"),
    ("ransac.inlier_threshold", "inlier reprojection distance, px [3]"),
    ("ransac.max_iters", "iteration cap [500]"),
    ("ransac.confidence", "confidence for the adaptive iteration bound [0.99]"),
    ("ransac.min_inliers", "absolute consensus floor, >= 3 [10]"),
    ("ransac.min_inlier_fraction", "consensus floor as a fraction of tracked points [0.1]"),
    ("ransac.seed", "sampling seed [24301]"),
    ("segmenter.kind", "oracle | threshold | external [oracle]"),
    ("segmenter.latency_frames", "deterministic latency in frames; selects frame-count mode"),
    ("segmenter.latency_ms", "minimum wall-clock latency in ms; selects threaded mode [100]"),
    ("segmenter.mask_dir", "oracle: directory of numbered PGM masks"),
    ("segmenter.command", "external: shell command speaking the PPM-in/PGM-out protocol"),
    ("segmenter.channel", "threshold: r | g | b | luma | X-Y channel difference [luma]"),
    ("segmenter.threshold", "threshold: foreground where channel value > threshold [0]"),
    ("segmenter.corruption.radius", "oracle: dilate (>0) or erode (<0) masks by this radius [0]"),
    ("segmenter.corruption.flip_fraction", "oracle: fraction of boundary pixels flipped [0]"),
    ("segmenter.corruption.seed", "oracle: seed for boundary flips [0]"),
    ("fallback.policy", "hold | none: output when registration fails [hold]"),
    ("fallback.limit", "hold: consecutive held frames before emitting none [30]"),
    ("pipeline.frame_cache", "frames kept for pairing late segmenter results [64]"),
];

impl PipelineConfig {
    /// Applies entries in order; later entries override earlier ones.
    pub fn apply(&mut self, entries: &[Entry]) -> Result<()> {
        for e in entries {
            self.set(&e.key, &e.value).map_err(|err| match (err, e.line) {
                (Error::Config(m), line) if line > 0 => Error::Config(format!("line {line}: {m}")),
                (err, _) => err,
            })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let v = raw;
        match key {
            "corners.max_count" => self.corners.max_count = config::value(key, v)?,
            "corners.quality_level" => self.corners.quality_level = config::value(key, v)?,
            "corners.min_distance" => self.corners.min_distance = config::value(key, v)?,
            "corners.block_size" => self.corners.block_size = config::value(key, v)?,
            "corners.erosion_radius" => self.corners.erosion_radius = config::value(key, v)?,
            "flow.window" => self.flow.window = config::value(key, v)?,
            "flow.levels" => self.flow.levels = config::value(key, v)?,
            "flow.max_iters" => self.flow.max_iters = config::value(key, v)?,
            "flow.epsilon" => self.flow.epsilon = config::value(key, v)?,
            "flow.min_eig_threshold" => self.flow.min_eig_threshold = config::value(key, v)?,
            "ransac.inlier_threshold" => self.ransac.inlier_threshold = config::value(key, v)?,
            "ransac.max_iters" => self.ransac.max_iters = config::value(key, v)?,
            "ransac.confidence" => self.ransac.confidence = config::value(key, v)?,
            "ransac.min_inliers" => self.ransac.min_inliers = config::value(key, v)?,
            "ransac.min_inlier_fraction" => self.ransac.min_inlier_fraction = config::value(key, v)?,
            "ransac.seed" => self.ransac.seed = config::value(key, v)?,
            "segmenter.kind" => self.segmenter.kind = config::value(key, v)?,
            "segmenter.latency_frames" => self.segmenter.latency = LatencyModel::FrameCount(config::value(key, v)?),
            "segmenter.latency_ms" => {
                let ms: u64 = config::value(key, v)?;
                self.segmenter.latency = LatencyModel::WallClock(Duration::from_millis(ms));
            }
            "segmenter.mask_dir" => self.segmenter.mask_dir = Some(PathBuf::from(v)),
            "segmenter.command" => self.segmenter.command = Some(v.to_string()),
            "segmenter.channel" => self.segmenter.channel = config::value(key, v)?,
            "segmenter.threshold" => self.segmenter.threshold = config::value(key, v)?,
            "segmenter.corruption.radius" => self.segmenter.corruption.radius = config::value(key, v)?,
            "segmenter.corruption.flip_fraction" => self.segmenter.corruption.flip_fraction = config::value(key, v)?,
            "segmenter.corruption.seed" => self.segmenter.corruption.seed = config::value(key, v)?,
            "fallback.policy" => {
                self.fallback = match v {
                    "hold" => FallbackPolicy::Hold {
                        limit: match self.fallback {
                            FallbackPolicy::Hold { limit } => limit,
                            FallbackPolicy::Drop => 30,
                        },
                    },
                    "none" => FallbackPolicy::Drop,
                    _ => return Err(Error::Config(format!("{key}: expected 'hold' or 'none', got '{v}'"))),
                }
            }
            "fallback.limit" => {
                let limit = config::value(key, v)?;
                if let FallbackPolicy::Hold { limit: l } = &mut self.fallback {
                    *l = limit;
                }
            }
            "pipeline.frame_cache" => self.frame_cache = config::value(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&config::read_kv_file(path)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corners.validate()?;
        self.flow.validate()?;
        self.ransac.validate()?;
        self.segmenter.validate()?;
        if self.frame_cache == 0 {
            return Err(Error::Config("pipeline.frame_cache must be >= 1".into()));
        }
        if let LatencyModel::FrameCount(l) = self.segmenter.latency {
            if l as usize >= self.frame_cache {
                return Err(Error::Config(format!(
                    "pipeline.frame_cache ({}) must exceed segmenter.latency_frames ({l})",
                    self.frame_cache
                )));
            }
        }
        Ok(())
    }

    /// `key = value` lines that reproduce this configuration.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let c = &self.corners;
        put("corners.max_count", c.max_count.to_string());
        put("corners.quality_level", c.quality_level.to_string());
        put("corners.min_distance", c.min_distance.to_string());
        put("corners.block_size", c.block_size.to_string());
        put("corners.erosion_radius", c.erosion_radius.to_string());
        let f = &self.flow;
        put("flow.window", f.window.to_string());
        put("flow.levels", f.levels.to_string());
        put("flow.max_iters", f.max_iters.to_string());
        put("flow.epsilon", f.epsilon.to_string());
        put("flow.min_eig_threshold", f.min_eig_threshold.to_string());
        let r = &self.ransac;
        put("ransac.inlier_threshold", r.inlier_threshold.to_string());
        put("ransac.max_iters", r.max_iters.to_string());
        put("ransac.confidence", r.confidence.to_string());
        put("ransac.min_inliers", r.min_inliers.to_string());
        put("ransac.min_inlier_fraction", r.min_inlier_fraction.to_string());
        put("ransac.seed", r.seed.to_string());
        let g = &self.segmenter;
        put("segmenter.kind", g.kind.to_string());
        match g.latency {
            LatencyModel::FrameCount(l) => put("segmenter.latency_frames", l.to_string()),
            LatencyModel::WallClock(d) => put("segmenter.latency_ms", d.as_millis().to_string()),
        }
        if let Some(d) = &g.mask_dir {
            put("segmenter.mask_dir", d.display().to_string());
        }
        if let Some(c) = &g.command {
            put("segmenter.command", c.clone());
        }
        put("segmenter.channel", g.channel.to_string());
        put("segmenter.threshold", g.threshold.to_string());
        put("segmenter.corruption.radius", g.corruption.radius.to_string());
        put("segmenter.corruption.flip_fraction", g.corruption.flip_fraction.to_string());
        put("segmenter.corruption.seed", g.corruption.seed.to_string());
        match self.fallback {
            FallbackPolicy::Hold { limit } => {
                put("fallback.policy", "hold".into());
                put("fallback.limit", limit.to_string());
            }
            FallbackPolicy::Drop => put("fallback.policy", "none".into()),
        }
        put("pipeline.frame_cache", self.frame_cache.to_string());
        s
    }

    /// Help text listing every key.
    pub fn keys_help() -> String {
        let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        CONFIG_KEYS
            .iter()
            .map(|(k, d)| format!("  {k:<width$}  {d}\n"))
            .collect()
    }
}
