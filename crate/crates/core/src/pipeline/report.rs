use std::fmt::Write as _;

use super::{FrameOutput, OutputSource, StageTimes};

/// Per-frame bookkeeping kept by a run (everything in a [`FrameOutput`]
/// except the mask).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub source: OutputSource,
    pub keyframe_id: Option<u64>,
    pub submitted: bool,
    pub keyframe_installed: Option<u64>,
    pub tracked: usize,
    pub inliers: usize,
    pub timing: StageTimes,
}

impl FrameRecord {
    pub fn from_output(out: &FrameOutput) -> Self {
        Self {
            frame_id: out.frame_id,
            source: out.source,
            keyframe_id: out.keyframe_id,
            submitted: out.submitted,
            keyframe_installed: out.keyframe_installed,
            tracked: out.tracked,
            inliers: out.inliers,
            timing: out.timing,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn stage_stats(values: impl Iterator<Item = f64>) -> StageStats {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return StageStats::default();
    }
    v.sort_by(f64::total_cmp);
    StageStats {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        p50: percentile(&v, 50.0),
        p95: percentile(&v, 95.0),
        max: v[v.len() - 1],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GrayPyramid,
    Track,
    Ransac,
    Warp,
    /// Sum of the four stages above.
    Propagation,
    KeyframeUpdate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::GrayPyramid,
        Stage::Track,
        Stage::Ransac,
        Stage::Warp,
        Stage::Propagation,
        Stage::KeyframeUpdate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GrayPyramid => "gray_pyramid",
            Stage::Track => "track",
            Stage::Ransac => "ransac",
            Stage::Warp => "warp",
            Stage::Propagation => "propagation",
            Stage::KeyframeUpdate => "keyframe_update",
        }
    }

    pub fn of(self, t: &StageTimes) -> f64 {
        match self {
            Stage::GrayPyramid => t.gray_pyramid,
            Stage::Track => t.track,
            Stage::Ransac => t.ransac,
            Stage::Warp => t.warp,
            Stage::Propagation => t.propagation(),
            Stage::KeyframeUpdate => t.keyframe_update,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub frames: Vec<FrameRecord>,
    pub wall_seconds: f64,
    pub keyframe_updates: u64,
    pub skipped_updates: u64,
}

impl RunReport {
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn stats(&self, stage: Stage) -> StageStats {
        stage_stats(self.frames.iter().map(|f| stage.of(&f.timing)))
    }

    /// Frames whose propagation ran, i.e. a keyframe existed.
    pub fn propagation_stats(&self) -> StageStats {
        stage_stats(
            self.frames
                .iter()
                .filter(|f| f.keyframe_id.is_some())
                .map(|f| f.timing.propagation()),
        )
    }

    pub fn fps(&self) -> f64 {
        if self.wall_seconds > 0.0 {
            self.frames.len() as f64 / self.wall_seconds
        } else {
            0.0
        }
    }

    pub fn count(&self, source: OutputSource) -> usize {
        self.frames.iter().filter(|f| f.source == source).count()
    }

    /// `(source, count)` for every source, in a fixed order.
    pub fn histogram(&self) -> Vec<(OutputSource, usize)> {
        OutputSource::ALL.iter().map(|&s| (s, self.count(s))).collect()
    }

    pub fn keyframe_trace(&self) -> Vec<Option<u64>> {
        self.frames.iter().map(|f| f.keyframe_id).collect()
    }

    /// Key=value summary lines.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames={}", self.frames.len());
        for (src, n) in self.histogram() {
            let _ = writeln!(s, "source.{src}={n}");
        }
        let _ = writeln!(s, "keyframe_updates={}", self.keyframe_updates);
        let _ = writeln!(s, "skipped_updates={}", self.skipped_updates);
        let _ = writeln!(s, "wall_seconds={:.3}", self.wall_seconds);
        let _ = writeln!(s, "fps={:.2}", self.fps());
        for stage in Stage::ALL {
            let st = if stage == Stage::Propagation {
                self.propagation_stats()
            } else {
                self.stats(stage)
            };
            let n = stage.name();
            let _ = writeln!(
                s,
                "{n}.mean_ms={:.3}\n{n}.p50_ms={:.3}\n{n}.p95_ms={:.3}\n{n}.max_ms={:.3}",
                st.mean, st.p50, st.p95, st.max
            );
        }
        s
    }

    /// Per-frame CSV followed by a `# summary` block.
    pub fn to_text(&self) -> String {
        let mut s = String::from(
            "frame_id,source,keyframe_id,submitted,keyframe_installed,tracked,inliers,\
             gray_pyramid_ms,track_ms,ransac_ms,warp_ms,keyframe_update_ms\n",
        );
        let opt = |v: Option<u64>| v.map_or_else(String::new, |v| v.to_string());
        for f in &self.frames {
            let t = &f.timing;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3}",
                f.frame_id,
                f.source,
                opt(f.keyframe_id),
                u8::from(f.submitted),
                opt(f.keyframe_installed),
                f.tracked,
                f.inliers,
                t.gray_pyramid,
                t.track,
                t.ransac,
                t.warp,
                t.keyframe_update
            );
        }
        s.push_str("\n# summary\n");
        s.push_str(&self.summary());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let st = stage_stats((1..=20).map(f64::from));
        assert_eq!((st.p50, st.p95, st.max), (10.0, 19.0, 20.0));
        assert!((st.mean - 10.5).abs() < 1e-12);
        assert_eq!(stage_stats(std::iter::empty()), StageStats::default());
        assert_eq!(stage_stats([4.0].into_iter()).p95, 4.0);
    }
}
