//! The dual-rate frame loop.
//!
//! Every frame is converted to a grayscale pyramid, offered to the slow
//! segmenter if it is idle, and then registered against the current
//! keyframe: the keyframe's corners are tracked into the frame, an affine
//! transform is fitted robustly, and the keyframe mask is warped through it.
//! A segmenter result replaces the keyframe; it is never emitted for its own
//! (past) frame.
//!
//! Within one frame the order is: pyramid, poll, submit, poll, register.
//! Polling after the submission lets a zero-latency segmenter produce the
//! keyframe for the frame being processed.

mod config;
mod report;

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

pub use config::{FallbackPolicy, PipelineConfig, CONFIG_KEYS};
pub use report::{stage_stats, FrameRecord, RunReport, Stage, StageStats};

use crate::error::{Error, Result};
use crate::features::{good_features, Corner, CornerParams};
use crate::geometry::{ransac_affine, warp_mask, Affine2D, Correspondences, RansacParams};
use crate::imgcore::sequence::frame_name;
use crate::imgcore::{build_pyramid, pnm, to_grayscale, BinaryMask, ColorImage, GrayImage, Pyramid};
use crate::optflow::{lk_track_prepared, FlowParams, PreparedPyramid};
use crate::segmenter::{Segmenter, SegmenterRequest, SegmenterResult, Submission};

/// The last segmented frame with everything needed to register later
/// frames against it. Corners all lie on mask foreground.
#[derive(Debug)]
pub struct KeyframeRecord {
    pub frame_id: u64,
    pub gray: GrayImage,
    pub pyramid: PreparedPyramid,
    pub mask: BinaryMask,
    pub corners: Vec<Corner>,
}

impl KeyframeRecord {
    pub fn build(frame_id: u64, gray: GrayImage, mask: BinaryMask, corners: &CornerParams, flow: &FlowParams) -> Result<Self> {
        let pyramid = build_pyramid(&gray, flow.levels)?;
        let corners = good_features(pyramid.base(), &mask, corners)?;
        Ok(Self {
            frame_id,
            gray,
            pyramid: PreparedPyramid::new(pyramid),
            mask,
            corners,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OutputSource {
    /// The keyframe mask itself (current frame is the keyframe).
    Keyframe,
    /// The keyframe mask warped by the estimated transform.
    Warped,
    /// Registration failed; the previous output is repeated.
    Fallback,
    /// No mask.
    None,
}

impl OutputSource {
    pub const ALL: [OutputSource; 4] = [
        OutputSource::Keyframe,
        OutputSource::Warped,
        OutputSource::Fallback,
        OutputSource::None,
    ];
}

impl fmt::Display for OutputSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputSource::Keyframe => "keyframe",
            OutputSource::Warped => "warped",
            OutputSource::Fallback => "fallback",
            OutputSource::None => "none",
        })
    }
}

/// Stage durations for one frame, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub gray_pyramid: f64,
    pub track: f64,
    pub ransac: f64,
    pub warp: f64,
    /// Installing a new keyframe; not part of propagation.
    pub keyframe_update: f64,
}

impl StageTimes {
    pub fn propagation(&self) -> f64 {
        self.gray_pyramid + self.track + self.ransac + self.warp
    }
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame_id: u64,
    pub mask: Option<BinaryMask>,
    pub source: OutputSource,
    pub keyframe_id: Option<u64>,
    /// Present for keyframe and warped outputs.
    pub transform: Option<Affine2D>,
    pub timing: StageTimes,
    /// The frame was accepted by the segmenter.
    pub submitted: bool,
    /// Id of a keyframe installed while processing this frame.
    pub keyframe_installed: Option<u64>,
    pub tracked: usize,
    pub inliers: usize,
}

/// Registers frames against a keyframe and applies the fallback policy.
pub struct Propagator {
    flow: FlowParams,
    ransac: RansacParams,
    fallback: FallbackPolicy,
    previous: Option<BinaryMask>,
    consecutive_failures: usize,
}

struct Registration {
    transform: Option<Affine2D>,
    tracked: usize,
    inliers: usize,
}

impl Propagator {
    pub fn new(flow: FlowParams, ransac: RansacParams, fallback: FallbackPolicy) -> Self {
        Self {
            flow,
            ransac,
            fallback,
            previous: None,
            consecutive_failures: 0,
        }
    }

    fn register(&self, current: &Pyramid, kf: &KeyframeRecord, timing: &mut StageTimes) -> Registration {
        let t = Instant::now();
        let tracks = lk_track_prepared(&kf.pyramid, current, &kf.corners, &self.flow);
        timing.track = elapsed_ms(t);
        let (src, dst): (Vec<_>, Vec<_>) = tracks
            .iter()
            .filter(|p| p.is_tracked())
            .map(|p| (p.src, p.dst))
            .unzip();
        let tracked = src.len();
        let t = Instant::now();
        let fit = if tracked < 3 {
            None
        } else {
            Correspondences::new(src, dst)
                .and_then(|c| ransac_affine(&c, &self.ransac))
                .map_err(|e| log::debug!("registration to keyframe {} failed: {e}", kf.frame_id))
                .ok()
        };
        timing.ransac = elapsed_ms(t);
        Registration {
            transform: fit.as_ref().map(|f| f.transform),
            tracked,
            inliers: fit.map_or(0, |f| f.n_inliers),
        }
    }

    /// Segments `frame_id` (whose pyramid is `current`) from `kf`. Never
    /// fails on a valid frame: registration failures go through the
    /// fallback policy.
    pub fn propagate_pyramid(&mut self, current: &Pyramid, frame_id: u64, kf: &KeyframeRecord, mut timing: StageTimes) -> FrameOutput {
        debug_assert!(kf.frame_id <= frame_id, "keyframe from the future");
        let reg = self.register(current, kf, &mut timing);
        let (transform, source) = if frame_id == kf.frame_id {
            (Some(Affine2D::IDENTITY), OutputSource::Keyframe)
        } else {
            (reg.transform, OutputSource::Warped)
        };
        let t = Instant::now();
        let warped = transform.and_then(|tr| warp_mask(&kf.mask, &tr).ok());
        timing.warp = elapsed_ms(t);

        let mut out = FrameOutput {
            frame_id,
            mask: None,
            source,
            keyframe_id: Some(kf.frame_id),
            transform,
            timing,
            submitted: false,
            keyframe_installed: None,
            tracked: reg.tracked,
            inliers: reg.inliers,
        };
        match warped {
            Some(mask) => {
                self.consecutive_failures = 0;
                self.previous = Some(mask.clone());
                out.mask = Some(mask);
            }
            None => {
                self.consecutive_failures += 1;
                out.transform = None;
                match self.fallback {
                    FallbackPolicy::Hold { limit } if self.consecutive_failures <= limit => {
                        out.source = OutputSource::Fallback;
                        out.mask = Some(self.previous.clone().unwrap_or_else(|| kf.mask.clone()));
                    }
                    _ => out.source = OutputSource::None,
                }
            }
        }
        out
    }

    pub fn propagate(&mut self, current: &ColorImage, frame_id: u64, kf: &KeyframeRecord) -> Result<FrameOutput> {
        let mut timing = StageTimes::default();
        let t = Instant::now();
        let pyr = build_pyramid(&to_grayscale(current), self.flow.levels)?;
        timing.gray_pyramid = elapsed_ms(t);
        Ok(self.propagate_pyramid(&pyr, frame_id, kf, timing))
    }
}

/// The frame loop state: segmenter, frame cache, keyframe and propagator.
pub struct Pipeline {
    corners: CornerParams,
    flow: FlowParams,
    frame_cache: usize,
    segmenter: Segmenter,
    propagator: Propagator,
    cache: VecDeque<(u64, GrayImage)>,
    keyframe: Option<Arc<KeyframeRecord>>,
    dims: Option<(usize, usize)>,
    last_frame: Option<u64>,
    keyframe_updates: u64,
    skipped_updates: u64,
}

impl Pipeline {
    /// `cfg.segmenter` is ignored; `segmenter` is used instead.
    pub fn new(cfg: &PipelineConfig, segmenter: Segmenter) -> Result<Self> {
        cfg.corners.validate()?;
        cfg.flow.validate()?;
        cfg.ransac.validate()?;
        if cfg.frame_cache == 0 {
            return Err(Error::Config("pipeline.frame_cache must be >= 1".into()));
        }
        Ok(Self {
            corners: cfg.corners,
            flow: cfg.flow,
            frame_cache: cfg.frame_cache,
            segmenter,
            propagator: Propagator::new(cfg.flow, cfg.ransac, cfg.fallback),
            cache: VecDeque::with_capacity(cfg.frame_cache + 1),
            keyframe: None,
            dims: None,
            last_frame: None,
            keyframe_updates: 0,
            skipped_updates: 0,
        })
    }

    pub fn keyframe(&self) -> Option<&Arc<KeyframeRecord>> {
        self.keyframe.as_ref()
    }

    pub fn keyframe_updates(&self) -> u64 {
        self.keyframe_updates
    }

    pub fn skipped_updates(&self) -> u64 {
        self.skipped_updates
    }

    /// Installs the result as the new keyframe, or logs and skips it when
    /// its frame has left the cache.
    pub fn on_segmenter_result(&mut self, res: SegmenterResult) -> Result<bool> {
        let Some(gray) = self.cache.iter().find(|(id, _)| *id == res.frame_id).map(|(_, g)| g.clone()) else {
            log::warn!(
                "segmenter result for frame {} arrived after the frame left the cache; keeping keyframe {:?}",
                res.frame_id,
                self.keyframe.as_ref().map(|k| k.frame_id)
            );
            self.skipped_updates += 1;
            return Ok(false);
        };
        let kf = KeyframeRecord::build(res.frame_id, gray, res.mask, &self.corners, &self.flow)?;
        log::debug!("keyframe {} installed with {} corners", kf.frame_id, kf.corners.len());
        self.keyframe = Some(Arc::new(kf));
        self.keyframe_updates += 1;
        Ok(true)
    }

    fn poll(&mut self, now: u64, installed: &mut Option<u64>) -> Result<()> {
        if let Some(res) = self.segmenter.poll_result(now)? {
            let id = res.frame_id;
            if self.on_segmenter_result(res)? {
                *installed = Some(id);
            }
        }
        Ok(())
    }

    /// Processes one frame and returns its single output.
    pub fn process(&mut self, frame_id: u64, frame: &ColorImage) -> Result<FrameOutput> {
        match self.dims {
            None => {
                self.flow.check_frame_size(frame.width(), frame.height())?;
                self.dims = Some(frame.dims());
            }
            Some(d) if d != frame.dims() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: frame.dims(),
                })
            }
            Some(_) => {}
        }
        if self.last_frame.is_some_and(|last| frame_id <= last) {
            return Err(Error::Format(format!(
                "frame {frame_id} follows frame {}; frame ids must increase",
                self.last_frame.unwrap_or_default()
            )));
        }
        self.last_frame = Some(frame_id);

        let mut timing = StageTimes::default();
        let t = Instant::now();
        let gray = to_grayscale(frame);
        let pyr = build_pyramid(&gray, self.flow.levels)?;
        timing.gray_pyramid = elapsed_ms(t);
        self.cache.push_back((frame_id, gray));
        while self.cache.len() > self.frame_cache {
            self.cache.pop_front();
        }

        let t = Instant::now();
        let mut installed = None;
        self.poll(frame_id, &mut installed)?;
        let submitted = self.segmenter.submit_if_idle(SegmenterRequest {
            frame_id,
            frame: frame.clone(),
        })? == Submission::Accepted;
        self.poll(frame_id, &mut installed)?;
        timing.keyframe_update = elapsed_ms(t);

        let mut out = match &self.keyframe {
            Some(kf) => {
                let kf = Arc::clone(kf);
                self.propagator.propagate_pyramid(&pyr, frame_id, &kf, timing)
            }
            None => FrameOutput {
                frame_id,
                mask: None,
                source: OutputSource::None,
                keyframe_id: None,
                transform: None,
                timing,
                submitted: false,
                keyframe_installed: None,
                tracked: 0,
                inliers: 0,
            },
        };
        out.submitted = submitted;
        out.keyframe_installed = installed;
        Ok(out)
    }
}

/// Runs `frames` through a pipeline built from `cfg`, handing every output
/// to `sink` in frame order.
pub fn run<I, S>(frames: I, cfg: &PipelineConfig, sink: S) -> Result<RunReport>
where
    I: IntoIterator<Item = Result<(u64, ColorImage)>>,
    S: FnMut(&FrameOutput) -> Result<()>,
{
    cfg.validate()?;
    let segmenter = cfg.segmenter.build()?;
    run_with(frames, cfg, segmenter, sink)
}

/// [`run`] with an explicitly constructed segmenter.
pub fn run_with<I, S>(frames: I, cfg: &PipelineConfig, segmenter: Segmenter, mut sink: S) -> Result<RunReport>
where
    I: IntoIterator<Item = Result<(u64, ColorImage)>>,
    S: FnMut(&FrameOutput) -> Result<()>,
{
    let mut pipeline = Pipeline::new(cfg, segmenter)?;
    let mut report = RunReport::default();
    let start = Instant::now();
    for item in frames {
        let (frame_id, frame) = item?;
        let out = pipeline.process(frame_id, &frame)?;
        sink(&out)?;
        report.frames.push(FrameRecord::from_output(&out));
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    report.keyframe_updates = pipeline.keyframe_updates();
    report.skipped_updates = pipeline.skipped_updates();
    Ok(report)
}

/// Writes one PGM per output mask plus a `sources.csv` naming every frame's
/// output source.
pub struct MaskDirSink {
    dir: PathBuf,
    sources: String,
}

impl MaskDirSink {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            sources: String::from("frame_id,source,keyframe_id\n"),
        })
    }

    pub fn write(&mut self, out: &FrameOutput) -> Result<()> {
        if let Some(mask) = &out.mask {
            pnm::save_mask(&self.dir.join(frame_name(out.frame_id, "pgm")), mask)?;
        }
        let kf = out.keyframe_id.map_or_else(String::new, |k| k.to_string());
        self.sources.push_str(&format!("{},{},{kf}\n", out.frame_id, out.source));
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let path = self.dir.join(crate::eval::SOURCES_FILE);
        fs::write(&path, self.sources).map_err(|e| Error::io(&path, e))
    }
}
