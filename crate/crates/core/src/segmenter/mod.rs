//! The slow segmenter behind a single-slot submission contract.
//!
//! A [`Segmenter`] wraps a [`SegmentBackend`] (the thing that actually
//! produces masks) and a [`LatencyModel`]. At most one request is in flight;
//! a submission while busy is refused without side effects, and each
//! accepted request yields exactly one result, in submission order.
//!
//! With [`LatencyModel::FrameCount`] everything runs on the caller's thread
//! and a result for frame `k` becomes visible exactly when the frame clock
//! passed to [`Segmenter::poll_result`] reaches `k + L`. With
//! [`LatencyModel::WallClock`] the backend runs on a worker thread and the
//! result is released no earlier than the configured delay after submission.

mod external;
mod oracle;
mod threshold;

use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

pub use external::ExternalProcessSegmenter;
pub use oracle::{Corruption, OracleSegmenter};
pub use threshold::{ChannelExpr, ThresholdSegmenter};

use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, ColorImage};

#[derive(Debug, Clone)]
pub struct SegmenterRequest {
    pub frame_id: u64,
    pub frame: ColorImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmenterResult {
    pub frame_id: u64,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Submission {
    Accepted,
    Busy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyModel {
    WallClock(Duration),
    FrameCount(u64),
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::WallClock(Duration::from_millis(100))
    }
}

/// Produces one mask per frame. Implementations may be slow.
pub trait SegmentBackend: Send {
    fn segment(&mut self, frame_id: u64, frame: &ColorImage) -> Result<BinaryMask>;
}

impl<F> SegmentBackend for F
where
    F: FnMut(u64, &ColorImage) -> Result<BinaryMask> + Send,
{
    fn segment(&mut self, frame_id: u64, frame: &ColorImage) -> Result<BinaryMask> {
        self(frame_id, frame)
    }
}

fn run_backend(backend: &mut dyn SegmentBackend, req: &SegmenterRequest) -> Result<SegmenterResult> {
    let mask = backend.segment(req.frame_id, &req.frame)?;
    if mask.dims() != req.frame.dims() {
        return Err(Error::Segmenter(format!(
            "mask for frame {} is {}x{}, frame is {}x{}",
            req.frame_id,
            mask.width(),
            mask.height(),
            req.frame.width(),
            req.frame.height()
        )));
    }
    Ok(SegmenterResult {
        frame_id: req.frame_id,
        mask,
    })
}

enum Engine {
    Frames {
        backend: Box<dyn SegmentBackend>,
        latency: u64,
        pending: Option<(u64, SegmenterResult)>,
    },
    Threaded {
        requests: Option<Sender<(Instant, SegmenterRequest)>>,
        results: Receiver<Result<SegmenterResult>>,
        worker: Option<JoinHandle<()>>,
    },
}

pub struct Segmenter {
    engine: Engine,
    in_flight: Option<u64>,
    last_accepted: Option<u64>,
    accepted: u64,
    delivered: u64,
}

impl Segmenter {
    pub fn new(backend: Box<dyn SegmentBackend>, latency: LatencyModel) -> Self {
        let engine = match latency {
            LatencyModel::FrameCount(latency) => Engine::Frames {
                backend,
                latency,
                pending: None,
            },
            LatencyModel::WallClock(delay) => {
                let (req_tx, req_rx) = mpsc::channel::<(Instant, SegmenterRequest)>();
                let (res_tx, res_rx) = mpsc::channel();
                let mut backend = backend;
                let worker = std::thread::Builder::new()
                    .name("segmenter".into())
                    .spawn(move || {
                        for (submitted, req) in req_rx {
                            let res = run_backend(backend.as_mut(), &req);
                            let failed = res.is_err();
                            let ready = submitted + delay;
                            let now = Instant::now();
                            if ready > now {
                                std::thread::sleep(ready - now);
                            }
                            if res_tx.send(res).is_err() || failed {
                                break;
                            }
                        }
                    })
                    .expect("spawn segmenter thread");
                Engine::Threaded {
                    requests: Some(req_tx),
                    results: res_rx,
                    worker: Some(worker),
                }
            }
        };
        Self {
            engine,
            in_flight: None,
            last_accepted: None,
            accepted: 0,
            delivered: 0,
        }
    }

    pub fn is_busy(&self) -> bool {
        self.in_flight.is_some()
    }

    /// Frame id of the request currently being processed.
    pub fn in_flight(&self) -> Option<u64> {
        self.in_flight
    }

    pub fn accepted_count(&self) -> u64 {
        self.accepted
    }

    pub fn delivered_count(&self) -> u64 {
        self.delivered
    }

    /// Hands `req` to the segmenter unless a request is already in flight.
    pub fn submit_if_idle(&mut self, req: SegmenterRequest) -> Result<Submission> {
        if self.in_flight.is_some() {
            return Ok(Submission::Busy);
        }
        if self.last_accepted.is_some_and(|last| req.frame_id <= last) {
            return Err(Error::Segmenter(format!(
                "frame id {} is not after the previous request {}",
                req.frame_id,
                self.last_accepted.unwrap_or_default()
            )));
        }
        let frame_id = req.frame_id;
        match &mut self.engine {
            Engine::Frames {
                backend,
                latency,
                pending,
            } => {
                let res = run_backend(backend.as_mut(), &req)?;
                *pending = Some((frame_id + *latency, res));
            }
            Engine::Threaded { requests, .. } => {
                let sent = requests
                    .as_ref()
                    .map(|tx| tx.send((Instant::now(), req)).is_ok())
                    .unwrap_or(false);
                if !sent {
                    return Err(Error::Segmenter("segmenter worker has terminated".into()));
                }
            }
        }
        self.in_flight = Some(frame_id);
        self.last_accepted = Some(frame_id);
        self.accepted += 1;
        debug_assert!(self.accepted - self.delivered <= 1);
        Ok(Submission::Accepted)
    }

    /// Returns the completed result, if any. `now` is the frame currently
    /// being processed; it only matters for frame-count latency.
    pub fn poll_result(&mut self, now: u64) -> Result<Option<SegmenterResult>> {
        let res = match &mut self.engine {
            Engine::Frames { pending, .. } => match pending {
                Some((ready_at, _)) if *ready_at <= now => pending.take().map(|(_, r)| r),
                _ => None,
            },
            Engine::Threaded { results, .. } => {
                if self.in_flight.is_none() {
                    return Ok(None);
                }
                match results.try_recv() {
                    Ok(r) => Some(r?),
                    Err(TryRecvError::Empty) => None,
                    Err(TryRecvError::Disconnected) => {
                        return Err(Error::Segmenter("segmenter worker has terminated".into()))
                    }
                }
            }
        };
        if let Some(r) = &res {
            debug_assert_eq!(Some(r.frame_id), self.in_flight);
            self.in_flight = None;
            self.delivered += 1;
        }
        Ok(res)
    }
}

impl Drop for Segmenter {
    fn drop(&mut self) {
        if let Engine::Threaded {
            requests, worker, ..
        } = &mut self.engine
        {
            requests.take();
            if let Some(handle) = worker.take() {
                let _ = handle.join();
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmenterKind {
    Oracle,
    Threshold,
    External,
}

impl std::str::FromStr for SegmenterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "threshold" => Ok(Self::Threshold),
            "external" => Ok(Self::External),
            other => Err(Error::Config(format!(
                "segmenter.kind must be oracle, threshold or external, got '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for SegmenterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Oracle => "oracle",
            Self::Threshold => "threshold",
            Self::External => "external",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmenterConfig {
    pub kind: SegmenterKind,
    pub latency: LatencyModel,
    pub command: Option<String>,
    pub mask_dir: Option<PathBuf>,
    pub threshold: f64,
    pub channel: ChannelExpr,
    pub corruption: Corruption,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            kind: SegmenterKind::Oracle,
            latency: LatencyModel::default(),
            command: None,
            mask_dir: None,
            threshold: 0.0,
            channel: ChannelExpr::default(),
            corruption: Corruption::default(),
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SegmenterKind::Oracle if self.mask_dir.is_none() => {
                Err(Error::Config("segmenter.mask_dir is required for the oracle segmenter".into()))
            }
            SegmenterKind::External if self.command.as_deref().is_none_or(|c| c.trim().is_empty()) => {
                Err(Error::Config("segmenter.command is required for the external segmenter".into()))
            }
            _ => self.corruption.validate(),
        }
    }

    pub fn build_backend(&self) -> Result<Box<dyn SegmentBackend>> {
        self.validate()?;
        Ok(match self.kind {
            SegmenterKind::Oracle => {
                let dir = self.mask_dir.clone().expect("validated");
                Box::new(OracleSegmenter::from_dir(dir)?.with_corruption(self.corruption))
            }
            SegmenterKind::Threshold => Box::new(ThresholdSegmenter::new(self.channel, self.threshold)),
            SegmenterKind::External => {
                Box::new(ExternalProcessSegmenter::spawn(self.command.as_deref().expect("validated"))?)
            }
        })
    }

    pub fn build(&self) -> Result<Segmenter> {
        Ok(Segmenter::new(self.build_backend()?, self.latency))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo_backend() -> Box<dyn SegmentBackend> {
        Box::new(|id: u64, f: &ColorImage| {
            Ok(BinaryMask::from_fn(f.width(), f.height(), |x, _| x as u64 == id % 4))
        })
    }

    fn req(frame_id: u64) -> SegmenterRequest {
        SegmenterRequest {
            frame_id,
            frame: ColorImage::filled(4, 2, [0, 0, 0]),
        }
    }

    #[test]
    fn single_slot_in_frame_mode() {
        let mut s = Segmenter::new(echo_backend(), LatencyModel::FrameCount(3));
        assert_eq!(s.poll_result(0).unwrap(), None);
        assert_eq!(s.submit_if_idle(req(10)).unwrap(), Submission::Accepted);
        assert_eq!(s.submit_if_idle(req(11)).unwrap(), Submission::Busy);
        assert_eq!(s.in_flight(), Some(10));
        assert_eq!(s.poll_result(11).unwrap(), None);
        assert_eq!(s.poll_result(12).unwrap(), None);
        let r = s.poll_result(13).unwrap().unwrap();
        assert_eq!(r.frame_id, 10);
        assert_eq!(s.poll_result(14).unwrap(), None);
        assert!(!s.is_busy());
        assert_eq!(s.submit_if_idle(req(14)).unwrap(), Submission::Accepted);
        assert_eq!(s.poll_result(17).unwrap().unwrap().frame_id, 14);
        assert_eq!((s.accepted_count(), s.delivered_count()), (2, 2));
    }

    #[test]
    fn zero_latency_is_visible_immediately() {
        let mut s = Segmenter::new(echo_backend(), LatencyModel::FrameCount(0));
        s.submit_if_idle(req(0)).unwrap();
        assert_eq!(s.poll_result(0).unwrap().unwrap().frame_id, 0);
    }

    #[test]
    fn non_monotone_ids_are_rejected() {
        let mut s = Segmenter::new(echo_backend(), LatencyModel::FrameCount(0));
        s.submit_if_idle(req(5)).unwrap();
        s.poll_result(5).unwrap();
        assert!(s.submit_if_idle(req(5)).is_err());
    }

    #[test]
    fn wrong_mask_size_is_an_error() {
        let bad: Box<dyn SegmentBackend> = Box::new(|_: u64, _: &ColorImage| Ok(BinaryMask::background(1, 1)));
        let mut s = Segmenter::new(bad, LatencyModel::FrameCount(1));
        assert!(s.submit_if_idle(req(0)).is_err());
    }

    #[test]
    fn wall_clock_releases_after_delay() {
        let mut s = Segmenter::new(echo_backend(), LatencyModel::WallClock(Duration::from_millis(60)));
        let start = Instant::now();
        assert_eq!(s.submit_if_idle(req(1)).unwrap(), Submission::Accepted);
        assert_eq!(s.submit_if_idle(req(2)).unwrap(), Submission::Busy);
        let r = loop {
            if let Some(r) = s.poll_result(0).unwrap() {
                break r;
            }
            std::thread::sleep(Duration::from_millis(2));
        };
        assert!(start.elapsed() >= Duration::from_millis(60));
        assert_eq!(r.frame_id, 1);
        assert!(!s.is_busy());
        assert_eq!(s.submit_if_idle(req(3)).unwrap(), Submission::Accepted);
    }

    #[test]
    fn wall_clock_backend_failure_is_fatal() {
        let failing: Box<dyn SegmentBackend> =
            Box::new(|_: u64, _: &ColorImage| Err(Error::Protocol("boom".into())));
        let mut s = Segmenter::new(failing, LatencyModel::WallClock(Duration::ZERO));
        s.submit_if_idle(req(0)).unwrap();
        let err = loop {
            match s.poll_result(0) {
                Ok(None) => std::thread::sleep(Duration::from_millis(1)),
                Ok(Some(_)) => panic!("unexpected result"),
                Err(e) => break e,
            }
        };
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn config_requires_kind_specific_keys() {
        let mut cfg = SegmenterConfig::default();
        assert!(cfg.validate().is_err());
        cfg.kind = SegmenterKind::Threshold;
        assert!(cfg.validate().is_ok());
        cfg.kind = SegmenterKind::External;
        assert!(cfg.validate().is_err());
        assert!("fcn".parse::<SegmenterKind>().is_err());
    }
}
