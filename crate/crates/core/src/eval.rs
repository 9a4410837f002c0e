//! Sensitivity, specificity and balanced accuracy over binary masks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::ops::{Add, AddAssign};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imgcore::sequence::list_numbered;
use crate::imgcore::{pnm, BinaryMask};

/// File a `run` writes next to its masks, listing the source of every frame.
pub const SOURCES_FILE: &str = "sources.csv";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn scaled(&self, k: u64) -> Confusion {
        Confusion {
            tp: self.tp * k,
            fp: self.fp * k,
            tn: self.tn * k,
            fn_: self.fn_ * k,
        }
    }
}

impl Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for Confusion {
    fn add_assign(&mut self, o: Confusion) {
        *self = *self + o;
    }
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<Confusion> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `None` marks a ratio whose denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

impl Metrics {
    pub fn from_rates(sensitivity: Option<f64>, specificity: Option<f64>) -> Self {
        let balanced_accuracy = match (sensitivity, specificity) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            _ => None,
        };
        Self {
            sensitivity,
            specificity,
            balanced_accuracy,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Percentage with one decimal, halves rounded away from zero. The value is
/// first snapped to 1e-6 so binary representation error cannot flip a half.
pub fn format_percent(v: f64) -> String {
    let snapped = (v * 1e6).round() / 1e3;
    format!("{:.1}", snapped.round() / 10.0)
}

pub fn metrics(c: &Confusion) -> Metrics {
    Metrics::from_rates(ratio(c.tp, c.tp + c.fn_), ratio(c.tn, c.tn + c.fp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEval {
    pub frame_id: u64,
    pub confusion: Confusion,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    /// Ratios of the summed confusion counts. The headline numbers.
    pub pooled: Metrics,
    /// Mean of the defined per-frame sensitivities and specificities.
    pub per_frame_mean: Metrics,
    pub total: Confusion,
    pub frames_compared: usize,
    pub frames_excluded: usize,
    pub per_frame: Vec<FrameEval>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates per-frame confusions. `excluded` counts frames left out
/// because they had no prediction.
pub fn aggregate(per_frame: Vec<FrameEval>, excluded: usize) -> MetricReport {
    let total = per_frame.iter().fold(Confusion::default(), |acc, f| acc + f.confusion);
    let per_frame_mean = Metrics::from_rates(
        mean(per_frame.iter().map(|f| f.metrics.sensitivity)),
        mean(per_frame.iter().map(|f| f.metrics.specificity)),
    );
    MetricReport {
        pooled: metrics(&total),
        per_frame_mean,
        total,
        frames_compared: per_frame.len(),
        frames_excluded: excluded,
        per_frame,
    }
}

/// Evaluates `(frame_id, prediction, ground truth)` triples; a `None`
/// prediction is excluded and counted.
pub fn evaluate_masks<'a>(
    frames: impl IntoIterator<Item = (u64, Option<&'a BinaryMask>, &'a BinaryMask)>,
) -> Result<MetricReport> {
    let mut evals = Vec::new();
    let mut excluded = 0;
    for (frame_id, pred, gt) in frames {
        match pred {
            Some(pred) => {
                let c = confusion(pred, gt).map_err(|e| Error::Mismatch(format!("frame {frame_id}: {e}")))?;
                evals.push(FrameEval {
                    frame_id,
                    confusion: c,
                    metrics: metrics(&c),
                });
            }
            None => excluded += 1,
        }
    }
    Ok(aggregate(evals, excluded))
}

/// Frame ids a run marked as having no output, read from [`SOURCES_FILE`].
fn read_none_frames(pred_dir: &Path) -> Result<Option<BTreeSet<u64>>> {
    let path = pred_dir.join(SOURCES_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut none = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("frame_id") {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(id), Some(source)) = (fields.next(), fields.next()) else {
            return Err(Error::Format(format!("{}:{}: expected frame_id,source", path.display(), n + 1)));
        };
        let id: u64 = id
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}:{}: bad frame id '{id}'", path.display(), n + 1)))?;
        if source.trim() == "none" {
            none.insert(id);
        }
    }
    Ok(Some(none))
}

/// Compares numbered PGM masks in `pred_dir` against `gt_dir`.
///
/// Frames listed as `none` in the prediction directory's `sources.csv` are
/// excluded (and must have no mask file). Every other ground-truth frame
/// needs a prediction of the same size; anything else is an error that
/// lists the offending files.
pub fn evaluate_sequence(pred_dir: &Path, gt_dir: &Path) -> Result<MetricReport> {
    let gt: BTreeMap<u64, _> = list_numbered(gt_dir, "pgm")?.into_iter().collect();
    let pred: BTreeMap<u64, _> = list_numbered(pred_dir, "pgm")?.into_iter().collect();
    let none = read_none_frames(pred_dir)?.unwrap_or_default();

    let mut problems = Vec::new();
    for (id, path) in &pred {
        if !gt.contains_key(id) {
            problems.push(format!("{} has no ground truth", path.display()));
        } else if none.contains(id) {
            problems.push(format!("{} exists but frame {id} is marked none", path.display()));
        }
    }
    for (id, path) in &gt {
        if !pred.contains_key(id) && !none.contains(id) {
            problems.push(format!("{} has no prediction in {}", path.display(), pred_dir.display()));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Mismatch(format!(
            "{} file(s) do not pair up:\n  {}",
            problems.len(),
            problems.join("\n  ")
        )));
    }

    let mut evals = Vec::new();
    let mut excluded = 0;
    let mut size_problems = Vec::new();
    for (id, gt_path) in &gt {
        let Some(pred_path) = pred.get(id) else {
            excluded += 1;
            continue;
        };
        let g = pnm::load_mask(gt_path)?;
        let p = pnm::load_mask(pred_path)?;
        if g.dims() != p.dims() {
            size_problems.push(format!(
                "{} is {}x{}, {} is {}x{}",
                pred_path.display(),
                p.width(),
                p.height(),
                gt_path.display(),
                g.width(),
                g.height()
            ));
            continue;
        }
        let c = confusion(&p, &g)?;
        evals.push(FrameEval {
            frame_id: *id,
            confusion: c,
            metrics: metrics(&c),
        });
    }
    if !size_problems.is_empty() {
        return Err(Error::Mismatch(format!("size mismatch:\n  {}", size_problems.join("\n  "))));
    }
    Ok(aggregate(evals, excluded))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |v| format!("{v:.6}"))
}

impl MetricReport {
    /// Per-frame CSV followed by a `# summary` block of key=value lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame_id,tp,fp,tn,fn,sensitivity,specificity,balanced_accuracy\n");
        for f in &self.per_frame {
            let c = f.confusion;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                f.frame_id,
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                fmt_opt(f.metrics.sensitivity),
                fmt_opt(f.metrics.specificity),
                fmt_opt(f.metrics.balanced_accuracy)
            );
        }
        s.push_str("\n# summary\n");
        s.push_str(&self.summary());
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames_compared={}", self.frames_compared);
        let _ = writeln!(s, "frames_excluded={}", self.frames_excluded);
        let _ = writeln!(s, "pooled_sensitivity={}", fmt_opt(self.pooled.sensitivity));
        let _ = writeln!(s, "pooled_specificity={}", fmt_opt(self.pooled.specificity));
        let _ = writeln!(s, "pooled_balanced_accuracy={}", fmt_opt(self.pooled.balanced_accuracy));
        let _ = writeln!(s, "mean_sensitivity={}", fmt_opt(self.per_frame_mean.sensitivity));
        let _ = writeln!(s, "mean_specificity={}", fmt_opt(self.per_frame_mean.specificity));
        let _ = writeln!(s, "mean_balanced_accuracy={}", fmt_opt(self.per_frame_mean.balanced_accuracy));
        s
    }
}
