//! The `maskprop` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{self, Entry};
use crate::error::{Error, Result};
use crate::eval::{evaluate_sequence, format_percent};
use crate::features::good_features;
use crate::geometry::{ransac_affine, Correspondences};
use crate::imgcore::sequence::PpmDirSource;
use crate::imgcore::{build_pyramid, pnm, to_grayscale};
use crate::optflow::{lk_track, TrackStatus};
use crate::pipeline::{self, MaskDirSink, OutputSource, PipelineConfig, RunReport, Stage};
use crate::segmenter::{ChannelExpr, ThresholdSegmenter};
use crate::synth::{synth_sequence, SynthScript, SCRIPT_KEYS};

/// Manifest keys under this prefix describe the run, not the configuration.
const MANIFEST_PREFIX: &str = "run.";

fn config_help() -> String {
    format!(
        "Configuration keys (key = value lines in --config, or --set key=value):\n{}\n\
         Precedence: defaults < --config file < --set < --seed.\n\
         A run manifest can be passed back as --config to repeat the run.",
        PipelineConfig::keys_help()
    )
}

fn script_help() -> String {
    let width = SCRIPT_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Script keys:\n");
    for (k, d) in SCRIPT_KEYS {
        let _ = writeln!(s, "  {k:<width$}  {d}");
    }
    s
}

#[derive(Parser, Debug)]
#[command(name = "maskprop", version, about = "Real-time mask propagation from a slow segmenter", after_help = config_help())]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic sequence with exact ground truth.
    #[command(after_help = script_help())]
    Synth {
        /// Script file of key = value lines; defaults are used when omitted.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Seeds background texture, noise and speckles
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for frames/, masks/ and manifest.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment every frame of a sequence.
    #[command(after_help = config_help())]
    Run {
        #[command(flatten)]
        common: PipelineArgs,
        /// Directory receiving one PGM mask per frame and sources.csv.
        #[arg(long)]
        out_masks: PathBuf,
        /// Per-frame CSV plus summary block.
        #[arg(long)]
        report: PathBuf,
        /// Run manifest path [default: <report>.manifest].
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compare predicted masks with ground truth.
    Eval {
        /// Predicted mask directory written by `run`
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth mask directory
        #[arg(long)]
        gt: PathBuf,
        /// Per-frame CSV plus summary block.
        #[arg(long)]
        report: PathBuf,
    },
    /// Corners, flow and affine fit for one frame pair, dumped as CSV.
    #[command(after_help = config_help())]
    Track {
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        next: PathBuf,
        /// Foreground mask of the previous frame.
        #[arg(long)]
        mask: PathBuf,
        /// Directory receiving corners.csv, flow.csv and transform.csv.
        #[arg(long)]
        out: PathBuf,
        /// File of `key = value` lines (a run manifest also works)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one configuration key; repeatable
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the pipeline without writing masks and print stage timings.
    #[command(after_help = config_help())]
    Bench {
        #[command(flatten)]
        common: PipelineArgs,
    },
    /// Threshold segmenter speaking the external-process protocol on
    /// stdin/stdout.
    #[command(hide = true)]
    SegmentStdio {
        #[arg(long, default_value = "b-r")]
        channel: String,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        /// Extra delay per frame, ms.
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
    },
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Directory of numbered PPM frames.
    #[arg(long)]
    frames: PathBuf,
    /// File of `key = value` lines (a run manifest also works)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seeds RANSAC sampling and oracle corruption.
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(config: Option<&Path>, set: &[String], seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = config {
        let entries: Vec<Entry> = config::read_kv_file(path)?
            .into_iter()
            .filter(|e| !e.key.starts_with(MANIFEST_PREFIX))
            .collect();
        cfg.apply(&entries)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    for s in set {
        let e = config::parse_override(s)?;
        cfg.set(&e.key, &e.value)
            .map_err(|err| Error::Config(format!("--set {s}: {err}")))?;
    }
    if let Some(seed) = seed {
        cfg.ransac.seed = seed;
        cfg.segmenter.corruption.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn stage_table(report: &RunReport) -> String {
    let mut s = format!("{:<16} {:>9} {:>9} {:>9}\n", "stage", "mean_ms", "p50_ms", "p95_ms");
    for stage in Stage::ALL {
        let st = if stage == Stage::Propagation {
            report.propagation_stats()
        } else {
            report.stats(stage)
        };
        let _ = writeln!(s, "{:<16} {:>9.3} {:>9.3} {:>9.3}", stage.name(), st.mean, st.p50, st.p95);
    }
    let hist: Vec<String> = report.histogram().iter().map(|(src, n)| format!("{src}={n}")).collect();
    let _ = writeln!(s, "frames {} at {:.1} fps; sources {}", report.frames.len(), report.fps(), hist.join(" "));
    s
}

/// Everything needed to repeat a run: metadata under `run.` and the full
/// configuration snapshot.
fn run_manifest(cfg: &PipelineConfig, common: &PipelineArgs, out_masks: &Path, report_path: &Path, report: &RunReport) -> String {
    let mut s = String::from("# maskprop run manifest; pass as --config to repeat the run\n");
    let mut put = |k: &str, v: String| {
        let _ = writeln!(s, "{MANIFEST_PREFIX}{k} = {v}");
    };
    put("version", env!("CARGO_PKG_VERSION").to_string());
    put("seed", cfg.ransac.seed.to_string());
    put("frames", common.frames.display().to_string());
    put("out_masks", out_masks.display().to_string());
    put("report", report_path.display().to_string());
    put("frames_processed", report.frames.len().to_string());
    put("wall_seconds", format!("{:.3}", report.wall_seconds));
    put("fps", format!("{:.2}", report.fps()));
    let prop = report.propagation_stats();
    put("propagation_mean_ms", format!("{:.3}", prop.mean));
    put("propagation_p95_ms", format!("{:.3}", prop.p95));
    for (src, n) in report.histogram() {
        put(&format!("source.{src}"), n.to_string());
    }
    s.push_str(&cfg.snapshot());
    s
}

fn cmd_run(common: PipelineArgs, out_masks: PathBuf, report_path: PathBuf, manifest: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(common.config.as_deref(), &common.set, common.seed)?;
    let frames = PpmDirSource::open(&common.frames)?;
    log::info!("{} frames from {}", frames.len(), common.frames.display());
    let mut sink = MaskDirSink::create(&out_masks)?;
    let report = pipeline::run(frames, &cfg, |out| sink.write(out))?;
    sink.finish()?;
    write_file(&report_path, &report.to_text())?;
    let manifest = manifest.unwrap_or_else(|| {
        let mut p = report_path.as_os_str().to_owned();
        p.push(".manifest");
        PathBuf::from(p)
    });
    write_atomic(&manifest, &run_manifest(&cfg, &common, &out_masks, &report_path, &report))?;
    print!("{}", stage_table(&report));
    Ok(())
}

fn cmd_bench(common: PipelineArgs) -> Result<()> {
    let cfg = load_config(common.config.as_deref(), &common.set, common.seed)?;
    let frames = PpmDirSource::open(&common.frames)?;
    let report = pipeline::run(frames, &cfg, |_| Ok(()))?;
    print!("{}", stage_table(&report));
    let keyed = report.count(OutputSource::Keyframe) + report.count(OutputSource::Warped);
    println!("frames with a registered mask: {keyed}");
    Ok(())
}

fn cmd_synth(script: Option<PathBuf>, seed: u64, out: PathBuf) -> Result<()> {
    let script = match script {
        Some(p) => SynthScript::from_file(&p).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
            e => e,
        })?,
        None => SynthScript::default(),
    };
    let res = synth_sequence(&script, seed, &out)?;
    println!(
        "{} frames of {}x{} written to {} (masks in {}, manifest {})",
        res.truth.len(),
        script.width,
        script.height,
        res.frames_dir.display(),
        res.masks_dir.display(),
        res.manifest.display()
    );
    Ok(())
}

fn cmd_eval(pred: PathBuf, gt: PathBuf, report_path: PathBuf) -> Result<()> {
    let report = evaluate_sequence(&pred, &gt)?;
    write_file(&report_path, &report.to_csv())?;
    let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{}%", format_percent(v)));
    println!(
        "frames compared {}, excluded {}",
        report.frames_compared, report.frames_excluded
    );
    println!(
        "pooled:     sensitivity {} specificity {} balanced accuracy {} ({})",
        pct(report.pooled.sensitivity),
        pct(report.pooled.specificity),
        pct(report.pooled.balanced_accuracy),
        report.pooled.balanced_accuracy.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
    );
    println!(
        "per-frame:  sensitivity {} specificity {} balanced accuracy {}",
        pct(report.per_frame_mean.sensitivity),
        pct(report.per_frame_mean.specificity),
        pct(report.per_frame_mean.balanced_accuracy)
    );
    Ok(())
}

fn frame_id_of(path: &Path, default: u64) -> u64 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn cmd_track(
    prev: PathBuf,
    next: PathBuf,
    mask: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    set: Vec<String>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = PipelineConfig::default();
    // The segmenter is unused here; only numeric sections are validated.
    if let Some(path) = &config {
        cfg.apply(&config::read_kv_file(path)?.into_iter().filter(|e| !e.key.starts_with(MANIFEST_PREFIX)).collect::<Vec<_>>())?;
    }
    for s in &set {
        let e = config::parse_override(s)?;
        cfg.set(&e.key, &e.value)?;
    }
    if let Some(seed) = seed {
        cfg.ransac.seed = seed;
    }
    cfg.corners.validate()?;
    cfg.flow.validate()?;
    cfg.ransac.validate()?;

    let (prev_id, next_id) = (frame_id_of(&prev, 0), frame_id_of(&next, 1));
    let a = pnm::load_ppm(&prev)?;
    let b = pnm::load_ppm(&next)?;
    let fg = pnm::load_mask(&mask)?;
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    cfg.flow.check_frame_size(a.width(), a.height())?;
    let pa = build_pyramid(&to_grayscale(&a), cfg.flow.levels)?;
    let pb = build_pyramid(&to_grayscale(&b), cfg.flow.levels)?;
    let corners = good_features(pa.base(), &fg, &cfg.corners)?;
    let tracks = lk_track(&pa, &pb, &corners, &cfg.flow);

    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut s = String::from("frame_id,x,y,score\n");
    for c in &corners {
        let _ = writeln!(s, "{prev_id},{:.4},{:.4},{:.6e}", c.x, c.y, c.score);
    }
    write_file(&out.join("corners.csv"), &s)?;
    let mut s = String::from("src_x,src_y,dst_x,dst_y,status,residual\n");
    for t in &tracks {
        let status = match t.status {
            TrackStatus::Tracked => "tracked",
            TrackStatus::Lost => "lost",
        };
        let _ = writeln!(
            s,
            "{:.4},{:.4},{:.4},{:.4},{status},{:.4}",
            t.src.0, t.src.1, t.dst.0, t.dst.1, t.residual
        );
    }
    write_file(&out.join("flow.csv"), &s)?;

    let (src, dst): (Vec<_>, Vec<_>) = tracks.iter().filter(|t| t.is_tracked()).map(|t| (t.src, t.dst)).unzip();
    let n_points = src.len();
    let fit = Correspondences::new(src, dst).and_then(|c| ransac_affine(&c, &cfg.ransac));
    let mut s = String::from("frame_id,a11,a12,a21,a22,tx,ty,n_inliers,n_points\n");
    if let Ok(f) = &fit {
        let (m, t) = (f.transform.a, f.transform.t);
        let _ = writeln!(
            s,
            "{next_id},{:.9},{:.9},{:.9},{:.9},{:.6},{:.6},{},{n_points}",
            m[0][0], m[0][1], m[1][0], m[1][1], t[0], t[1], f.n_inliers
        );
    }
    write_file(&out.join("transform.csv"), &s)?;
    println!(
        "{} corners, {n_points} tracked, written to {}",
        corners.len(),
        out.display()
    );
    let fit = fit?;
    println!("{} inliers after {} iterations", fit.n_inliers, fit.iterations);
    Ok(())
}

fn cmd_segment_stdio(channel: &str, threshold: f64, delay_ms: u64) -> Result<()> {
    let expr: ChannelExpr = channel.parse()?;
    let seg = ThresholdSegmenter::new(expr, threshold);
    let stdin = io::stdin();
    let mut input = BufReader::new(stdin.lock());
    let stdout = io::stdout();
    let mut output = BufWriter::new(stdout.lock());
    let io_err = |e: io::Error| Error::Protocol(format!("writing to stdout: {e}"));
    while let Some(frame) = pnm::read_ppm_opt(&mut input)? {
        if delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(delay_ms));
        }
        pnm::write_mask(&mut output, &seg.apply(&frame)).map_err(io_err)?;
        output.flush().map_err(io_err)?;
    }
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { script, seed, out } => cmd_synth(script, seed, out),
        Command::Run {
            common,
            out_masks,
            report,
            manifest,
        } => cmd_run(common, out_masks, report, manifest),
        Command::Eval { pred, gt, report } => cmd_eval(pred, gt, report),
        Command::Track {
            prev,
            next,
            mask,
            out,
            config,
            set,
            seed,
        } => cmd_track(prev, next, mask, out, config, set, seed),
        Command::Bench { common } => cmd_bench(common),
        Command::SegmentStdio {
            channel,
            threshold,
            delay_ms,
        } => cmd_segment_stdio(&channel, threshold, delay_ms),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    init_logging(cli.verbose);
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string();
            eprintln!("error: {}", msg.lines().next().unwrap_or(""));
            for line in msg.lines().skip(1) {
                eprintln!("{line}");
            }
            e.exit_code()
        }
    }
}
