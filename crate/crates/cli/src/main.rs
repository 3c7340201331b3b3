//! `evc`: transcode frames to events, compress, play back and detect corners.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use evc_core::compress::{compress_events, decompress_events};
use evc_core::event::{read_raw_stream, write_raw_stream, SourceCodec};
use evc_core::fastdet::DEFAULT_THRESHOLD;
use evc_core::harness::ingest::sidecar_path;
use evc_core::harness::{ingest, run_grid, synth, write_y4m, Clip, ClipKind, ClipSource, ExperimentConfig, SynthSpec};
use evc_core::{crf_params, reconstruct_frames, transcode, DetectMode, DetectorState, Event, FeaturePolicy, StreamHeader};

#[derive(Parser)]
#[command(name = "evc", version, about = "Event-based video transcoding, compression and corner detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert frames (Y4M, or raw 8-bit with dimensions) to a raw event stream.
    Transcode(TranscodeArgs),
    /// Compress a raw event stream.
    Compress(CompressArgs),
    /// Expand a compressed stream back to raw events.
    Decompress(DecompressArgs),
    /// Reconstruct frames from a raw or compressed stream.
    Play(PlayArgs),
    /// Run the event-driven corner detector and log feature changes as CSV.
    Detect(DetectArgs),
    /// Run the CRF x feature-policy grid and write metrics CSVs.
    Bench(BenchArgs),
    /// Write a synthetic test clip as Y4M.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Paper,
    Exact,
}

impl From<Mode> for DetectMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Paper => DetectMode::Paper,
            Mode::Exact => DetectMode::Exact,
        }
    }
}

fn parse_dims(s: &str) -> Result<(u16, u16), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    Ok((w.parse().map_err(|_| "bad width")?, h.parse().map_err(|_| "bad height")?))
}

#[derive(Args)]
struct Timing {
    /// Ticks per input frame.
    #[arg(long, default_value_t = 255)]
    dt_ref: u32,
    /// Longest span of a run's first event, in ticks.
    #[arg(long, default_value_t = 7650)]
    dt_max: u32,
}

#[derive(Args)]
struct Detector {
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    fast_threshold: u8,
    #[arg(long, value_enum, default_value_t = Mode::Paper)]
    mode: Mode,
}

#[derive(Args)]
struct TranscodeArgs {
    input: PathBuf,
    /// Frame size for raw input when there is no `.dims` sidecar.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<(u16, u16)>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(0..=9))]
    crf: u8,
    #[command(flatten)]
    timing: Timing,
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    features: Toggle,
    #[command(flatten)]
    detector: Detector,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    input: PathBuf,
    /// Quality level whose loss tolerance the coder may use (0 = lossless).
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(0..=9))]
    crf: u8,
    /// ADU span in ticks; defaults to the stream's dt_max.
    #[arg(long)]
    dt_adu: Option<u32>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct PlayArgs {
    input: PathBuf,
    /// Number of frames to sample; defaults to the stream length.
    #[arg(long)]
    frames: Option<usize>,
    /// `.y4m` output is monochrome Y4M; anything else is raw 8-bit plus a `.dims` sidecar.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    input: PathBuf,
    #[command(flatten)]
    detector: Detector,
    /// CSV destination; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Input clip; a synthetic clip is used when omitted.
    #[arg(long, conflicts_with = "kind")]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_dims)]
    dims: Option<(u16, u16)>,
    #[command(flatten)]
    synth: SynthParams,
    #[arg(long, value_delimiter = ',', default_value = "0,3,6,9")]
    crfs: Vec<u8>,
    #[command(flatten)]
    timing: Timing,
    #[arg(long)]
    dt_adu: Option<u32>,
    #[command(flatten)]
    detector: Detector,
    #[arg(long, default_value = "bench")]
    label: String,
    /// Directory for artifacts and CSVs.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthParams {
    /// Synthetic clip kind: static, step, moving_box or noise.
    #[arg(long, default_value = "moving_box")]
    kind: ClipKind,
    #[arg(long, default_value_t = 160)]
    width: u16,
    #[arg(long, default_value_t = 120)]
    height: u16,
    #[arg(long, default_value_t = 120)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of Gaussian sensor noise in grey levels.
    #[arg(long, default_value_t = 0.0)]
    grain: f64,
    /// Box speed in pixels per frame.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
}

impl SynthParams {
    fn spec(&self) -> SynthSpec {
        SynthSpec::new(self.kind, self.width, self.height, self.frames, self.seed)
            .with_grain(self.grain)
            .with_speed(self.speed)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    params: SynthParams,
    #[arg(long, short)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Transcode(a) => cmd_transcode(&a),
        Command::Compress(a) => cmd_compress(&a),
        Command::Decompress(a) => cmd_decompress(&a),
        Command::Play(a) => cmd_play(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// `EVC_THREADS` caps the worker pool used for ADU coding.
fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("EVC_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().with_context(|| format!("EVC_THREADS={v:?} is not a thread count"))?;
    if n == 0 {
        bail!("EVC_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

/// Reads a raw or compressed stream, returning events in timestamp order.
fn read_events(path: &Path) -> Result<(StreamHeader, Vec<Event>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let header = StreamHeader::from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    let (header, mut events) = match header.source_codec {
        SourceCodec::Compressed => decompress_events(&bytes)?,
        SourceCodec::Raw => read_raw_stream(&mut bytes.as_slice())?,
    };
    events.sort_by_key(|e| e.t);
    Ok((header, events))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn cmd_transcode(a: &TranscodeArgs) -> Result<()> {
    let clip = ingest(&a.input, a.dims).with_context(|| format!("reading {}", a.input.display()))?;
    let params = crf_params(a.crf)?;
    let header = StreamHeader::new(clip.width, clip.height, 1, a.timing.dt_ref, a.timing.dt_max, clip.fps);
    let mut policy = matches!(a.features, Toggle::On)
        .then(|| FeaturePolicy::new(&header, params.feature_radius, a.detector.fast_threshold, a.detector.mode.into()));
    let hook = policy.as_mut().map(|p| p as &mut dyn evc_core::TranscodeHook);
    let events = transcode(clip.frames.iter().map(Vec::as_slice), params, header, hook)?;
    let mut raw = Vec::new();
    write_raw_stream(&mut raw, &header, &events)?;
    write_file(&a.out, &raw)?;
    eprintln!("{} frames -> {} events ({} bytes)", clip.frames.len(), events.len(), raw.len());
    Ok(())
}

fn cmd_compress(a: &CompressArgs) -> Result<()> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if StreamHeader::from_bytes(&bytes)?.source_codec != SourceCodec::Raw {
        bail!("{} is already compressed", a.input.display());
    }
    let (header, events) = read_raw_stream(&mut bytes.as_slice())?;
    let span = a.dt_adu.unwrap_or(header.dt_max);
    if span == 0 {
        bail!("--dt-adu must be positive");
    }
    let out = compress_events(&header, &events, crf_params(a.crf)?.coding_tolerance(), span)?;
    write_file(&a.out, &out)?;
    eprintln!("{} -> {} bytes ({:.2}:1)", bytes.len(), out.len(), bytes.len() as f64 / out.len() as f64);
    Ok(())
}

fn cmd_decompress(a: &DecompressArgs) -> Result<()> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (header, events) = decompress_events(&bytes)?;
    let mut raw = Vec::new();
    write_raw_stream(&mut raw, &header, &events)?;
    write_file(&a.out, &raw)
}

fn cmd_play(a: &PlayArgs) -> Result<()> {
    let (header, events) = read_events(&a.input)?;
    let frames = a.frames.unwrap_or_else(|| {
        let last = events.last().map_or(0, |e| u64::from(e.t));
        last.div_ceil(u64::from(header.dt_ref)).max(1) as usize
    });
    let recon = reconstruct_frames(&header, &events, frames)?;
    let fps = if header.dt_s > 0 { f64::from(header.dt_s) / f64::from(header.dt_ref) } else { 30.0 };
    // Output is single-plane: the first channel of each frame.
    let (ch, plane) = (usize::from(header.channels), usize::from(header.width) * usize::from(header.height));
    let frames: Vec<Vec<u8>> = recon.into_iter().map(|f| f.into_iter().step_by(ch).take(plane).collect()).collect();
    if a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m")) {
        write_y4m(&a.out, &Clip { width: header.width, height: header.height, fps, frames })?;
    } else {
        write_file(&a.out, &frames.concat())?;
        write_file(&sidecar_path(&a.out), format!("{} {} {fps}\n", header.width, header.height).as_bytes())?;
    }
    eprintln!("frames written to {}", a.out.display());
    Ok(())
}

fn cmd_detect(a: &DetectArgs) -> Result<()> {
    let (header, events) = read_events(&a.input)?;
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut csv = csv::Writer::from_writer(sink);
    csv.write_record(["t", "x", "y", "change"])?;
    let mut det = DetectorState::new(&header, a.detector.fast_threshold, a.detector.mode.into());
    for e in &events {
        let delta = det.on_event(e)?;
        for (tag, list) in [("added", &delta.added), ("removed", &delta.removed)] {
            for &(x, y) in list {
                csv.write_record([e.t.to_string(), x.to_string(), y.to_string(), tag.to_string()])?;
            }
        }
    }
    csv.flush()?;
    eprintln!("{} events, {} corner tests, {} features at end", events.len(), det.tests(), det.feature_count());
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let source = match &a.input {
        Some(path) => ClipSource::File { path: path.clone(), dims: a.dims },
        None => ClipSource::Synth(a.synth.spec()),
    };
    if let Some(bad) = a.crfs.iter().find(|&&c| c > 9) {
        bail!("CRF {bad} is outside 0..=9");
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut cfg = ExperimentConfig::new(source);
    cfg.dt_ref = a.timing.dt_ref;
    cfg.dt_max = a.timing.dt_max;
    cfg.dt_adu = a.dt_adu;
    cfg.fast_threshold = a.detector.fast_threshold;
    cfg.mode = a.detector.mode.into();
    cfg.out_dir = Some(a.out.clone());
    cfg.label = a.label.clone();
    let rows = run_grid(&cfg, &a.crfs)?;
    println!("{:>4} {:>8} {:>12} {:>12} {:>7} {:>9} {:>9} {:>8} {:>8}", "crf", "features", "raw_bytes", "comp_bytes", "ratio", "psnr_raw", "psnr_comp", "ev/px/f", "work");
    for r in &rows {
        println!(
            "{:>4} {:>8} {:>12} {:>12} {:>7.2} {:>9.2} {:>9.2} {:>8.4} {:>8.4}",
            r.crf,
            if r.features { "on" } else { "off" },
            r.raw_bytes,
            r.compressed_bytes,
            r.compression_ratio,
            r.mean_psnr_raw,
            r.mean_psnr_compressed,
            r.events_per_pixel_per_frame,
            r.detector_work_ratio
        );
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let clip = synth(&a.params.spec())?;
    write_y4m(&a.out, &clip)?;
    eprintln!("{}x{} x {} frames written to {}", clip.width, clip.height, clip.frames.len(), a.out.display());
    Ok(())
}
