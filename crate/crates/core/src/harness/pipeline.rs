//! End-to-end experiment: transcode, compress, decompress, reconstruct,
//! detect, and collect per-frame metrics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::ingest::{ingest, sidecar_path, Clip, IngestError};
use super::synth::{synth, SynthSpec};
use crate::compress::{compress_events, decompress_events, CompressedStream, ContainerError};
use crate::event::{crf_params, write_raw_stream, Event, EventError, ParamSet, StreamHeader, Tick};
use crate::fastdet::{DetectMode, DetectorState, FeaturePolicy, DEFAULT_THRESHOLD};
use crate::reconstruct::{mse, psnr_from_mse, reconstruct_frames, ReconError, PSNR_CAP_DB};
use crate::transcoder::{transcode, TranscodeError, TranscodeHook};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("transcode: {0}")]
    Transcode(#[from] TranscodeError),
    #[error("compress: {0}")]
    Compress(#[from] ContainerError),
    #[error("reconstruct: {0}")]
    Reconstruct(#[from] ReconError),
    #[error("stream: {0}")]
    Stream(#[from] EventError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("report needs at least one metrics row")]
    EmptyReport,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClipSource {
    File { path: PathBuf, dims: Option<(u16, u16)> },
    Synth(SynthSpec),
}

impl ClipSource {
    pub fn load(&self) -> Result<Clip, PipelineError> {
        Ok(match self {
            ClipSource::File { path, dims } => ingest(path, *dims)?,
            ClipSource::Synth(spec) => synth(spec)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: ClipSource,
    pub crf: u8,
    /// Replaces the CRF table entry when set.
    pub params: Option<ParamSet>,
    pub features: bool,
    pub dt_ref: u32,
    pub dt_max: u32,
    /// ADU span; `dt_max` when unset.
    pub dt_adu: Option<u32>,
    pub fast_threshold: u8,
    pub mode: DetectMode,
    pub out_dir: Option<PathBuf>,
    /// File stem for artifacts.
    pub label: String,
}

impl ExperimentConfig {
    pub fn new(source: ClipSource) -> Self {
        ExperimentConfig {
            source,
            crf: 3,
            params: None,
            features: false,
            dt_ref: 255,
            dt_max: 255 * 30,
            dt_adu: None,
            fast_threshold: DEFAULT_THRESHOLD,
            mode: DetectMode::Paper,
            out_dir: None,
            label: "run".into(),
        }
    }

    pub fn adu_span(&self) -> u32 {
        self.dt_adu.unwrap_or(self.dt_max)
    }
}

/// One row per input frame boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub frame: usize,
    pub raw_events: u64,
    pub raw_bits: u64,
    /// ADU bits spread evenly over the frames each ADU spans.
    pub compressed_bits: f64,
    pub mse_raw: f64,
    pub psnr_raw: f64,
    pub mse_compressed: f64,
    pub psnr_compressed: f64,
    pub detector_tests: u64,
    pub feature_count: usize,
}

/// Everything one pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub header: StreamHeader,
    pub params: ParamSet,
    pub rows: Vec<MetricsRow>,
    pub source: Vec<Vec<u8>>,
    pub recon_raw: Vec<Vec<u8>>,
    pub recon_compressed: Vec<Vec<u8>>,
    /// Playback detector features at each frame boundary.
    pub features: Vec<Vec<(u16, u16)>>,
    pub raw_events: Vec<Event>,
    pub decoded_events: Vec<Event>,
    pub raw_bytes: usize,
    pub compressed_bytes: usize,
    pub adu_count: usize,
    /// Sensitivity boosts issued by the feature policy during transcoding.
    pub boosts: u64,
}

impl PipelineRun {
    pub fn summary(&self) -> Result<Summary, PipelineError> {
        report(&self.rows, self.header.pixel_count())
    }
}

fn frame_of(t: Tick, dt_ref: u32, frames: usize) -> usize {
    (((t.max(1) - 1) / dt_ref) as usize).min(frames - 1)
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineRun, PipelineError> {
    let clip = cfg.source.load()?;
    run_on_clip(cfg, &clip)
}

/// Runs the pipeline on an already loaded clip; `cfg.source` is ignored.
pub fn run_on_clip(cfg: &ExperimentConfig, clip: &Clip) -> Result<PipelineRun, PipelineError> {
    if clip.frames.is_empty() {
        return Err(TranscodeError::NoFrames.into());
    }
    if cfg.dt_ref == 0 || cfg.dt_max < cfg.dt_ref || cfg.adu_span() == 0 {
        return Err(PipelineError::Config(format!(
            "need 0 < dt_ref <= dt_max and dt_adu > 0 (got {}, {}, {})",
            cfg.dt_ref,
            cfg.dt_max,
            cfg.adu_span()
        )));
    }
    let params = match cfg.params {
        Some(p) => p,
        None => crf_params(cfg.crf)?,
    };
    let mut header = StreamHeader::new(clip.width, clip.height, 1, cfg.dt_ref, cfg.dt_max, clip.fps);
    header.crf = cfg.crf;
    let n = clip.frames.len();

    let mut policy = cfg
        .features
        .then(|| FeaturePolicy::new(&header, params.feature_radius, cfg.fast_threshold, cfg.mode));
    let hook = policy.as_mut().map(|p| p as &mut dyn TranscodeHook);
    let raw_events = transcode(clip.frames.iter().map(Vec::as_slice), params, header, hook)?;
    let boosts = policy.as_ref().map_or(0, FeaturePolicy::requests);
    log::info!("{}: {} events from {} frames", cfg.label, raw_events.len(), n);

    let mut raw = Vec::new();
    write_raw_stream(&mut raw, &header, &raw_events)?;
    let compressed = compress_events(&header, &raw_events, params.coding_tolerance(), cfg.adu_span())?;
    let stream = CompressedStream::parse(&compressed)?;
    let adu_sizes: Vec<usize> = stream.blocks.iter().map(|b| b.len() + 4).collect();
    let (_, decoded_events) = decompress_events(&compressed)?;

    let recon_raw = reconstruct_frames(&header, &raw_events, n)?;

    // Playback: decoded events in time order through the detector.
    let mut det = DetectorState::new(&header, cfg.fast_threshold, cfg.mode);
    let mut recon_compressed = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    let mut tests = Vec::with_capacity(n);
    let mut next = decoded_events.iter().peekable();
    for k in 0..n {
        let boundary = (k as u64 + 1) * u64::from(cfg.dt_ref);
        let before = det.tests();
        while let Some(e) = next.next_if(|e| u64::from(e.t) <= boundary) {
            det.on_event(e)?;
        }
        tests.push(det.tests() - before);
        recon_compressed.push(det.image().to_vec());
        features.push(det.features());
    }

    let mut raw_counts = vec![0u64; n];
    for e in &raw_events {
        raw_counts[frame_of(e.t, cfg.dt_ref, n)] += 1;
    }
    let mut compressed_bits = vec![0f64; n];
    let span = u64::from(cfg.adu_span());
    for (k, bytes) in adu_sizes.iter().enumerate() {
        let lo = ((k as u64 * span) / u64::from(cfg.dt_ref)) as usize;
        let hi = (((k as u64 + 1) * span).div_ceil(u64::from(cfg.dt_ref)) as usize).min(n);
        let (lo, hi) = (lo.min(n - 1), hi.max(lo.min(n - 1) + 1));
        let share = (*bytes * 8) as f64 / (hi - lo) as f64;
        for b in &mut compressed_bits[lo..hi] {
            *b += share;
        }
    }

    let event_bits = (header.event_bytes() * 8) as u64;
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let mse_raw = mse(&clip.frames[k], &recon_raw[k])?;
        let mse_compressed = mse(&clip.frames[k], &recon_compressed[k])?;
        rows.push(MetricsRow {
            frame: k,
            raw_events: raw_counts[k],
            raw_bits: raw_counts[k] * event_bits,
            compressed_bits: compressed_bits[k],
            mse_raw,
            psnr_raw: psnr_from_mse(mse_raw),
            mse_compressed,
            psnr_compressed: psnr_from_mse(mse_compressed),
            detector_tests: tests[k],
            feature_count: features[k].len(),
        });
    }

    let run = PipelineRun {
        header,
        params,
        rows,
        source: clip.frames.clone(),
        recon_raw,
        recon_compressed,
        features,
        raw_events,
        decoded_events,
        raw_bytes: raw.len(),
        compressed_bytes: compressed.len(),
        adu_count: adu_sizes.len(),
        boosts,
    };
    if let Some(dir) = &cfg.out_dir {
        write_artifacts(dir, &cfg.label, &run, &raw, &compressed)?;
    }
    Ok(run)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn write_frames(path: &Path, run: &PipelineRun, frames: &[Vec<u8>]) -> Result<(), PipelineError> {
    write_file(path, &frames.concat())?;
    let dims = format!("{} {} {}\n", run.header.width, run.header.height, f64::from(run.header.dt_s) / f64::from(run.header.dt_ref));
    write_file(&sidecar_path(path), dims.as_bytes())
}

fn write_artifacts(dir: &Path, label: &str, run: &PipelineRun, raw: &[u8], compressed: &[u8]) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    write_file(&dir.join(format!("{label}.adder")), raw)?;
    write_file(&dir.join(format!("{label}.adderc")), compressed)?;
    write_frames(&dir.join(format!("{label}_recon_raw.gray")), run, &run.recon_raw)?;
    write_frames(&dir.join(format!("{label}_recon_compressed.gray")), run, &run.recon_compressed)?;
    write_csv(&dir.join(format!("{label}_metrics.csv")), &run.rows)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub frames: usize,
    pub raw_bits: u64,
    pub compressed_bits: f64,
    pub compression_ratio: f64,
    pub mean_psnr_raw: f64,
    pub mean_psnr_compressed: f64,
    pub events_per_pixel_per_frame: f64,
    /// `is_feature` calls over `pixels * frames`.
    pub detector_work_ratio: f64,
}

pub fn report(rows: &[MetricsRow], pixel_count: usize) -> Result<Summary, PipelineError> {
    if rows.is_empty() {
        return Err(PipelineError::EmptyReport);
    }
    let n = rows.len() as f64;
    let raw_bits: u64 = rows.iter().map(|r| r.raw_bits).sum();
    let compressed_bits: f64 = rows.iter().map(|r| r.compressed_bits).sum();
    let events: u64 = rows.iter().map(|r| r.raw_events).sum();
    let tests: u64 = rows.iter().map(|r| r.detector_tests).sum();
    let cells = pixel_count as f64 * n;
    Ok(Summary {
        frames: rows.len(),
        raw_bits,
        compressed_bits,
        compression_ratio: if compressed_bits > 0.0 { raw_bits as f64 / compressed_bits } else { 0.0 },
        mean_psnr_raw: rows.iter().map(|r| r.psnr_raw).sum::<f64>() / n,
        mean_psnr_compressed: rows.iter().map(|r| r.psnr_compressed).sum::<f64>() / n,
        events_per_pixel_per_frame: events as f64 / cells,
        detector_work_ratio: tests as f64 / cells,
    })
}

/// Pixels within Chebyshev `radius` of any of `features`.
pub fn feature_mask(width: u16, height: u16, features: &[(u16, u16)], radius: u16) -> Vec<bool> {
    let (w, h) = (usize::from(width), usize::from(height));
    let r = usize::from(radius);
    let mut mask = vec![false; w * h];
    for &(fx, fy) in features {
        let (fx, fy) = (usize::from(fx), usize::from(fy));
        for y in fy.saturating_sub(r)..=(fy + r).min(h - 1) {
            for x in fx.saturating_sub(r)..=(fx + r).min(w - 1) {
                mask[y * w + x] = true;
            }
        }
    }
    mask
}

/// Squared error sum and pixel count over `mask`.
pub fn masked_sse(a: &[u8], b: &[u8], mask: &[bool]) -> (f64, usize) {
    let mut sse = 0.0;
    let mut count = 0;
    for ((&p, &q), &m) in a.iter().zip(b).zip(mask) {
        if m {
            let d = f64::from(p) - f64::from(q);
            sse += d * d;
            count += 1;
        }
    }
    (sse, count)
}

/// PSNR over masked pixels, `None` when the mask is empty.
pub fn masked_psnr(a: &[u8], b: &[u8], mask: &[bool]) -> Option<f64> {
    let (sse, count) = masked_sse(a, b, mask);
    (count > 0).then(|| psnr_from_mse(sse / count as f64).min(PSNR_CAP_DB))
}

/// One line of a CRF x feature-policy sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub label: String,
    pub crf: u8,
    pub features: bool,
    pub raw_bytes: usize,
    pub compressed_bytes: usize,
    pub compression_ratio: f64,
    pub mean_psnr_raw: f64,
    pub mean_psnr_compressed: f64,
    pub events_per_pixel_per_frame: f64,
    pub detector_work_ratio: f64,
}

/// Runs `base` at every CRF in `crfs`, with the policy off and on.
pub fn run_grid(base: &ExperimentConfig, crfs: &[u8]) -> Result<Vec<GridRow>, PipelineError> {
    let clip = base.source.load()?;
    let mut out = Vec::new();
    for &crf in crfs {
        for features in [false, true] {
            let label = format!("{}_crf{crf}_{}", base.label, if features { "feat" } else { "nofeat" });
            let cfg = ExperimentConfig { crf, features, label: label.clone(), ..base.clone() };
            let run = run_on_clip(&cfg, &clip)?;
            let s = run.summary()?;
            out.push(GridRow {
                label,
                crf,
                features,
                raw_bytes: run.raw_bytes,
                compressed_bytes: run.compressed_bytes,
                compression_ratio: run.raw_bytes as f64 / run.compressed_bytes as f64,
                mean_psnr_raw: s.mean_psnr_raw,
                mean_psnr_compressed: s.mean_psnr_compressed,
                events_per_pixel_per_frame: s.events_per_pixel_per_frame,
                detector_work_ratio: s.detector_work_ratio,
            });
        }
    }
    if let Some(dir) = &base.out_dir {
        write_csv(&dir.join(format!("{}_grid.csv", base.label)), &out)?;
    }
    Ok(out)
}
