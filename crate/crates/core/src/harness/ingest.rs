//! Frame ingestion: YUV4MPEG2 (luma plane only) and headerless raw 8-bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed Y4M header: {0}")]
    MalformedHeader(String),
    #[error("unsupported Y4M colorspace {0}")]
    UnsupportedColorspace(String),
    #[error("frame {index} is truncated")]
    TruncatedFrame { index: usize },
    #[error("frame {index} has no FRAME marker")]
    MissingFrameMarker { index: usize },
    #[error("raw input of {len} bytes is not a whole number of {width}x{height} frames")]
    RaggedRaw { len: usize, width: u16, height: u16 },
    #[error("no dimensions for raw input; pass them or provide {0}")]
    MissingSidecar(PathBuf),
    #[error("zero-sized frame")]
    ZeroDimensions,
    #[error("grain must be a finite, non-negative deviation (got {0})")]
    InvalidGrain(f64),
    #[error("I/O on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

/// Decoded grayscale clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub width: u16,
    pub height: u16,
    pub fps: f64,
    pub frames: Vec<Vec<u8>>,
}

impl Clip {
    pub fn frame_len(&self) -> usize {
        usize::from(self.width) * usize::from(self.height)
    }
}

fn parse_fps(token: &str) -> Result<f64, IngestError> {
    let bad = || IngestError::MalformedHeader(format!("frame rate {token:?}"));
    let (n, d) = token.split_once(':').ok_or_else(bad)?;
    let n: f64 = n.parse().map_err(|_| bad())?;
    let d: f64 = d.parse().map_err(|_| bad())?;
    if n <= 0.0 || d <= 0.0 {
        return Err(bad());
    }
    Ok(n / d)
}

/// Bytes per frame beyond the luma plane for a Y4M colorspace tag.
fn chroma_bytes(tag: &str, w: usize, h: usize) -> Result<usize, IngestError> {
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    match tag {
        t if t.starts_with("420") => Ok(2 * cw * ch),
        "422" => Ok(2 * cw * h),
        "444" => Ok(2 * w * h),
        "mono" => Ok(0),
        other => Err(IngestError::UnsupportedColorspace(other.to_string())),
    }
}

/// Parses an in-memory Y4M file.
pub fn parse_y4m(bytes: &[u8]) -> Result<Clip, IngestError> {
    let eol = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| IngestError::MalformedHeader("no header line".into()))?;
    let line = std::str::from_utf8(&bytes[..eol]).map_err(|_| IngestError::MalformedHeader("not ASCII".into()))?;
    let mut tokens = line.split_ascii_whitespace();
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(IngestError::MalformedHeader("missing YUV4MPEG2 signature".into()));
    }
    let (mut width, mut height, mut fps, mut color) = (None, None, 30.0, "420jpeg".to_string());
    for tok in tokens {
        let (tag, val) = tok.split_at(1);
        match tag {
            "W" => width = val.parse::<u16>().ok(),
            "H" => height = val.parse::<u16>().ok(),
            "F" => fps = parse_fps(val)?,
            "C" => color = val.to_string(),
            _ => {}
        }
    }
    let width = width.ok_or_else(|| IngestError::MalformedHeader("missing or invalid W".into()))?;
    let height = height.ok_or_else(|| IngestError::MalformedHeader("missing or invalid H".into()))?;
    if width == 0 || height == 0 {
        return Err(IngestError::ZeroDimensions);
    }
    let luma = usize::from(width) * usize::from(height);
    let frame_bytes = luma + chroma_bytes(&color, usize::from(width), usize::from(height))?;

    let mut frames = Vec::new();
    let mut pos = eol + 1;
    while pos < bytes.len() {
        let index = frames.len();
        if !bytes[pos..].starts_with(b"FRAME") {
            return Err(IngestError::MissingFrameMarker { index });
        }
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(IngestError::TruncatedFrame { index })?;
        pos += nl + 1;
        if bytes.len() - pos < frame_bytes {
            return Err(IngestError::TruncatedFrame { index });
        }
        frames.push(bytes[pos..pos + luma].to_vec());
        pos += frame_bytes;
    }
    Ok(Clip { width, height, fps, frames })
}

pub fn ingest_y4m(path: &Path) -> Result<Clip, IngestError> {
    parse_y4m(&fs::read(path).map_err(io_err(path))?)
}

/// Writes `clip` as monochrome Y4M.
pub fn write_y4m(path: &Path, clip: &Clip) -> Result<(), IngestError> {
    let mut out = Vec::with_capacity(64 + clip.frames.len() * (clip.frame_len() + 6));
    let (num, den) = fps_ratio(clip.fps);
    writeln!(out, "YUV4MPEG2 W{} H{} F{num}:{den} Ip A1:1 Cmono", clip.width, clip.height).expect("write to Vec");
    for f in &clip.frames {
        out.extend_from_slice(b"FRAME\n");
        out.extend_from_slice(f);
    }
    fs::write(path, out).map_err(io_err(path))
}

fn fps_ratio(fps: f64) -> (u64, u64) {
    if (fps - fps.round()).abs() < 1e-9 {
        (fps.round() as u64, 1)
    } else {
        ((fps * 1000.0).round() as u64, 1000)
    }
}

/// Sidecar for raw input: `<file>.dims` holding `W H [fps]`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".dims");
    PathBuf::from(s)
}

/// Reads headerless 8-bit frames. Dimensions come from `dims` or the sidecar.
pub fn ingest_raw(path: &Path, dims: Option<(u16, u16)>, fps: f64) -> Result<Clip, IngestError> {
    let (width, height, fps) = match dims {
        Some((w, h)) => (w, h, fps),
        None => {
            let side = sidecar_path(path);
            let text = fs::read_to_string(&side).map_err(|_| IngestError::MissingSidecar(side.clone()))?;
            let nums: Vec<&str> = text.split_ascii_whitespace().collect();
            let bad = || IngestError::MalformedHeader(format!("sidecar {}", side.display()));
            let w = nums.first().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let h = nums.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let f = match nums.get(2) {
                Some(v) => v.parse().map_err(|_| bad())?,
                None => fps,
            };
            (w, h, f)
        }
    };
    if width == 0 || height == 0 {
        return Err(IngestError::ZeroDimensions);
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let n = usize::from(width) * usize::from(height);
    if bytes.len() % n != 0 {
        return Err(IngestError::RaggedRaw { len: bytes.len(), width, height });
    }
    Ok(Clip { width, height, fps, frames: bytes.chunks_exact(n).map(<[u8]>::to_vec).collect() })
}

/// Dispatches on extension: `.y4m` is parsed, anything else is raw.
pub fn ingest(path: &Path, dims: Option<(u16, u16)>) -> Result<Clip, IngestError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m")) {
        ingest_y4m(path)
    } else {
        ingest_raw(path, dims, 30.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn y4m(header: &str, frames: &[Vec<u8>]) -> Vec<u8> {
        let mut out = format!("{header}\n").into_bytes();
        for f in frames {
            out.extend_from_slice(b"FRAME\n");
            out.extend_from_slice(f);
        }
        out
    }

    #[test]
    fn parses_420_and_keeps_luma() {
        let mut f = vec![7u8; 4 * 2];
        f.extend([128u8; 2 * 2]);
        let clip = parse_y4m(&y4m("YUV4MPEG2 W4 H2 F30:1 Ip C420jpeg", &[f.clone(), f])).unwrap();
        assert_eq!((clip.width, clip.height, clip.frames.len()), (4, 2, 2));
        assert_eq!(clip.frames[1], vec![7u8; 8]);
        assert_eq!(clip.fps, 30.0);
    }

    #[test]
    fn desk_header_gives_second_in_ticks() {
        let mut bytes = b"YUV4MPEG2 W640 H360 F30:1 Ip A1:1 Cmono\n".to_vec();
        bytes.extend(b"FRAME\n");
        bytes.extend(vec![0u8; 640 * 360]);
        let clip = parse_y4m(&bytes).unwrap();
        assert_eq!((clip.width, clip.height), (640, 360));
        let h = crate::event::StreamHeader::new(clip.width, clip.height, 1, 255, 7650, clip.fps);
        assert_eq!(h.dt_s, 7650);
    }

    #[test]
    fn truncated_frame_names_index() {
        let f = vec![1u8; 6];
        let mut bytes = y4m("YUV4MPEG2 W3 H2 F25:1 Cmono", &[f.clone(), f]);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(parse_y4m(&bytes), Err(IngestError::TruncatedFrame { index: 1 })));
        assert!(matches!(parse_y4m(b"YUV4MPEG2 H2\n"), Err(IngestError::MalformedHeader(_))));
        assert!(matches!(parse_y4m(b"YUV4MPEG2 W2 H2 C411\n"), Err(IngestError::UnsupportedColorspace(_))));
    }

    #[test]
    fn y4m_write_read_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.y4m");
        let clip = Clip { width: 5, height: 3, fps: 29.97, frames: vec![vec![3; 15], vec![9; 15]] };
        write_y4m(&p, &clip).unwrap();
        let back = ingest(&p, None).unwrap();
        assert_eq!(back.frames, clip.frames);
        assert!((back.fps - 29.97).abs() < 1e-6);
    }

    #[test]
    fn raw_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.gray");
        fs::write(&p, vec![5u8; 3 * 4 * 2]).unwrap();
        assert!(matches!(ingest_raw(&p, None, 30.0), Err(IngestError::MissingSidecar(_))));
        fs::write(sidecar_path(&p), "4 2 24\n").unwrap();
        let clip = ingest(&p, None).unwrap();
        assert_eq!((clip.frames.len(), clip.fps), (3, 24.0));
        assert!(matches!(ingest_raw(&p, Some((5, 5)), 30.0), Err(IngestError::RaggedRaw { .. })));
    }
}
