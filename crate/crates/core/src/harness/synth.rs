//! Deterministic synthetic clips standing in for surveillance footage.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ingest::{Clip, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClipKind {
    /// Constant textured scene.
    Static,
    /// Static scene with one global brightness change halfway through.
    Step,
    /// Textured box translating over a static textured scene.
    MovingBox,
    /// Independent uniform values per pixel and frame.
    Noise,
}

impl FromStr for ClipKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(ClipKind::Static),
            "step" => Ok(ClipKind::Step),
            "moving_box" | "moving-box" => Ok(ClipKind::MovingBox),
            "noise" => Ok(ClipKind::Noise),
            other => Err(format!("unknown clip kind {other:?} (static, step, moving_box, noise)")),
        }
    }
}

impl fmt::Display for ClipKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClipKind::Static => "static",
            ClipKind::Step => "step",
            ClipKind::MovingBox => "moving_box",
            ClipKind::Noise => "noise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub kind: ClipKind,
    pub width: u16,
    pub height: u16,
    pub frames: usize,
    pub seed: u64,
    /// Standard deviation of Gaussian sensor noise, in grey levels (0 = none).
    pub grain: f64,
    /// Box speed in pixels per frame.
    pub speed: f64,
    pub fps: f64,
}

impl SynthSpec {
    pub fn new(kind: ClipKind, width: u16, height: u16, frames: usize, seed: u64) -> Self {
        SynthSpec { kind, width, height, frames, seed, grain: 0.0, speed: 1.0, fps: 30.0 }
    }

    pub fn with_grain(mut self, grain: f64) -> Self {
        self.grain = grain;
        self
    }

    pub fn with_speed(mut self, speed: f64) -> Self {
        self.speed = speed;
        self
    }
}

/// Blocky random texture with a smooth gradient underneath.
fn texture(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: usize, lo: u8, hi: u8) -> Vec<u8> {
    let cw = w.div_ceil(cell);
    let cells: Vec<u8> = (0..cw * h.div_ceil(cell)).map(|_| rng.random_range(lo..=hi)).collect();
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let base = i32::from(cells[(y / cell) * cw + x / cell]);
            let ramp = ((x + y) * 24 / (w + h).max(1)) as i32;
            out[y * w + x] = (base + ramp - 12).clamp(0, 255) as u8;
        }
    }
    out
}

pub fn synth_clip(kind: ClipKind, width: u16, height: u16, frames: usize, seed: u64) -> Result<Clip, IngestError> {
    synth(&SynthSpec::new(kind, width, height, frames, seed))
}

pub fn synth(spec: &SynthSpec) -> Result<Clip, IngestError> {
    if spec.width == 0 || spec.height == 0 {
        return Err(IngestError::ZeroDimensions);
    }
    let (w, h) = (usize::from(spec.width), usize::from(spec.height));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background = texture(&mut rng, w, h, 8, 50, 130);
    let side = (w.min(h) / 3).max(2);
    let box_tex = texture(&mut rng, side, side, 4, 150, 250);
    let mut grain_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut frames = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        let mut f = match spec.kind {
            ClipKind::Static => background.clone(),
            ClipKind::Step => {
                let lift = if k >= spec.frames / 2 { 48 } else { 0 };
                background.iter().map(|&v| v.saturating_add(lift)).collect()
            }
            ClipKind::MovingBox => {
                let mut f = background.clone();
                // Bounce horizontally; drift down one pixel every four steps.
                let travel = (w - side) as f64;
                let pos = (k as f64 * spec.speed) % (2.0 * travel.max(1.0));
                let bx = if pos <= travel { pos } else { 2.0 * travel - pos }.round() as usize;
                let by = ((h - side) / 3 + (k as f64 * spec.speed / 4.0) as usize % ((h - side) / 3 + 1)).min(h - side);
                for y in 0..side {
                    f[(by + y) * w + bx..(by + y) * w + bx + side].copy_from_slice(&box_tex[y * side..(y + 1) * side]);
                }
                f
            }
            ClipKind::Noise => (0..w * h).map(|_| rng.random()).collect(),
        };
        if spec.grain > 0.0 {
            let noise = Normal::new(0.0, spec.grain).map_err(|_| IngestError::InvalidGrain(spec.grain))?;
            for v in &mut f {
                *v = (f64::from(*v) + noise.sample(&mut grain_rng)).round().clamp(0.0, 255.0) as u8;
            }
        }
        frames.push(f);
    }
    Ok(Clip { width: spec.width, height: spec.height, fps: spec.fps, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth(&SynthSpec::new(ClipKind::MovingBox, 40, 30, 8, 3).with_grain(4.0)).unwrap();
        let b = synth(&SynthSpec::new(ClipKind::MovingBox, 40, 30, 8, 3).with_grain(4.0)).unwrap();
        let c = synth(&SynthSpec::new(ClipKind::MovingBox, 40, 30, 8, 4).with_grain(4.0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn kinds_behave() {
        let s = synth_clip(ClipKind::Static, 20, 10, 5, 1).unwrap();
        assert!(s.frames.windows(2).all(|p| p[0] == p[1]));
        let st = synth_clip(ClipKind::Step, 20, 10, 6, 1).unwrap();
        assert_eq!(st.frames[0], st.frames[2]);
        assert_ne!(st.frames[2], st.frames[3]);
        assert_eq!(st.frames[3], st.frames[5]);
        let n = synth_clip(ClipKind::Noise, 20, 10, 2, 1).unwrap();
        assert_ne!(n.frames[0], n.frames[1]);
        assert!(synth_clip(ClipKind::Static, 0, 10, 5, 1).is_err());
    }

    #[test]
    fn box_changes_stay_near_trajectory() {
        let clip = synth_clip(ClipKind::MovingBox, 60, 30, 2, 9).unwrap();
        let side = 10;
        let changed: Vec<usize> = (0..60 * 30).filter(|&i| clip.frames[0][i] != clip.frames[1][i]).collect();
        assert!(!changed.is_empty());
        for i in changed {
            let (x, y) = (i % 60, i / 60);
            assert!(x <= side + 1 && (6..6 + side + 1).contains(&y), "({x}, {y})");
        }
    }

    #[test]
    fn parses_kind_names() {
        for k in [ClipKind::Static, ClipKind::Step, ClipKind::MovingBox, ClipKind::Noise] {
            assert_eq!(k.to_string().parse::<ClipKind>().unwrap(), k);
        }
        assert!("fog".parse::<ClipKind>().is_err());
    }
}
