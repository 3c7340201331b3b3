//! Framed reconstruction of event streams and quality metrics.

use thiserror::Error;

use crate::event::{Event, StreamHeader, Tick, D, D_EMPTY};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 60.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReconError {
    #[error("event at ({x}, {y}) has t = {t} but the pixel is already at t = {last}")]
    OutOfOrder { x: u16, y: u16, t: Tick, last: Tick },
    #[error("event at ({x}, {y}) repeats t = {t}")]
    ZeroInterval { x: u16, y: u16, t: Tick },
    #[error("event at ({x}, {y}, c{c}) lies outside the image")]
    OutOfBounds { x: u16, y: u16, c: u8 },
    #[error("image sizes differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// Display value (0..=255) of `2^d` units over `dt` ticks, where one
/// display unit is one intensity unit per `dt_ref` ticks.
pub fn display_value(d: D, dt: u64, dt_ref: u32) -> u8 {
    if d == D_EMPTY || dt == 0 {
        return 0;
    }
    let v = 2f64.powi(i32::from(d)) * f64::from(dt_ref) / dt as f64;
    v.round().clamp(0.0, 255.0) as u8
}

/// Running intensity image updated one event at a time. Pixels show the
/// value of their latest event and hold 0 until their first one.
#[derive(Debug, Clone)]
pub struct ReconState {
    width: u16,
    height: u16,
    channels: u8,
    dt_ref: u32,
    image: Vec<u8>,
    last_t: Vec<Tick>,
    last_intensity: Vec<f64>,
}

impl ReconState {
    pub fn new(header: &StreamHeader) -> Self {
        let n = header.pixel_count() * usize::from(header.channels);
        ReconState {
            width: header.width,
            height: header.height,
            channels: header.channels,
            dt_ref: header.dt_ref,
            image: vec![0; n],
            last_t: vec![0; n],
            last_intensity: vec![0.0; n],
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn index(&self, x: u16, y: u16, c: u8) -> usize {
        (usize::from(y) * usize::from(self.width) + usize::from(x)) * usize::from(self.channels) + usize::from(c)
    }

    /// Applies `e` and returns the pixel's new display value.
    pub fn apply_event(&mut self, e: &Event) -> Result<u8, ReconError> {
        if e.x >= self.width || e.y >= self.height || e.c >= self.channels {
            return Err(ReconError::OutOfBounds { x: e.x, y: e.y, c: e.c });
        }
        let i = self.index(e.x, e.y, e.c);
        let last = self.last_t[i];
        if e.t < last {
            return Err(ReconError::OutOfOrder { x: e.x, y: e.y, t: e.t, last });
        }
        if e.t == last {
            return Err(ReconError::ZeroInterval { x: e.x, y: e.y, t: e.t });
        }
        let dt = u64::from(e.t - last);
        let value = display_value(e.d, dt, self.dt_ref);
        self.last_intensity[i] = if e.d == D_EMPTY {
            0.0
        } else {
            2f64.powi(i32::from(e.d)) / dt as f64
        };
        self.image[i] = value;
        self.last_t[i] = e.t;
        Ok(value)
    }

    /// Snapshot of the image. Callers apply every event with timestamp `<= t` first.
    pub fn frame_at(&self, _t: Tick) -> Vec<u8> {
        self.image.clone()
    }

    pub fn image(&self) -> &[u8] {
        &self.image
    }

    pub fn value(&self, x: u16, y: u16, c: u8) -> u8 {
        self.image[self.index(x, y, c)]
    }

    pub fn last_t(&self, x: u16, y: u16, c: u8) -> Tick {
        self.last_t[self.index(x, y, c)]
    }

    /// Intensity units per tick of the pixel's latest event.
    pub fn last_intensity(&self, x: u16, y: u16, c: u8) -> f64 {
        self.last_intensity[self.index(x, y, c)]
    }
}

/// Samples the reconstruction at the end of each of `frames` input frames,
/// applying events in timestamp order.
pub fn reconstruct_frames(header: &StreamHeader, events: &[Event], frames: usize) -> Result<Vec<Vec<u8>>, ReconError> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| events[i].t);
    let mut state = ReconState::new(header);
    let mut out = Vec::with_capacity(frames);
    let mut next = order.iter().peekable();
    for k in 0..frames {
        let boundary = (k as u64 + 1) * u64::from(header.dt_ref);
        while let Some(&&i) = next.peek() {
            if u64::from(events[i].t) > boundary {
                break;
            }
            state.apply_event(&events[i])?;
            next.next();
        }
        out.push(state.frame_at(boundary.min(u64::from(Tick::MAX)) as Tick));
    }
    Ok(out)
}

pub fn mse(a: &[u8], b: &[u8]) -> Result<f64, ReconError> {
    if a.len() != b.len() {
        return Err(ReconError::DimensionMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: u64 = a
        .iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = i64::from(p) - i64::from(q);
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(a: &[u8], b: &[u8]) -> Result<f64, ReconError> {
    Ok(psnr_from_mse(mse(a, b)?))
}
