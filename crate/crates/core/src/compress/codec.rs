//! Intra/inter event coding of a single ADU.
//!
//! Payload layout: `start_t` (u32 LE), `span` (u32 LE), then the range
//! coder bytes. Within the coded stream, each cube opens with an "empty"
//! flag; the intra pass codes every pixel's first event (or SKIP) as D and
//! t residuals chained from the previous intra event; the inter pass codes
//! the remaining events of each pixel as (D_r, s, shifted t_r) followed by
//! SKIP, and EOS closes the ADU.

use thiserror::Error;

use super::adu::Adu;
use super::range_coder::{BitModel, RangeDecoder, RangeEncoder};
use crate::event::{Event, StreamHeader, Tick, D, D_EMPTY, D_MAX};

/// Largest transmitted bit shift.
pub const MAX_SHIFT: u8 = 31;

const PAYLOAD_PREFIX: usize = 8;
const EMPTY_CODE: i64 = 128;
const MAX_PREFIX: u32 = 62;
const MAX_LEFT_SHIFT: i64 = 24;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("ADU {adu}: corrupt bitstream at symbol {symbol}: {reason}")]
    Corrupt { adu: usize, symbol: u64, reason: &'static str },
    #[error("ADU {adu}: payload shorter than its {PAYLOAD_PREFIX}-byte prefix")]
    ShortPayload { adu: usize },
    #[error("ADU {adu}: event at ({x}, {y}) is not after the pixel's previous event")]
    NonMonotonic { adu: usize, x: u16, y: u16 },
    #[error("ADU {adu}: event at ({x}, {y}) has invalid D = {d}")]
    InvalidD { adu: usize, x: u16, y: u16, d: D },
}

const INTRA: usize = 0;
const INTER: usize = 1;

/// Adaptive models, reset for every ADU.
#[derive(Clone)]
struct Contexts {
    cube_empty: BitModel,
    d_skip: [[BitModel; 2]; 2],
    d_eos: BitModel,
    d_res: [[BitModel; 16]; 2],
    t_res: [[BitModel; 40]; 2],
    shift: [BitModel; 8],
}

impl Default for Contexts {
    fn default() -> Self {
        Contexts {
            cube_empty: BitModel::default(),
            d_skip: [[BitModel::default(); 2]; 2],
            d_eos: BitModel::default(),
            d_res: [[BitModel::default(); 16]; 2],
            t_res: [[BitModel::default(); 40]; 2],
            shift: [BitModel::default(); 8],
        }
    }
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

/// Order-0 Exp-Golomb: unary prefix under adaptive contexts, suffix bypass.
fn put_eg(enc: &mut RangeEncoder, ctx: &mut [BitModel], v: u64) {
    debug_assert!(v < u64::MAX);
    let w = v + 1;
    let n = 63 - w.leading_zeros();
    let last = ctx.len() - 1;
    for i in 0..n as usize {
        enc.encode(&mut ctx[i.min(last)], true);
    }
    enc.encode(&mut ctx[(n as usize).min(last)], false);
    for b in (0..n).rev() {
        enc.encode_bypass((w >> b) & 1 == 1);
    }
}

fn d_code(d: D) -> i64 {
    if d == D_EMPTY {
        EMPTY_CODE
    } else {
        i64::from(d)
    }
}

fn d_from_code(code: i64) -> Option<D> {
    match code {
        EMPTY_CODE => Some(D_EMPTY),
        0..=127 => Some(code as D),
        _ => None,
    }
}

/// D difference used for t prediction; EMPTY events carry no rate, so a
/// transition into or out of EMPTY predicts plain continuation.
fn prediction_dr(a: D, b: D) -> i64 {
    if a == D_EMPTY || b == D_EMPTY {
        0
    } else {
        i64::from(b) - i64::from(a)
    }
}

/// `prev_t + (prev_dt << d_r)`, shifting right for negative `d_r`.
pub fn t_prediction(prev_t: i64, prev_dt: i64, d_r: i64) -> i64 {
    if d_r >= 0 {
        prev_t + (prev_dt << d_r.min(MAX_LEFT_SHIFT))
    } else {
        prev_t + (prev_dt >> (-d_r).min(63))
    }
}

/// Intensity of `2^d` units over `dt` ticks in display units (per `dt_ref` ticks).
pub fn display_intensity(d: D, dt: i64, dt_ref: u32) -> f64 {
    if d == D_EMPTY {
        0.0
    } else {
        2f64.powi(i32::from(d)) * f64::from(dt_ref) / dt as f64
    }
}

/// Whether an event with decimation `d` placed `dt` ticks after its
/// predecessor stays strictly within `m_max` display units of `intensity`.
pub fn within_bound(d: D, dt: i64, intensity: f64, m_max: u8, dt_ref: u32) -> bool {
    if dt <= 0 {
        return false;
    }
    if d == D_EMPTY {
        return true;
    }
    (display_intensity(d, dt, dt_ref) - intensity).abs() < f64::from(m_max)
}

/// The next original event of the same pixel, which must remain codable
/// exactly once the current event's timestamp moves.
#[derive(Debug, Clone, Copy)]
pub struct Lookahead {
    pub d: D,
    pub t: i64,
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ShiftProblem {
    pub t_true: i64,
    pub prediction: i64,
    pub d: D,
    pub prev_t: i64,
    /// True intensity of the event in display units.
    pub intensity: f64,
    pub m_max: u8,
    pub dt_ref: u32,
    pub next: Option<Lookahead>,
}

impl ShiftProblem {
    /// Reconstructed timestamp when the residual is shifted by `s`.
    pub fn reconstruct(&self, s: u8) -> i64 {
        self.prediction + shifted_residual(self.t_true - self.prediction, s) * (1i64 << s)
    }

    pub fn admissible(&self, s: u8) -> bool {
        let t = self.reconstruct(s);
        if !within_bound(self.d, t - self.prev_t, self.intensity, self.m_max, self.dt_ref) {
            return false;
        }
        match self.next {
            Some(n) => within_bound(n.d, n.t - t, n.intensity, self.m_max, self.dt_ref),
            None => true,
        }
    }
}

fn shifted_residual(r: i64, s: u8) -> i64 {
    let mag = r.unsigned_abs() >> s;
    if r < 0 {
        -(mag as i64)
    } else {
        mag as i64
    }
}

/// Grows the shift one bit at a time while the result stays admissible and
/// returns the last good shift with the shifted signed residual (`s = 0`
/// keeps the residual exact).
pub fn choose_shift(p: &ShiftProblem) -> (u8, i64) {
    let r = p.t_true - p.prediction;
    let mut best = 0;
    if r != 0 && p.m_max > 0 {
        while best < MAX_SHIFT && p.admissible(best + 1) {
            best += 1;
        }
    }
    if best == 0 {
        (0, r)
    } else {
        (best, shifted_residual(r, best))
    }
}

/// Encodes `adu` with per-event intensity loss bounded by `m_max`.
pub fn encode_adu(adu: &Adu, m_max: u8, dt_ref: u32, index: usize) -> Result<Vec<u8>, CodecError> {
    Ok(encode_adu_with_recon(adu, m_max, dt_ref, index)?.0)
}

/// Like [`encode_adu`], also returning the ADU as the decoder will see it.
pub fn encode_adu_with_recon(adu: &Adu, m_max: u8, dt_ref: u32, index: usize) -> Result<(Vec<u8>, Adu), CodecError> {
    let mut recon = adu.clone();
    let mut enc = RangeEncoder::new();
    let mut ctx = Contexts::default();

    for cube in &adu.cubes {
        for q in &cube.queues {
            for (i, e) in q.iter().enumerate() {
                if e.d != D_EMPTY && e.d > D_MAX {
                    return Err(CodecError::InvalidD { adu: index, x: e.x, y: e.y, d: e.d });
                }
                if i > 0 && e.t <= q[i - 1].t {
                    return Err(CodecError::NonMonotonic { adu: index, x: e.x, y: e.y });
                }
            }
        }
    }

    // Intra pass.
    let mut prev_code = 0i64;
    let mut prev_t = i64::from(adu.start_t);
    for cube in &adu.cubes {
        let empty = cube.is_empty();
        enc.encode(&mut ctx.cube_empty, empty);
        if empty {
            continue;
        }
        let mut prev_skipped = 0;
        for q in &cube.queues {
            match q.first() {
                None => {
                    enc.encode(&mut ctx.d_skip[INTRA][prev_skipped], true);
                    prev_skipped = 1;
                }
                Some(e) => {
                    enc.encode(&mut ctx.d_skip[INTRA][prev_skipped], false);
                    prev_skipped = 0;
                    let code = d_code(e.d);
                    put_eg(&mut enc, &mut ctx.d_res[INTRA], zigzag(code - prev_code));
                    put_eg(&mut enc, &mut ctx.t_res[INTRA], zigzag(i64::from(e.t) - prev_t));
                    prev_code = code;
                    prev_t = i64::from(e.t);
                }
            }
        }
    }

    // Inter pass.
    for (cube, rcube) in adu.cubes.iter().zip(recon.cubes.iter_mut()) {
        for (q, rq) in cube.queues.iter().zip(rcube.queues.iter_mut()) {
            if q.is_empty() {
                continue;
            }
            let mut t_recon = i64::from(q[0].t);
            let mut dt_recon = 0i64;
            for i in 1..q.len() {
                let (a, b) = (&q[i - 1], &q[i]);
                enc.encode(&mut ctx.d_skip[INTER][(i > 1) as usize], false);
                enc.encode(&mut ctx.d_eos, false);
                put_eg(&mut enc, &mut ctx.d_res[INTER], zigzag(d_code(b.d) - d_code(a.d)));
                let prediction = t_prediction(t_recon, dt_recon, prediction_dr(a.d, b.d));
                let t_true = i64::from(b.t);
                let (s, k) = match q.get(i + 1) {
                    // The pixel's last event in the ADU is kept exact so the
                    // next ADU's intra event decodes to its true interval.
                    None => (0, t_true - prediction),
                    Some(n) => choose_shift(&ShiftProblem {
                        t_true,
                        prediction,
                        d: b.d,
                        prev_t: t_recon,
                        intensity: display_intensity(b.d, t_true - i64::from(a.t), dt_ref),
                        m_max,
                        dt_ref,
                        next: Some(Lookahead {
                            d: n.d,
                            t: i64::from(n.t),
                            intensity: display_intensity(n.d, i64::from(n.t) - t_true, dt_ref),
                        }),
                    }),
                };
                put_eg(&mut enc, &mut ctx.shift, u64::from(s));
                put_eg(&mut enc, &mut ctx.t_res[INTER], zigzag(k));
                let t = prediction + k * (1i64 << s);
                debug_assert!(t > t_recon && t <= i64::from(Tick::MAX));
                rq[i].t = t as Tick;
                dt_recon = t - t_recon;
                t_recon = t;
            }
            enc.encode(&mut ctx.d_skip[INTER][(q.len() > 1) as usize], true);
        }
    }
    enc.encode(&mut ctx.d_skip[INTER][0], false);
    enc.encode(&mut ctx.d_eos, true);

    let mut out = Vec::with_capacity(PAYLOAD_PREFIX + 64);
    out.extend_from_slice(&adu.start_t.to_le_bytes());
    out.extend_from_slice(&adu.span.to_le_bytes());
    out.extend(enc.finish());

    #[cfg(debug_assertions)]
    {
        let h = StreamHeader::new(adu.width, adu.height, adu.channels, dt_ref, 1, 1.0);
        let decoded = decode_adu(&out, &h, index).expect("encoder output must decode");
        debug_assert!(decoded == recon, "encoder and decoder state diverged");
    }
    Ok((out, recon))
}

struct SymbolReader<'a> {
    dec: RangeDecoder<'a>,
    adu: usize,
    symbol: u64,
}

impl SymbolReader<'_> {
    fn corrupt(&self, reason: &'static str) -> CodecError {
        CodecError::Corrupt { adu: self.adu, symbol: self.symbol, reason }
    }

    fn check(&self) -> Result<(), CodecError> {
        if self.dec.overrun() > 0 {
            Err(self.corrupt("read past end of payload"))
        } else {
            Ok(())
        }
    }

    fn bit(&mut self, model: &mut BitModel) -> Result<bool, CodecError> {
        self.symbol += 1;
        let b = self.dec.decode(model);
        self.check()?;
        Ok(b)
    }

    fn eg(&mut self, ctx: &mut [BitModel]) -> Result<u64, CodecError> {
        self.symbol += 1;
        let last = ctx.len() - 1;
        let mut n = 0u32;
        while self.dec.decode(&mut ctx[(n as usize).min(last)]) {
            n += 1;
            if n > MAX_PREFIX {
                return Err(self.corrupt("Exp-Golomb prefix too long"));
            }
        }
        let mut w = 1u64;
        for _ in 0..n {
            w = (w << 1) | u64::from(self.dec.decode_bypass());
        }
        self.check()?;
        Ok(w - 1)
    }

    fn signed(&mut self, ctx: &mut [BitModel]) -> Result<i64, CodecError> {
        Ok(unzigzag(self.eg(ctx)?))
    }
}

/// Decodes one ADU payload. `index` only labels errors.
pub fn decode_adu(bytes: &[u8], header: &StreamHeader, index: usize) -> Result<Adu, CodecError> {
    if bytes.len() < PAYLOAD_PREFIX {
        return Err(CodecError::ShortPayload { adu: index });
    }
    let start_t = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let span = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let mut adu = Adu::new(header, start_t, span);
    let mut rd = SymbolReader { dec: RangeDecoder::new(&bytes[PAYLOAD_PREFIX..]), adu: index, symbol: 0 };
    rd.check()?;
    let mut ctx = Contexts::default();

    let to_tick = |rd: &SymbolReader, t: i64| -> Result<Tick, CodecError> {
        Tick::try_from(t).map_err(|_| rd.corrupt("timestamp out of range"))
    };

    let mut prev_code = 0i64;
    let mut prev_t = i64::from(start_t);
    let mut occupied = vec![false; adu.cubes.len()];
    for (ci, cube) in adu.cubes.iter_mut().enumerate() {
        if rd.bit(&mut ctx.cube_empty)? {
            continue;
        }
        occupied[ci] = true;
        let mut prev_skipped = 0;
        for slot in 0..cube.queues.len() {
            if rd.bit(&mut ctx.d_skip[INTRA][prev_skipped])? {
                prev_skipped = 1;
                continue;
            }
            prev_skipped = 0;
            let code = prev_code + rd.signed(&mut ctx.d_res[INTRA])?;
            let d = d_from_code(code).ok_or_else(|| rd.corrupt("D out of range"))?;
            let t = prev_t + rd.signed(&mut ctx.t_res[INTRA])?;
            let tick = to_tick(&rd, t)?;
            let (x, y, c) = cube.coords(slot);
            cube.queues[slot].push(Event { x, y, c, d, t: tick });
            prev_code = code;
            prev_t = t;
        }
        if cube.is_empty() {
            return Err(rd.corrupt("cube flagged occupied but has no events"));
        }
    }

    for (ci, cube) in adu.cubes.iter_mut().enumerate() {
        if !occupied[ci] {
            continue;
        }
        for slot in 0..cube.queues.len() {
            let Some(&first) = cube.queues[slot].first() else { continue };
            let mut a = first;
            let mut t_recon = i64::from(first.t);
            let mut dt_recon = 0i64;
            let mut k = 1usize;
            loop {
                if rd.bit(&mut ctx.d_skip[INTER][(k > 1) as usize])? {
                    break;
                }
                if rd.bit(&mut ctx.d_eos)? {
                    return Err(rd.corrupt("end of sequence inside a pixel"));
                }
                let code = d_code(a.d) + rd.signed(&mut ctx.d_res[INTER])?;
                let d = d_from_code(code).ok_or_else(|| rd.corrupt("D out of range"))?;
                let prediction = t_prediction(t_recon, dt_recon, prediction_dr(a.d, d));
                let s = rd.eg(&mut ctx.shift)?;
                if s > u64::from(MAX_SHIFT) {
                    return Err(rd.corrupt("bit shift too large"));
                }
                let r = rd.signed(&mut ctx.t_res[INTER])?;
                let t = r
                    .checked_mul(1i64 << s)
                    .and_then(|v| v.checked_add(prediction))
                    .ok_or_else(|| rd.corrupt("timestamp overflow"))?;
                if t <= t_recon {
                    return Err(rd.corrupt("timestamp not after previous event"));
                }
                let tick = to_tick(&rd, t)?;
                let e = Event { d, t: tick, ..first };
                cube.queues[slot].push(e);
                dt_recon = t - t_recon;
                t_recon = t;
                a = e;
                k += 1;
            }
        }
    }
    if rd.bit(&mut ctx.d_skip[INTER][0])? || !rd.bit(&mut ctx.d_eos)? {
        return Err(rd.corrupt("missing end of sequence"));
    }
    Ok(adu)
}
