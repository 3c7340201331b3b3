//! Event data model, stream header, raw serialization and the CRF table.
//!
//! An event `<x, y, c, D, t>` asserts that pixel `(x, y)` in channel `c`
//! integrated `2^D` intensity units between its previous event and the
//! absolute tick `t`. The intensity it expresses is therefore `2^D / Δt`.

use std::io::{Read, Write};

use thiserror::Error;

/// Decimation factor. Values `0..=D_MAX` are powers of two; [`D_EMPTY`]
/// marks a zero-intensity span.
pub type D = u8;

/// Absolute timestamp in clock ticks.
pub type Tick = u32;

/// Largest regular decimation factor.
pub const D_MAX: D = 127;

/// Sentinel decimation for a span that integrated no intensity.
pub const D_EMPTY: D = 255;

/// Bytes in one serialized single-channel event.
pub const EVENT_BYTES_MONO: usize = 9;

/// Bytes in one serialized multi-channel event.
pub const EVENT_BYTES_COLOR: usize = 10;

pub const HEADER_MAGIC: [u8; 4] = *b"EVCA";
pub const HEADER_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 26;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("event interval must be at least one tick")]
    InvalidInterval,
    #[error("decimation {0} outside 0..=127 and not the empty sentinel")]
    InvalidDecimation(u8),
    #[error("coordinate ({x}, {y}) does not fit the 16-bit record layout")]
    CoordinateOverflow { x: u32, y: u32 },
    #[error("incomplete record: need {needed} bytes, have {available}")]
    IncompleteRecord { needed: usize, available: usize },
    #[error("bad stream magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported stream version {0}")]
    BadVersion(u16),
    #[error("invalid header: {0}")]
    InvalidHeader(&'static str),
    #[error("crf {0} outside 0..=9")]
    InvalidCrf(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub c: u8,
    pub d: D,
    pub t: Tick,
}

impl Event {
    pub fn new(x: u16, y: u16, d: D, t: Tick) -> Self {
        Event { x, y, c: 0, d, t }
    }

    pub fn is_empty(&self) -> bool {
        self.d == D_EMPTY
    }
}

/// Intensity units per tick expressed by an event of decimation `d` spanning `dt` ticks.
pub fn event_intensity(d: D, dt: u64) -> Result<f64, EventError> {
    if dt == 0 {
        return Err(EventError::InvalidInterval);
    }
    if d == D_EMPTY {
        return Ok(0.0);
    }
    if d > D_MAX {
        return Err(EventError::InvalidDecimation(d));
    }
    Ok(2f64.powi(i32::from(d)) / dt as f64)
}

/// Where the stream's events came from: the raw transcoder or the arithmetic coder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceCodec {
    Raw = 0,
    Compressed = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub magic: [u8; 4],
    pub version: u16,
    pub width: u16,
    pub height: u16,
    pub channels: u8,
    /// Ticks spanned by one input frame.
    pub dt_ref: u32,
    /// Longest span the first event of a newly stable pixel may cover.
    pub dt_max: u32,
    /// Ticks per second.
    pub dt_s: u32,
    pub crf: u8,
    pub source_codec: SourceCodec,
}

impl StreamHeader {
    /// A raw-stream header with the magic and version filled in.
    pub fn new(width: u16, height: u16, channels: u8, dt_ref: u32, dt_max: u32, fps: f64) -> Self {
        StreamHeader {
            magic: HEADER_MAGIC,
            version: HEADER_VERSION,
            width,
            height,
            channels,
            dt_ref,
            dt_max,
            dt_s: (f64::from(dt_ref) * fps).round() as u32,
            crf: 0,
            source_codec: SourceCodec::Raw,
        }
    }

    pub fn validate(&self) -> Result<(), EventError> {
        if self.width == 0 || self.height == 0 {
            return Err(EventError::InvalidHeader("zero dimension"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(EventError::InvalidHeader("channel count must be 1 or 3"));
        }
        if self.dt_ref == 0 {
            return Err(EventError::InvalidHeader("dt_ref must be at least 1"));
        }
        if self.dt_max < self.dt_ref {
            return Err(EventError::InvalidHeader("dt_max must be at least dt_ref"));
        }
        if self.crf > 9 {
            return Err(EventError::InvalidCrf(self.crf));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        usize::from(self.width) * usize::from(self.height)
    }

    pub fn event_bytes(&self) -> usize {
        if self.channels == 1 {
            EVENT_BYTES_MONO
        } else {
            EVENT_BYTES_COLOR
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_BYTES] {
        let mut out = [0u8; HEADER_BYTES];
        out[0..4].copy_from_slice(&self.magic);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..8].copy_from_slice(&self.width.to_le_bytes());
        out[8..10].copy_from_slice(&self.height.to_le_bytes());
        out[10] = self.channels;
        out[11] = self.crf;
        out[12] = self.source_codec as u8;
        // out[13] reserved
        out[14..18].copy_from_slice(&self.dt_ref.to_le_bytes());
        out[18..22].copy_from_slice(&self.dt_max.to_le_bytes());
        out[22..26].copy_from_slice(&self.dt_s.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EventError> {
        if bytes.len() < HEADER_BYTES {
            return Err(EventError::IncompleteRecord { needed: HEADER_BYTES, available: bytes.len() });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != HEADER_MAGIC {
            return Err(EventError::BadMagic(magic));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != HEADER_VERSION {
            return Err(EventError::BadVersion(version));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let source_codec = match bytes[12] {
            0 => SourceCodec::Raw,
            1 => SourceCodec::Compressed,
            _ => return Err(EventError::InvalidHeader("unknown source codec")),
        };
        let header = StreamHeader {
            magic,
            version,
            width: u16::from_le_bytes([bytes[6], bytes[7]]),
            height: u16::from_le_bytes([bytes[8], bytes[9]]),
            channels: bytes[10],
            crf: bytes[11],
            source_codec,
            dt_ref: u32_at(14),
            dt_max: u32_at(18),
            dt_s: u32_at(22),
        };
        header.validate()?;
        Ok(header)
    }
}

pub fn write_header<W: Write>(w: &mut W, header: &StreamHeader) -> Result<(), EventError> {
    w.write_all(&header.to_bytes())?;
    Ok(())
}

pub fn read_header<R: Read>(r: &mut R) -> Result<StreamHeader, EventError> {
    let mut buf = [0u8; HEADER_BYTES];
    r.read_exact(&mut buf)?;
    StreamHeader::from_bytes(&buf)
}

/// Appends the little-endian record for `e` to `out`.
///
/// Mono layout: `x:u16 y:u16 D:u8 t:u32`. Color inserts `c:u8` after `y`.
pub fn serialize_event(e: &Event, channels: u8, out: &mut Vec<u8>) {
    out.extend_from_slice(&e.x.to_le_bytes());
    out.extend_from_slice(&e.y.to_le_bytes());
    if channels > 1 {
        out.push(e.c);
    }
    out.push(e.d);
    out.extend_from_slice(&e.t.to_le_bytes());
}

/// Builds an event from wide coordinates, rejecting values that do not fit the record.
pub fn checked_event(x: u32, y: u32, c: u8, d: D, t: Tick) -> Result<Event, EventError> {
    let (Ok(xs), Ok(ys)) = (u16::try_from(x), u16::try_from(y)) else {
        return Err(EventError::CoordinateOverflow { x, y });
    };
    Ok(Event { x: xs, y: ys, c, d, t })
}

pub fn parse_event(bytes: &[u8], channels: u8) -> Result<Event, EventError> {
    let needed = if channels > 1 { EVENT_BYTES_COLOR } else { EVENT_BYTES_MONO };
    if bytes.len() < needed {
        return Err(EventError::IncompleteRecord { needed, available: bytes.len() });
    }
    let x = u16::from_le_bytes([bytes[0], bytes[1]]);
    let y = u16::from_le_bytes([bytes[2], bytes[3]]);
    let (c, rest) = if channels > 1 { (bytes[4], &bytes[5..]) } else { (0, &bytes[4..]) };
    let d = rest[0];
    let t = u32::from_le_bytes(rest[1..5].try_into().unwrap());
    Ok(Event { x, y, c, d, t })
}

/// Writes a complete `.adder` raw stream.
pub fn write_raw_stream<W: Write>(w: &mut W, header: &StreamHeader, events: &[Event]) -> Result<(), EventError> {
    write_header(w, header)?;
    let mut buf = Vec::with_capacity(events.len() * header.event_bytes());
    for e in events {
        serialize_event(e, header.channels, &mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_raw_stream<R: Read>(r: &mut R) -> Result<(StreamHeader, Vec<Event>), EventError> {
    let header = read_header(r)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let size = header.event_bytes();
    if body.len() % size != 0 {
        let whole = body.len() / size * size;
        return Err(EventError::IncompleteRecord { needed: size, available: body.len() - whole });
    }
    let events = body
        .chunks_exact(size)
        .map(|chunk| parse_event(chunk, header.channels))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((header, events))
}

/// Rate-distortion parameters selected by the constant rate factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSet {
    /// Contrast threshold a pixel starts each run with.
    pub m_base: u8,
    /// Ceiling the threshold may grow to.
    pub m_max: u8,
    /// Stable frame intervals per one-unit threshold increase.
    pub m_v: u32,
    /// Chebyshev radius of feature-driven sensitivity boosts.
    pub feature_radius: u16,
}

impl ParamSet {
    /// Intensity loss the compressor may add per event: a quarter of
    /// `m_max`, so coding error stays small next to transcoding error.
    pub fn coding_tolerance(&self) -> u8 {
        self.m_max / 4
    }
}

// (m_base, m_max, m_v, feature_radius). Tuned on a noisy moving-box clip
// so that each step costs roughly 1.7-2.7 dB; the run baseline grows with
// the ceiling so coding loss (a quarter of m_max) stays under transcoding loss.
const CRF_TABLE: [(u8, u8, u32, u16); 10] = [
    (0, 0, 1, 0),
    (1, 1, 1, 1),
    (1, 2, 1, 1),
    (2, 2, 1, 1),
    (2, 3, 1, 2),
    (2, 4, 1, 2),
    (3, 4, 1, 2),
    (3, 5, 1, 3),
    (4, 6, 1, 3),
    (5, 8, 2, 3),
];

pub fn crf_params(crf: u8) -> Result<ParamSet, EventError> {
    let &(m_base, m_max, m_v, feature_radius) =
        CRF_TABLE.get(usize::from(crf)).ok_or(EventError::InvalidCrf(crf))?;
    Ok(ParamSet { m_base, m_max, m_v, feature_radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn intensity_examples() {
        assert_eq!(event_intensity(8, 256).unwrap(), 1.0);
        assert_eq!(event_intensity(0, 1).unwrap(), 1.0);
        assert!((event_intensity(5, 100).unwrap() - 0.32).abs() < 1e-9);
        assert_eq!(event_intensity(D_EMPTY, 40).unwrap(), 0.0);
        assert!(matches!(event_intensity(3, 0), Err(EventError::InvalidInterval)));
        assert!(matches!(event_intensity(128, 4), Err(EventError::InvalidDecimation(128))));
    }

    #[test]
    fn crf_table_shape() {
        assert_eq!(crf_params(0).unwrap(), ParamSet { m_base: 0, m_max: 0, m_v: 1, feature_radius: 0 });
        assert!(crf_params(10).is_err());
        let all: Vec<_> = (0..=9).map(|c| crf_params(c).unwrap()).collect();
        for pair in all.windows(2) {
            assert!(pair[0].m_base <= pair[1].m_base);
            assert!(pair[0].m_max <= pair[1].m_max);
            assert!(pair[0].feature_radius <= pair[1].feature_radius);
        }
        for p in &all {
            assert!(p.m_base <= p.m_max && p.m_v >= 1);
        }
    }

    #[test]
    fn serialize_golden() {
        let mut buf = Vec::new();
        serialize_event(&Event::new(1, 2, 5, 100), 1, &mut buf);
        assert_eq!(buf, [0x01, 0x00, 0x02, 0x00, 0x05, 0x64, 0x00, 0x00, 0x00]);
        assert_eq!(parse_event(&buf, 1).unwrap(), Event::new(1, 2, 5, 100));

        buf.clear();
        serialize_event(&Event::new(0, 0, 0, 0), 1, &mut buf);
        assert_eq!(buf, [0u8; 9]);

        buf.clear();
        serialize_event(&Event { x: 3, y: 4, c: 2, d: 7, t: 9 }, 3, &mut buf);
        assert_eq!(buf, [3, 0, 4, 0, 2, 7, 9, 0, 0, 0]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_event(&[], 1),
            Err(EventError::IncompleteRecord { needed: 9, available: 0 })
        ));
        assert!(matches!(
            checked_event(70_000, 1, 0, 0, 1),
            Err(EventError::CoordinateOverflow { .. })
        ));
    }

    #[test]
    fn header_reference_config() {
        let h = StreamHeader::new(640, 360, 1, 255, 7650, 30.0);
        assert_eq!(h.dt_s, 7650);
        let back = StreamHeader::from_bytes(&h.to_bytes()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn header_rejects_corruption() {
        let h = StreamHeader::new(64, 64, 1, 255, 7650, 30.0);
        let mut bytes = h.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(StreamHeader::from_bytes(&bytes), Err(EventError::BadMagic(_))));
        let mut bytes = h.to_bytes();
        bytes[4] = 9;
        assert!(matches!(StreamHeader::from_bytes(&bytes), Err(EventError::BadVersion(9))));
    }

    #[test]
    fn raw_stream_truncation() {
        let h = StreamHeader::new(8, 8, 1, 255, 255, 30.0);
        let mut file = Vec::new();
        write_raw_stream(&mut file, &h, &[Event::new(1, 1, 3, 10), Event::new(2, 1, 4, 20)]).unwrap();
        let (back_h, back) = read_raw_stream(&mut file.as_slice()).unwrap();
        assert_eq!(back_h, h);
        assert_eq!(back.len(), 2);
        file.pop();
        assert!(read_raw_stream(&mut file.as_slice()).is_err());
    }

    fn arb_event(channels: u8) -> impl Strategy<Value = Event> {
        let max_c: u8 = if channels > 1 { 3 } else { 1 };
        (any::<u16>(), any::<u16>(), 0..max_c, prop_oneof![0u8..=D_MAX, Just(D_EMPTY)], any::<u32>())
            .prop_map(|(x, y, c, d, t)| Event { x, y, c, d, t })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn event_roundtrip(e in arb_event(1), ec in arb_event(3)) {
            let mut buf = Vec::new();
            serialize_event(&e, 1, &mut buf);
            prop_assert_eq!(buf.len(), EVENT_BYTES_MONO);
            prop_assert_eq!(parse_event(&buf, 1).unwrap(), e);
            buf.clear();
            serialize_event(&ec, 3, &mut buf);
            prop_assert_eq!(parse_event(&buf, 3).unwrap(), ec);
        }

        #[test]
        fn header_roundtrip(w in 1u16.., h in 1u16.., color in any::<bool>(), dt_ref in 1u32..10_000,
                            extra in 0u32..100_000, dt_s in any::<u32>(), crf in 0u8..=9, comp in any::<bool>()) {
            let header = StreamHeader {
                magic: HEADER_MAGIC,
                version: HEADER_VERSION,
                width: w,
                height: h,
                channels: if color { 3 } else { 1 },
                dt_ref,
                dt_max: dt_ref + extra,
                dt_s,
                crf,
                source_codec: if comp { SourceCodec::Compressed } else { SourceCodec::Raw },
            };
            prop_assert_eq!(StreamHeader::from_bytes(&header.to_bytes()).unwrap(), header);
        }

        #[test]
        fn coalescing_preserves_intensity(d in 0u8..D_MAX, dt in 1u64..1_000_000) {
            let a = event_intensity(d, dt).unwrap();
            let b = event_intensity(d + 1, 2 * dt).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
