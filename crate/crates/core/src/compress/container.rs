//! Compressed stream files: a header with the compressed codec id, then
//! ADU payloads each preceded by a u32 little-endian byte count.

use rayon::prelude::*;
use thiserror::Error;

use super::adu::{build_adus, Adu};
use super::codec::{decode_adu, encode_adu, CodecError};
use crate::event::{Event, EventError, SourceCodec, StreamHeader, HEADER_BYTES};

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Header(#[from] EventError),
    #[error("stream is not compressed (codec id {0:?})")]
    NotCompressed(SourceCodec),
    #[error("ADU {adu}: block truncated ({available} of {needed} bytes)")]
    Truncated { adu: usize, needed: usize, available: usize },
    #[error("ADU {0} requested but the stream holds {1}")]
    NoSuchAdu(usize, usize),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Encodes already-built ADUs in parallel and frames them into a file image.
pub fn write_adus(header: &StreamHeader, adus: &[Adu], m_max: u8) -> Result<Vec<u8>, ContainerError> {
    let payloads = adus
        .par_iter()
        .enumerate()
        .map(|(k, adu)| encode_adu(adu, m_max, header.dt_ref, k))
        .collect::<Result<Vec<_>, _>>()?;
    let mut h = *header;
    h.source_codec = SourceCodec::Compressed;
    let total: usize = payloads.iter().map(|p| p.len() + 4).sum();
    let mut out = Vec::with_capacity(HEADER_BYTES + total);
    out.extend_from_slice(&h.to_bytes());
    for p in &payloads {
        let len = u32::try_from(p.len()).expect("ADU payload exceeds 4 GiB");
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(p);
    }
    Ok(out)
}

/// Compresses an emission-ordered event stream into ADUs of `span` ticks.
pub fn compress_events(header: &StreamHeader, events: &[Event], m_max: u8, span: u32) -> Result<Vec<u8>, ContainerError> {
    let adus = build_adus(header, events, span);
    log::debug!("compressing {} events in {} ADUs", events.len(), adus.len());
    write_adus(header, &adus, m_max)
}

/// Parsed view of a compressed file: the header and each ADU's payload.
#[derive(Debug)]
pub struct CompressedStream<'a> {
    pub header: StreamHeader,
    pub blocks: Vec<&'a [u8]>,
}

impl<'a> CompressedStream<'a> {
    /// Splits `bytes` into ADU blocks using only the length prefixes.
    pub fn parse(bytes: &'a [u8]) -> Result<Self, ContainerError> {
        let header = StreamHeader::from_bytes(bytes)?;
        if header.source_codec != SourceCodec::Compressed {
            return Err(ContainerError::NotCompressed(header.source_codec));
        }
        let mut blocks = Vec::new();
        let mut rest = &bytes[HEADER_BYTES..];
        while !rest.is_empty() {
            let adu = blocks.len();
            if rest.len() < 4 {
                return Err(ContainerError::Truncated { adu, needed: 4, available: rest.len() });
            }
            let len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
            rest = &rest[4..];
            if rest.len() < len {
                return Err(ContainerError::Truncated { adu, needed: len, available: rest.len() });
            }
            blocks.push(&rest[..len]);
            rest = &rest[len..];
        }
        Ok(CompressedStream { header, blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Decodes ADU `k` on its own.
    pub fn decode(&self, k: usize) -> Result<Adu, ContainerError> {
        let block = self.blocks.get(k).ok_or(ContainerError::NoSuchAdu(k, self.blocks.len()))?;
        Ok(decode_adu(block, &self.header, k)?)
    }

    pub fn decode_all(&self) -> Result<Vec<Adu>, ContainerError> {
        (0..self.blocks.len()).into_par_iter().map(|k| self.decode(k)).collect()
    }
}

/// Decodes a whole compressed file into a timestamp-ordered event stream.
pub fn decompress_events(bytes: &[u8]) -> Result<(StreamHeader, Vec<Event>), ContainerError> {
    let stream = CompressedStream::parse(bytes)?;
    let mut events: Vec<Event> = stream.decode_all()?.iter().flat_map(|a| a.events().copied().collect::<Vec<_>>()).collect();
    events.sort_by_key(|e| e.t);
    let mut header = stream.header;
    header.source_codec = SourceCodec::Raw;
    Ok((header, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::write_raw_stream;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stream(seed: u64, n_pixels: u16, horizon: u32) -> (StreamHeader, Vec<Event>) {
        let h = StreamHeader::new(40, 30, 1, 255, 2550, 30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events = Vec::new();
        for _ in 0..n_pixels {
            let (x, y) = (rng.random_range(0..40), rng.random_range(0..30));
            if events.iter().any(|e: &Event| e.x == x && e.y == y) {
                continue;
            }
            let mut t = 0;
            loop {
                t += rng.random_range(1..600);
                if t > horizon {
                    break;
                }
                let d = if rng.random_bool(0.05) { crate::event::D_EMPTY } else { rng.random_range(0..12) };
                events.push(Event::new(x, y, d, t));
            }
        }
        events.sort_by_key(|e| e.t);
        (h, events)
    }

    #[test]
    fn lossless_file_roundtrip() {
        let (h, events) = random_stream(7, 300, 20_000);
        let bytes = compress_events(&h, &events, 0, 2550).unwrap();
        let (h2, decoded) = decompress_events(&bytes).unwrap();
        assert_eq!(h2.width, h.width);
        let key = |e: &Event| (e.t, e.x, e.y);
        let mut a = events.clone();
        a.sort_by_key(key);
        let mut b = decoded;
        b.sort_by_key(key);
        assert_eq!(a, b);
        let mut raw = Vec::new();
        write_raw_stream(&mut raw, &h, &events).unwrap();
        assert!(bytes.len() < raw.len());
    }

    #[test]
    fn adus_decode_independently() {
        let (h, events) = random_stream(11, 200, 12_000);
        let bytes = compress_events(&h, &events, 12, 2550).unwrap();
        let stream = CompressedStream::parse(&bytes).unwrap();
        assert_eq!(stream.len(), 5);
        let all = stream.decode_all().unwrap();
        for k in (0..stream.len()).rev() {
            assert_eq!(stream.decode(k).unwrap(), all[k]);
        }
        // Re-encoding a single ADU reproduces its block byte for byte.
        let adus = build_adus(&h, &events, 2550);
        assert_eq!(encode_adu(&adus[3], 12, 255, 3).unwrap(), stream.blocks[3]);
        assert!(matches!(stream.decode(9), Err(ContainerError::NoSuchAdu(9, 5))));
    }

    #[test]
    fn rejects_raw_and_truncated_files() {
        let (h, events) = random_stream(3, 50, 5000);
        let mut raw = Vec::new();
        write_raw_stream(&mut raw, &h, &events).unwrap();
        assert!(matches!(CompressedStream::parse(&raw), Err(ContainerError::NotCompressed(_))));
        let bytes = compress_events(&h, &events, 0, 2550).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(CompressedStream::parse(cut), Err(ContainerError::Truncated { .. })));
    }
}
