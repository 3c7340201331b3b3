//! Shared inputs for the benchmarks.

use evc_core::harness::{synth, ClipKind, SynthSpec};
use evc_core::{crf_params, transcode, Event, StreamHeader};

/// A transcoded clip ready for the later stages.
pub struct Fixture {
    pub header: StreamHeader,
    pub frames: Vec<Vec<u8>>,
    pub events: Vec<Event>,
}

/// Noisy moving box, transcoded at `crf`.
pub fn fixture(width: u16, height: u16, frames: usize, crf: u8) -> Fixture {
    let clip = synth(&SynthSpec::new(ClipKind::MovingBox, width, height, frames, 7).with_grain(4.0)).expect("synth");
    let header = StreamHeader::new(width, height, 1, 255, 7650, clip.fps);
    let params = crf_params(crf).expect("crf");
    let events = transcode(clip.frames.iter().map(Vec::as_slice), params, header, None).expect("transcode");
    Fixture { header, frames: clip.frames, events }
}
