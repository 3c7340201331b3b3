//! Asynchronous intensity-event video toolkit.
//!
//! Framed grayscale video is transcoded into absolute-time intensity events,
//! compressed with a source-modeled arithmetic coder, reconstructed for
//! quality measurement, and analysed with an event-driven FAST detector that
//! can steer the transcoder's rate allocation.

pub mod compress;
pub mod event;
pub mod fastdet;
pub mod harness;
pub mod reconstruct;
pub mod transcoder;

pub use event::{crf_params, event_intensity, Event, EventError, ParamSet, StreamHeader, Tick, D, D_EMPTY};
pub use transcoder::{transcode, SensitivityRequest, TranscodeError, TranscodeHook, Transcoder};
pub use reconstruct::{mse, psnr, reconstruct_frames, ReconState};
pub use fastdet::{detect_frame, is_feature, DetectMode, DetectorState, FeaturePolicy};
