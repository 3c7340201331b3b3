//! Source-modeled compression of event streams.

pub mod adu;
pub mod codec;
pub mod container;
pub mod range_coder;

pub use adu::{build_adus, Adu, AduBuilder, EventCube, CUBE_SIZE};
pub use codec::{choose_shift, decode_adu, encode_adu, encode_adu_with_recon, t_prediction, CodecError, Lookahead, ShiftProblem};
pub use container::{compress_events, decompress_events, write_adus, CompressedStream, ContainerError};
