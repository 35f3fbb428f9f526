//! Stream construction and evaluation harness for full-duplex speech agents.
//!
//! The crate covers the whole path from conditioning streams to benchmark
//! reports:
//!
//! * [`audio`], [`codec`], [`stream`]: PCM lanes, the 12.5 Hz frame clock and
//!   a deterministic toy codec producing multi-codebook token streams;
//! * [`prompt`]: hybrid voice + text system prompts and loss-weight masks;
//! * [`stitch`]: two-lane dialog assembly with gaps and barge-in overlaps;
//! * [`vad`]: energy VAD and turn-taking event extraction;
//! * [`metrics`]: take-over rate, latency, backchannel statistics, JSD and
//!   speaker similarity;
//! * [`agents`]: the duplex agent contract, reference agents and the
//!   lockstep wire protocol;
//! * [`bench`]: service-scenario schema, trial runner, judges and reports.

pub mod agents;
pub mod audio;
pub mod bench;
pub mod codec;
pub mod error;
pub mod metrics;
pub mod prompt;
pub mod stitch;
pub mod stream;
pub mod text;
pub mod vad;

pub use error::{Error, Result};
