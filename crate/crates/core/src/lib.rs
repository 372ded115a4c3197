//! Core engine for real-time piano transcription.
//!
//! The crate is `no_std` (alloc only) and holds everything that does not
//! touch the filesystem or a clock:
//!
//! - [`dsp`] — streaming/batch log-mel spectrogram frontend (16 kHz mono,
//!   4096-point STFT, 700 mel bins, 512-sample hop).
//! - [`tensor`] — a small dense-tensor engine with reverse-mode
//!   differentiation covering exactly the layer set the models need.
//! - [`model`] — the pitchwise autoregressive note/velocity networks
//!   (full-size and compact variants), parameter counting and latency math.
//! - [`codec`] — note events ⇄ per-frame five-state rolls, sustain-pedal
//!   offset elongation.
//! - [`stream`] — the causal inference session: incremental convolution
//!   cascade, bounded lookahead, online note decoding.
//! - [`synth`] — deterministic additive-synthesis dataset generator.
//! - [`metrics`] — note-level precision/recall/F1 at the standard tolerance
//!   tiers plus duration accuracy and error breakdowns.
//!
//! File formats, WAV/MIDI ingestion, training orchestration and the CLI live
//! in the companion `parpiano` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod codec;
pub mod dsp;
pub mod metrics;
pub mod model;
pub mod stream;
pub mod synth;
pub mod tensor;

pub use codec::{NoteEvent, PedalEvent, StateRoll};
pub use dsp::{AudioBuffer, FrontendState, MelFrame};
pub use metrics::NoteMetrics;
pub use model::{Model, ModelConfig, ModelVariant};
pub use stream::{Session, TranscriptEvent};
pub use tensor::Tensor;
