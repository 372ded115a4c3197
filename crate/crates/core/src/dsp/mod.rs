//! Log-mel spectrogram frontend.
//!
//! Fixed engine format: 16 kHz mono input, 4096-point Hann STFT centered on
//! multiples of the 512-sample hop (31.25 frames/s), 700 triangular mel
//! filters spanning the piano range 27.5–8372 Hz, natural-log compression
//! with a 1e-5 floor.
//!
//! Both entry points — [`log_mel_frames`] for whole buffers and
//! [`FrontendState`] for incremental chunks — share the same per-window
//! computation, and the streaming path emits bit-identical frames for every
//! possible chunking of the input.

mod fft;
mod filterbank;

use alloc::vec;
use alloc::vec::Vec;

pub use fft::{hann_window, Fft};
pub use filterbank::{build_mel_filterbank, hz_to_mel, mel_to_hz, MelFilterbank};

/// Engine sample rate; the core accepts nothing else.
pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FFT: usize = 4096;
pub const HOP: usize = 512;
pub const N_MELS: usize = 700;
pub const F_MIN: f64 = 27.5;
pub const F_MAX: f64 = 8372.0;
/// Floor added to mel energies before the natural log.
pub const LOG_EPS: f32 = 1e-5;
/// Analysis frames per second (16000 / 512).
pub const FPS: f64 = 31.25;
/// Seconds per analysis frame.
pub const FRAME_SECONDS: f64 = 0.032;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DspError {
    #[error("bad frontend configuration: {0}")]
    BadConfig(&'static str),
    #[error("engine requires 16 kHz mono input, got {0} Hz")]
    BadSampleRate(u32),
    #[error("audio contains non-finite samples")]
    NonFinite,
    #[error("audio buffer is empty")]
    Empty,
}

/// Mono 16 kHz audio.
#[derive(Debug, Clone)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate != SAMPLE_RATE {
            return Err(DspError::BadSampleRate(sample_rate));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(DspError::NonFinite);
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// One column of the log-mel spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrame {
    pub values: Vec<f32>,
    pub frame_index: usize,
}

impl MelFrame {
    pub fn frame_time(&self) -> f64 {
        self.frame_index as f64 * HOP as f64 / SAMPLE_RATE as f64
    }
}

/// Shared per-window pipeline: Hann → FFT → power → mel → log.
struct FrameComputer {
    hann: Vec<f32>,
    fft: Fft,
    fb: MelFilterbank,
    win: Vec<f32>,
    re: Vec<f32>,
    im: Vec<f32>,
    power: Vec<f32>,
}

impl FrameComputer {
    fn new() -> Self {
        let fb = MelFilterbank::new(N_MELS, F_MIN, F_MAX, N_FFT, SAMPLE_RATE)
            .expect("default filterbank parameters are valid");
        Self {
            hann: hann_window(N_FFT),
            fft: Fft::new(N_FFT),
            fb,
            win: vec![0.0; N_FFT],
            re: vec![0.0; N_FFT],
            im: vec![0.0; N_FFT],
            power: vec![0.0; N_FFT / 2 + 1],
        }
    }

    /// `self.win` holds the raw (unwindowed) samples for this frame.
    fn finish(&mut self) -> Vec<f32> {
        for (w, h) in self.win.iter_mut().zip(self.hann.iter()) {
            *w *= h;
        }
        self.fft.power_spectrum(&self.win, &mut self.re, &mut self.im, &mut self.power);
        let mut values = vec![0.0f32; N_MELS];
        self.fb.apply(&self.power, &mut values);
        for v in values.iter_mut() {
            *v = (*v + LOG_EPS).ln();
        }
        values
    }
}

/// Number of frames the batch frontend produces for `len` samples.
pub fn frame_count(len: usize) -> usize {
    len.div_ceil(HOP)
}

/// Whole-buffer log-mel spectrogram. Frame `t` covers samples centered at
/// `t * 512`, zero-padded at both edges.
pub fn log_mel_frames(audio: &AudioBuffer) -> Vec<MelFrame> {
    let samples = audio.samples();
    let mut comp = FrameComputer::new();
    let n = frame_count(samples.len());
    let half = N_FFT / 2;
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let center = (t * HOP) as isize;
        for (i, slot) in comp.win.iter_mut().enumerate() {
            let idx = center - half as isize + i as isize;
            *slot = if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize]
            } else {
                0.0
            };
        }
        frames.push(MelFrame { values: comp.finish(), frame_index: t });
    }
    frames
}

/// Incremental frontend. Frames are emitted as soon as their full sample
/// window is available; the frames whose windows extend past the end of the
/// stream are produced by [`FrontendState::finalize`], which zero-pads the
/// tail exactly as the batch path does. For any partition of the input into
/// chunks, `push(...)* + finalize()` emits exactly the frames of
/// [`log_mel_frames`] on the concatenated input, bit for bit.
pub struct FrontendState {
    comp: FrameComputer,
    /// Samples from absolute index `tail_start` onward, still needed by
    /// future frames.
    tail: Vec<f32>,
    tail_start: usize,
    total: usize,
    next_frame: usize,
    finalized: bool,
}

impl Default for FrontendState {
    fn default() -> Self {
        Self::new()
    }
}

impl FrontendState {
    pub fn new() -> Self {
        Self {
            comp: FrameComputer::new(),
            tail: Vec::new(),
            tail_start: 0,
            total: 0,
            next_frame: 0,
            finalized: false,
        }
    }

    pub fn frames_emitted(&self) -> usize {
        self.next_frame
    }

    pub fn total_samples(&self) -> usize {
        self.total
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Assemble the window for `frame` from the retained tail, zero-padding
    /// outside `[0, total)`.
    fn fill_window(&mut self, frame: usize) {
        let half = (N_FFT / 2) as isize;
        let center = (frame * HOP) as isize;
        for (i, slot) in self.comp.win.iter_mut().enumerate() {
            let idx = center - half + i as isize;
            *slot = if idx >= 0 && (idx as usize) < self.total {
                self.tail[idx as usize - self.tail_start]
            } else {
                0.0
            };
        }
    }

    fn drop_consumed(&mut self) {
        // the next frame needs samples from next_frame*HOP - N_FFT/2 onward
        let keep_from = (self.next_frame * HOP).saturating_sub(N_FFT / 2);
        if keep_from > self.tail_start {
            self.tail.drain(..keep_from - self.tail_start);
            self.tail_start = keep_from;
        }
    }

    /// Feed a chunk (possibly empty); returns the frames completed by it.
    pub fn push(&mut self, chunk: &[f32]) -> Vec<MelFrame> {
        assert!(!self.finalized, "push after finalize");
        self.tail.extend_from_slice(chunk);
        self.total += chunk.len();
        let mut out = Vec::new();
        // frame t is complete once samples through t*HOP + N_FFT/2 exist
        while self.next_frame * HOP + N_FFT / 2 <= self.total {
            self.fill_window(self.next_frame);
            let values = self.comp.finish();
            out.push(MelFrame { values, frame_index: self.next_frame });
            self.next_frame += 1;
            self.drop_consumed();
        }
        out
    }

    /// Flush the remaining frames (windows zero-padded past the stream end).
    pub fn finalize(&mut self) -> Vec<MelFrame> {
        assert!(!self.finalized, "finalize twice");
        self.finalized = true;
        let n = frame_count(self.total);
        let mut out = Vec::new();
        while self.next_frame < n {
            self.fill_window(self.next_frame);
            let values = self.comp.finish();
            out.push(MelFrame { values, frame_index: self.next_frame });
            self.next_frame += 1;
            self.drop_consumed();
        }
        self.tail.clear();
        out
    }
}
