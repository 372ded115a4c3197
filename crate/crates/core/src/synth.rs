//! Deterministic synthetic piano-like dataset generator.
//!
//! Additive synthesis: each note is a sum of harmonics of its equal-tempered
//! fundamental with `1/h^1.5` spectral rolloff and an exponential amplitude
//! decay whose time constant shrinks with pitch — high notes die quickly,
//! low notes ring. That pitch dependence is exactly the structure the
//! frequency-conditioned modulation layers exist to capture, so even this
//! toy timbre exercises them.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{elongate_with_pedal, NoteEvent, PedalEvent, PEDAL_THRESHOLD};
use crate::dsp::{AudioBuffer, SAMPLE_RATE};

/// Reproducible dataset recipe: identical spec ⇒ bit-identical pieces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_pieces: usize,
    pub piece_seconds: f64,
    pub max_polyphony: usize,
    pub pitch_lo: u8,
    pub pitch_hi: u8,
    /// Mean note starts per second (Poisson process).
    pub note_rate: f64,
    /// Probability that a piece contains sustain-pedal activity.
    pub pedal_prob: f64,
    pub partials: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_pieces: 1,
            piece_seconds: 8.0,
            max_polyphony: 3,
            pitch_lo: crate::codec::PITCH_MIN,
            pitch_hi: crate::codec::PITCH_MAX,
            note_rate: 1.5,
            pedal_prob: 0.3,
            partials: 8,
        }
    }
}

/// Exponential decay constant in seconds for a pitch: 2 s at A0 shrinking
/// by half every 44 semitones.
pub fn decay_tau(pitch: u8) -> f64 {
    2.0 * 0.5f64.powf((pitch as f64 - 21.0) / 44.0)
}

fn piece_rng(spec: &SynthSpec, piece_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(piece_index as u64 + 1);
    rng
}

/// Sample the raw score for one piece: Poisson note starts, log-uniform
/// durations in `[0.1, 4]` s, uniform velocities in `[20, 110]`, no
/// same-pitch overlaps, polyphony capped, optional pedal segments whose
/// values cross the standard 64 threshold.
pub fn sample_score(spec: &SynthSpec, piece_index: usize) -> (Vec<NoteEvent>, Vec<PedalEvent>) {
    let mut rng = piece_rng(spec, piece_index);
    let mut notes: Vec<NoteEvent> = Vec::new();
    if spec.note_rate > 0.0 {
        let mut t = 0.0f64;
        loop {
            let u: f64 = rng.gen_range(1e-12..1.0);
            t += -u.ln() / spec.note_rate;
            if t >= spec.piece_seconds - 0.1 {
                break;
            }
            let dur = {
                let lo = 0.1f64.ln();
                let hi = 4.0f64.ln();
                rng.gen_range(lo..hi).exp()
            };
            let offset = (t + dur).min(spec.piece_seconds);
            if offset - t < 0.05 {
                continue;
            }
            let pitch = rng.gen_range(spec.pitch_lo..=spec.pitch_hi);
            let velocity = rng.gen_range(20..=110u8);
            let overlaps_same_pitch =
                notes.iter().any(|n| n.pitch == pitch && n.onset < offset && t < n.offset);
            if overlaps_same_pitch {
                continue;
            }
            let polyphony = notes.iter().filter(|n| n.onset <= t && t < n.offset).count();
            if polyphony >= spec.max_polyphony {
                continue;
            }
            notes.push(NoteEvent { pitch, onset: t, offset, velocity });
        }
    }

    let mut pedals = Vec::new();
    if spec.pedal_prob > 0.0 && rng.gen_bool(spec.pedal_prob.clamp(0.0, 1.0)) {
        let segments = rng.gen_range(1..=3);
        let mut t = rng.gen_range(0.0..spec.piece_seconds * 0.5);
        for _ in 0..segments {
            let hold = rng.gen_range(0.5..3.0);
            let press = t;
            let release = (t + hold).min(spec.piece_seconds);
            if release <= press {
                break;
            }
            pedals.push(PedalEvent { time: press, value: rng.gen_range(70..=127) });
            pedals.push(PedalEvent { time: release, value: rng.gen_range(0..=20) });
            t = release + rng.gen_range(0.2..1.5);
            if t >= spec.piece_seconds {
                break;
            }
        }
    }
    (notes, pedals)
}

/// Additive rendering of a note list into `total_seconds` of 16 kHz audio.
///
/// Harmonic `h` of a note has amplitude `velocity/127 · h^-1.5`, partials at
/// or above Nyquist are dropped, the envelope is a 5 ms linear attack times
/// `exp(-t/τ(pitch))`, and the sound stops hard 20 ms after the note offset.
/// The mix is normalized to peak 0.9 when it would otherwise exceed it.
pub fn render_audio(notes: &[NoteEvent], total_seconds: f64, partials: usize) -> AudioBuffer {
    let sr = SAMPLE_RATE as f64;
    let len = (total_seconds * sr).ceil() as usize;
    let mut mix = vec![0.0f64; len];
    let nyquist = sr / 2.0;
    for note in notes {
        let f0 = 440.0 * 2.0f64.powf((note.pitch as f64 - 69.0) / 12.0);
        let tau = decay_tau(note.pitch);
        let gain = note.velocity as f64 / 127.0;
        let start = (note.onset * sr).ceil() as usize;
        let stop = (((note.offset + 0.020) * sr).floor() as usize).min(len);
        let mut amps: Vec<(f64, f64)> = Vec::new(); // (freq, amplitude)
        for h in 1..=partials {
            let fh = f0 * h as f64;
            if fh >= nyquist {
                break;
            }
            amps.push((fh, gain * (h as f64).powf(-1.5)));
        }
        for i in start..stop {
            let t_rel = i as f64 / sr - note.onset;
            if t_rel < 0.0 {
                continue;
            }
            let attack = (t_rel / 0.005).min(1.0);
            let env = attack * (-t_rel / tau).exp();
            let mut s = 0.0;
            for &(fh, a) in &amps {
                s += a * (2.0 * core::f64::consts::PI * fh * t_rel).sin();
            }
            mix[i] += env * s;
        }
    }
    let peak = mix.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let scale = if peak > 0.9 { 0.9 / peak } else { 1.0 };
    let samples: Vec<f32> = mix.iter().map(|&v| (v * scale) as f32).collect();
    AudioBuffer::new(samples, SAMPLE_RATE).expect("synthesized audio is finite 16 kHz")
}

/// One fully prepared piece: pedal-elongated ground truth plus audio.
#[derive(Debug, Clone)]
pub struct SynthPiece {
    pub raw_notes: Vec<NoteEvent>,
    pub pedals: Vec<PedalEvent>,
    /// Pedal-elongated notes — the ground truth the audio actually realizes.
    pub notes: Vec<NoteEvent>,
    pub audio: AudioBuffer,
}

/// Sample, elongate and render piece `piece_index` of the spec.
pub fn generate_piece(spec: &SynthSpec, piece_index: usize) -> SynthPiece {
    let (raw_notes, pedals) = sample_score(spec, piece_index);
    let notes = elongate_with_pedal(&raw_notes, &pedals, PEDAL_THRESHOLD, spec.piece_seconds);
    let audio = render_audio(&notes, spec.piece_seconds, spec.partials);
    SynthPiece { raw_notes, pedals, notes, audio }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{log_mel_frames, MelFilterbank, F_MAX, F_MIN, N_FFT, N_MELS};

    #[test]
    fn zero_rate_gives_empty_score() {
        let spec = SynthSpec { note_rate: 0.0, ..Default::default() };
        let (notes, _) = sample_score(&spec, 0);
        assert!(notes.is_empty());
    }

    #[test]
    fn scores_are_deterministic_per_index() {
        let spec = SynthSpec { seed: 123, ..Default::default() };
        let a = sample_score(&spec, 3);
        let b = sample_score(&spec, 3);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = sample_score(&spec, 4);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn sampled_pitches_stay_in_range() {
        let spec = SynthSpec { seed: 5, pitch_lo: 40, pitch_hi: 52, note_rate: 4.0, ..Default::default() };
        for idx in 0..10 {
            let (notes, _) = sample_score(&spec, idx);
            assert!(notes.iter().all(|n| (40..=52).contains(&n.pitch)));
        }
    }

    #[test]
    fn no_same_pitch_overlaps_and_polyphony_capped() {
        let spec = SynthSpec { seed: 9, note_rate: 6.0, max_polyphony: 2, ..Default::default() };
        let (notes, _) = sample_score(&spec, 0);
        for (i, a) in notes.iter().enumerate() {
            for b in notes.iter().skip(i + 1) {
                if a.pitch == b.pitch {
                    assert!(a.offset <= b.onset || b.offset <= a.onset);
                }
            }
        }
        for n in &notes {
            let poly = notes.iter().filter(|m| m.onset <= n.onset && n.onset < m.offset).count();
            assert!(poly <= 2);
        }
    }

    #[test]
    fn empty_score_renders_silence() {
        let audio = render_audio(&[], 0.5);
        assert_eq!(audio.samples().len(), 8000);
        assert!(audio.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn a4_note_peaks_at_440_bin() {
        let note = NoteEvent::new(69, 0.1, 1.4, 100).unwrap();
        let audio = render_audio(&[note], 1.6);
        let frames = log_mel_frames(&audio);
        // look shortly after the attack where the fundamental dominates
        let probe = &frames[8];
        let argmax = probe
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let fb = MelFilterbank::new(N_MELS, F_MIN, F_MAX, N_FFT, SAMPLE_RATE).unwrap();
        assert_eq!(argmax, fb.nearest_center(440.0));
    }

    #[test]
    fn high_pitch_decays_faster_than_low() {
        let rms_decay_time = |pitch: u8| -> f64 {
            let note = NoteEvent::new(pitch, 0.0, 2.0, 100).unwrap();
            let audio = render_audio(&[note], 2.2);
            let w = 800; // 50 ms RMS windows
            let rms: Vec<f64> = audio
                .samples()
                .chunks(w)
                .map(|c| (c.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / c.len() as f64).sqrt())
                .collect();
            let peak = rms.iter().cloned().fold(0.0, f64::max);
            let idx = rms.iter().position(|&v| v > 0.0 && v < 0.1 * peak).unwrap_or(rms.len());
            idx as f64 * w as f64 / SAMPLE_RATE as f64
        };
        assert!(rms_decay_time(96) < rms_decay_time(30));
    }

    #[test]
    fn isolated_note_frames_beat_silence_by_20db() {
        let note = NoteEvent::new(60, 1.0, 1.5, 100).unwrap();
        let audio = render_audio(&[note], 3.0);
        let frame_energy = |t0: f64| -> f64 {
            let a = (t0 * SAMPLE_RATE as f64) as usize;
            let b = (a + 512).min(audio.samples().len());
            audio.samples()[a..b].iter().map(|&s| (s as f64).powi(2)).sum::<f64>()
        };
        let sounding = frame_energy(1.1);
        let silent_before = frame_energy(0.5).max(1e-12);
        let silent_after = frame_energy(2.5).max(1e-12);
        assert!(10.0 * (sounding / silent_before).log10() >= 20.0);
        assert!(10.0 * (sounding / silent_after).log10() >= 20.0);
    }

    #[test]
    fn generate_piece_labels_match_audio_extent() {
        let spec = SynthSpec { seed: 21, note_rate: 2.0, ..Default::default() };
        let piece = generate_piece(&spec, 0);
        assert_eq!(piece.audio.samples().len(), (spec.piece_seconds * SAMPLE_RATE as f64) as usize);
        for n in &piece.notes {
            assert!(n.offset <= spec.piece_seconds + 1e-9);
        }
        // elongation can only extend
        assert_eq!(piece.raw_notes.len(), piece.notes.len());
    }

    #[test]
    fn peak_is_bounded() {
        let spec = SynthSpec { seed: 2, note_rate: 5.0, max_polyphony: 5, ..Default::default() };
        let piece = generate_piece(&spec, 1);
        let peak = piece.audio.samples().iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        assert!(peak <= 0.9 + 1e-6);
    }
}
