//! Conversion between note events and per-frame five-state rolls.
//!
//! Each of the 88 piano keys is, per 32 ms frame, in exactly one of five
//! states: off, onset, sustain, re-onset, offset. A note is audible on
//! frames `[onset_frame, offset_frame)`; the offset frame is the first
//! non-sounding frame. Alongside the states the roll carries the
//! autoregressive context channels: running note duration (frames since
//! onset, counting through the offset frame, clamped at 156 ≈ 5 s) and the
//! sounding note's velocity scaled to `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Lowest piano key (A0).
pub const PITCH_MIN: u8 = 21;
/// Highest piano key (C8).
pub const PITCH_MAX: u8 = 108;
pub const NUM_PITCHES: usize = 88;
/// Duration context clamp in frames (≈5 s at 31.25 fps).
pub const DURATION_CLAMP: u16 = 156;
/// Sustain-pedal control value at or above which the pedal counts as pressed.
pub const PEDAL_THRESHOLD: u8 = 64;

/// Guard (in frame units, ~1e-9 s scale) against double rounding when times
/// land exactly on frame boundaries.
const FRAME_QUANT_GUARD: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("pitch {0} outside piano range 21..=108")]
    BadPitch(u8),
    #[error("velocity {0} outside 1..=127")]
    BadVelocity(u8),
    #[error("offset must be greater than onset")]
    BadTimes,
}

/// A played note: the decoded output unit and the ground-truth unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset: f64,
    pub offset: f64,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset: f64, offset: f64, velocity: u8) -> Result<Self, CodecError> {
        if !(PITCH_MIN..=PITCH_MAX).contains(&pitch) {
            return Err(CodecError::BadPitch(pitch));
        }
        if velocity == 0 || velocity > 127 {
            return Err(CodecError::BadVelocity(velocity));
        }
        if !(offset > onset && onset >= 0.0) {
            return Err(CodecError::BadTimes);
        }
        Ok(Self { pitch, onset, offset, velocity })
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// Sustain-pedal (CC64) sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedalEvent {
    pub time: f64,
    pub value: u8,
}

/// Per-frame note state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[repr(u8)]
pub enum NoteState {
    #[default]
    Off = 0,
    Onset = 1,
    Sustain = 2,
    Reonset = 3,
    Offset = 4,
}

impl NoteState {
    pub const COUNT: usize = 5;
    pub const ALL: [NoteState; 5] =
        [NoteState::Off, NoteState::Onset, NoteState::Sustain, NoteState::Reonset, NoteState::Offset];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> NoteState {
        Self::ALL[i]
    }

    /// Does this state start a note?
    pub fn is_attack(self) -> bool {
        matches!(self, NoteState::Onset | NoteState::Reonset)
    }
}

pub fn pitch_index(pitch: u8) -> usize {
    debug_assert!((PITCH_MIN..=PITCH_MAX).contains(&pitch));
    (pitch - PITCH_MIN) as usize
}

pub fn index_pitch(index: usize) -> u8 {
    debug_assert!(index < NUM_PITCHES);
    PITCH_MIN + index as u8
}

/// Frame that contains an onset at `time`.
pub fn onset_frame(time: f64, fps: f64) -> usize {
    let x = time * fps + FRAME_QUANT_GUARD;
    if x <= 0.0 {
        0
    } else {
        x as usize
    }
}

/// Frame that contains an offset at `time`: a note ending exactly on a frame
/// boundary belongs to the frame before it.
pub fn offset_frame(time: f64, fps: f64) -> usize {
    let x = time * fps - FRAME_QUANT_GUARD;
    if x <= 0.0 {
        0
    } else {
        let c = num_traits::Float::ceil(x);
        (c as usize).saturating_sub(1)
    }
}

/// Per-frame, per-pitch labels plus autoregressive context channels.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRoll {
    pub n_frames: usize,
    states: Vec<NoteState>,
    duration: Vec<u16>,
    velocity: Vec<f32>,
}

impl StateRoll {
    pub fn empty(n_frames: usize) -> Self {
        Self {
            n_frames,
            states: vec![NoteState::Off; n_frames * NUM_PITCHES],
            duration: vec![0; n_frames * NUM_PITCHES],
            velocity: vec![0.0; n_frames * NUM_PITCHES],
        }
    }

    fn idx(&self, frame: usize, pitch_idx: usize) -> usize {
        debug_assert!(frame < self.n_frames && pitch_idx < NUM_PITCHES);
        frame * NUM_PITCHES + pitch_idx
    }

    pub fn state(&self, frame: usize, pitch_idx: usize) -> NoteState {
        self.states[self.idx(frame, pitch_idx)]
    }

    /// Frames since the sounding note's onset, 1-based, clamped; 0 when off.
    pub fn duration_ctx(&self, frame: usize, pitch_idx: usize) -> u16 {
        self.duration[self.idx(frame, pitch_idx)]
    }

    /// Sounding note's velocity in `[0, 1]`; 0 when off.
    pub fn velocity_ctx(&self, frame: usize, pitch_idx: usize) -> f32 {
        self.velocity[self.idx(frame, pitch_idx)]
    }

    pub fn onset_mask(&self, frame: usize, pitch_idx: usize) -> bool {
        self.state(frame, pitch_idx).is_attack()
    }

    /// Class indices for one frame, all 88 pitches.
    pub fn frame_states(&self, frame: usize) -> &[NoteState] {
        &self.states[frame * NUM_PITCHES..(frame + 1) * NUM_PITCHES]
    }
}

/// Extend note offsets while the sustain pedal is held.
///
/// A note whose offset falls while the pedal is at or above `threshold`
/// rings until the first pedal drop below the threshold, truncated at the
/// next onset of the same pitch and at `audio_end`. Offsets never shrink.
pub fn elongate_with_pedal(
    notes: &[NoteEvent],
    pedals: &[PedalEvent],
    threshold: u8,
    audio_end: f64,
) -> Vec<NoteEvent> {
    let mut pedals: Vec<PedalEvent> = pedals.to_vec();
    pedals.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());

    let pedal_value_at = |t: f64| -> u8 {
        let mut v = 0u8;
        for p in &pedals {
            if p.time <= t {
                v = p.value;
            } else {
                break;
            }
        }
        v
    };
    let release_after = |t: f64| -> Option<f64> {
        pedals.iter().find(|p| p.time > t && p.value < threshold).map(|p| p.time)
    };

    let mut out = notes.to_vec();
    for i in 0..out.len() {
        let note = out[i];
        if pedal_value_at(note.offset) < threshold {
            continue;
        }
        let mut candidate = release_after(note.offset).unwrap_or(audio_end);
        // truncate at the next strike of the same pitch
        let next_onset = notes
            .iter()
            .filter(|n| n.pitch == note.pitch && n.onset > note.onset)
            .map(|n| n.onset)
            .fold(f64::INFINITY, f64::min);
        candidate = candidate.min(next_onset).min(audio_end);
        out[i].offset = note.offset.max(candidate);
    }
    out.sort_by(|a, b| {
        (a.onset, a.pitch, a.offset)
            .partial_cmp(&(b.onset, b.pitch, b.offset))
            .unwrap()
    });
    out
}

/// Rasterize pedal-elongated notes into a state roll.
pub fn encode(notes: &[NoteEvent], n_frames: usize, fps: f64) -> StateRoll {
    let mut roll = StateRoll::empty(n_frames);
    // velocity written at attack frames, picked up by the context scan
    let mut attack_vel = vec![0.0f32; n_frames * NUM_PITCHES];

    let mut by_pitch: Vec<Vec<&NoteEvent>> = vec![Vec::new(); NUM_PITCHES];
    for n in notes {
        by_pitch[pitch_index(n.pitch)].push(n);
    }
    for (p, list) in by_pitch.iter_mut().enumerate() {
        list.sort_by(|a, b| a.onset.partial_cmp(&b.onset).unwrap());
        for note in list.iter() {
            let a = onset_frame(note.onset, fps);
            if a >= n_frames {
                continue;
            }
            let mut b = offset_frame(note.offset, fps);
            if b <= a {
                // sub-frame note: one onset frame, offset on the next
                b = a + 1;
            }
            let idx = roll.idx(a, p);
            let attack = if roll.states[idx] == NoteState::Off || roll.states[idx] == NoteState::Offset {
                NoteState::Onset
            } else {
                // previous note still sounding at this frame
                NoteState::Reonset
            };
            roll.states[idx] = attack;
            attack_vel[idx] = note.velocity as f32 / 127.0;
            for t in a + 1..b.min(n_frames) {
                roll.states[roll.idx(t, p)] = NoteState::Sustain;
            }
            if b < n_frames {
                roll.states[roll.idx(b, p)] = NoteState::Offset;
            }
        }
    }

    // context channels
    for p in 0..NUM_PITCHES {
        let mut dur = 0u32;
        let mut vel = 0.0f32;
        for t in 0..n_frames {
            let idx = roll.idx(t, p);
            let mut reset_after = false;
            match roll.states[idx] {
                NoteState::Onset | NoteState::Reonset => {
                    dur = 1;
                    vel = attack_vel[idx];
                }
                NoteState::Sustain => dur += 1,
                NoteState::Offset => {
                    // duration keeps counting through the offset frame
                    dur += 1;
                    reset_after = true;
                }
                NoteState::Off => {
                    dur = 0;
                    vel = 0.0;
                }
            }
            roll.duration[idx] = (dur.min(DURATION_CLAMP as u32)) as u16;
            roll.velocity[idx] = if dur > 0 { vel } else { 0.0 };
            if reset_after {
                dur = 0;
                vel = 0.0;
            }
        }
    }
    roll
}

/// Incremental rule-based note decoder for one pitch; shared by the offline
/// decode and the streaming session so both emit identical notes.
#[derive(Debug, Clone, Default)]
pub struct PitchDecoder {
    open: Option<(usize, f32)>, // (onset frame, velocity prediction at onset)
}

/// A decoded note in frame units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramedNote {
    pub pitch_idx: usize,
    pub onset_frame: usize,
    pub offset_frame: usize,
    pub velocity: u8,
}

pub fn velocity_to_midi(pred: f32) -> u8 {
    let v = num_traits::Float::round(127.0 * pred) as i32;
    v.clamp(1, 127) as u8
}

impl PitchDecoder {
    /// Advance one frame; at most one note can close and one open.
    pub fn step(
        &mut self,
        pitch_idx: usize,
        frame: usize,
        state: NoteState,
        velocity_pred: f32,
        out: &mut Vec<FramedNote>,
    ) {
        let close = |open: &mut Option<(usize, f32)>, out: &mut Vec<FramedNote>| {
            if let Some((onset, vel)) = open.take() {
                if frame > onset {
                    out.push(FramedNote {
                        pitch_idx,
                        onset_frame: onset,
                        offset_frame: frame,
                        velocity: velocity_to_midi(vel),
                    });
                }
            }
        };
        match state {
            NoteState::Onset | NoteState::Reonset => {
                close(&mut self.open, out);
                self.open = Some((frame, velocity_pred));
            }
            NoteState::Offset | NoteState::Off => close(&mut self.open, out),
            // sustain with no preceding onset is ignored
            NoteState::Sustain => {}
        }
    }

    /// Close a dangling note at the end of the sequence.
    pub fn finish(&mut self, pitch_idx: usize, n_frames: usize, out: &mut Vec<FramedNote>) {
        if let Some((onset, vel)) = self.open.take() {
            out.push(FramedNote {
                pitch_idx,
                onset_frame: onset,
                offset_frame: n_frames.max(onset + 1),
                velocity: velocity_to_midi(vel),
            });
        }
    }

    pub fn open_note(&self) -> Option<(usize, f32)> {
        self.open
    }
}

/// Rule-based decoding of per-frame state argmaxes into notes.
///
/// `states[t * 88 + p]` and `velocity_pred[t * 88 + p]` over `n_frames`
/// frames. Garbage sequences decode to best-effort notes.
pub fn decode(states: &[NoteState], velocity_pred: &[f32], n_frames: usize, fps: f64) -> Vec<NoteEvent> {
    debug_assert_eq!(states.len(), n_frames * NUM_PITCHES);
    debug_assert_eq!(velocity_pred.len(), n_frames * NUM_PITCHES);
    let mut framed = Vec::new();
    for p in 0..NUM_PITCHES {
        let mut dec = PitchDecoder::default();
        for t in 0..n_frames {
            dec.step(p, t, states[t * NUM_PITCHES + p], velocity_pred[t * NUM_PITCHES + p], &mut framed);
        }
        dec.finish(p, n_frames, &mut framed);
    }
    let mut notes: Vec<NoteEvent> = framed.iter().map(|f| framed_to_event(f, fps)).collect();
    notes.sort_by(|a, b| {
        (a.onset, a.pitch, a.offset)
            .partial_cmp(&(b.onset, b.pitch, b.offset))
            .unwrap()
    });
    notes
}

pub fn framed_to_event(f: &FramedNote, fps: f64) -> NoteEvent {
    NoteEvent {
        pitch: index_pitch(f.pitch_idx),
        onset: f.onset_frame as f64 / fps,
        offset: f.offset_frame as f64 / fps,
        velocity: f.velocity,
    }
}
