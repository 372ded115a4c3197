//! Note-level transcription metrics.
//!
//! Precision/recall/F1 at three tolerance tiers (onset; +offset; +offset and
//! velocity), note-duration accuracy, and recall breakdowns by pitch or note
//! length. Matching is exact maximum-cardinality bipartite matching via
//! augmenting paths — greedy matching undercounts on tie-heavy synthetic
//! data.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::codec::NoteEvent;

/// Matching tolerances. Defaults: onsets within ±50 ms; offsets within
/// ±50 ms or ±20% of the reference duration, whichever is larger; velocities
/// within ±10% of the reference after a global least-squares rescale of the
/// estimates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatchParams {
    pub onset_tol: f64,
    pub offset_ratio: f64,
    pub offset_min: f64,
    pub velocity_tol: f64,
    /// Fit a global scale to estimated velocities over onset-matched pairs
    /// before applying the tolerance (the cited evaluation convention).
    /// `false` compares raw velocities.
    pub scale_velocities: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            onset_tol: 0.05,
            offset_ratio: 0.2,
            offset_min: 0.05,
            velocity_tol: 0.1,
            scale_velocities: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Onset,
    WithOffset,
    WithOffsetVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(matched: usize, n_ref: usize, n_est: usize) -> Self {
        let precision = if n_est == 0 { 0.0 } else { matched as f64 / n_est as f64 };
        let recall = if n_ref == 0 { 0.0 } else { matched as f64 / n_ref as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

/// The full metric set for one (reference, estimate) pair.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct NoteMetrics {
    pub onset: Prf,
    pub with_offset: Prf,
    pub with_offset_velocity: Prf,
    /// Recall of correct offsets among notes with correct onsets:
    /// `R(with_offset) / R(onset)`, 0 when the onset recall is 0.
    pub duration_accuracy: f64,
    pub n_ref: usize,
    pub n_est: usize,
    pub matched_onset: usize,
    pub matched_offset: usize,
    pub matched_velocity: usize,
}

fn onset_ok(r: &NoteEvent, e: &NoteEvent, p: &MatchParams) -> bool {
    r.pitch == e.pitch && (r.onset - e.onset).abs() <= p.onset_tol
}

fn offset_ok(r: &NoteEvent, e: &NoteEvent, p: &MatchParams) -> bool {
    let tol = p.offset_min.max(p.offset_ratio * r.duration());
    (r.offset - e.offset).abs() <= tol
}

fn velocity_ok(r: &NoteEvent, e: &NoteEvent, scale: f64, p: &MatchParams) -> bool {
    let rv = r.velocity as f64;
    let ev = e.velocity as f64 * scale;
    (ev - rv).abs() <= p.velocity_tol * rv
}

/// Maximum-cardinality matching (Kuhn's augmenting paths) over an adjacency
/// list from reference to estimate indices.
fn max_matching(adj: &[Vec<usize>], n_est: usize) -> Vec<(usize, usize)> {
    let mut est_owner = vec![usize::MAX; n_est];

    fn try_augment(
        r: usize,
        adj: &[Vec<usize>],
        visited: &mut [bool],
        est_owner: &mut [usize],
    ) -> bool {
        for &e in &adj[r] {
            if visited[e] {
                continue;
            }
            visited[e] = true;
            if est_owner[e] == usize::MAX
                || try_augment(est_owner[e], adj, visited, est_owner)
            {
                est_owner[e] = r;
                return true;
            }
        }
        false
    }

    for r in 0..adj.len() {
        let mut visited = vec![false; n_est];
        try_augment(r, adj, &mut visited, &mut est_owner);
    }
    let mut pairs: Vec<(usize, usize)> = est_owner
        .iter()
        .enumerate()
        .filter(|(_, &r)| r != usize::MAX)
        .map(|(e, &r)| (r, e))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Global least-squares velocity scale (slope through the origin) fitted on
/// onset-matched pairs.
fn velocity_scale(reference: &[NoteEvent], estimate: &[NoteEvent], params: &MatchParams) -> f64 {
    if !params.scale_velocities {
        return 1.0;
    }
    let pairs = match_notes(reference, estimate, params, Tier::Onset);
    let mut num = 0.0;
    let mut den = 0.0;
    for (r, e) in pairs {
        num += reference[r].velocity as f64 * estimate[e].velocity as f64;
        den += (estimate[e].velocity as f64).powi(2);
    }
    if den > 0.0 {
        num / den
    } else {
        1.0
    }
}

/// One-to-one maximum matching between reference and estimated notes at the
/// given tolerance tier. Returns (ref index, est index) pairs.
pub fn match_notes(
    reference: &[NoteEvent],
    estimate: &[NoteEvent],
    params: &MatchParams,
    tier: Tier,
) -> Vec<(usize, usize)> {
    let scale = if tier == Tier::WithOffsetVelocity {
        velocity_scale(reference, estimate, params)
    } else {
        1.0
    };
    let adj: Vec<Vec<usize>> = reference
        .iter()
        .map(|r| {
            estimate
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    onset_ok(r, e, params)
                        && (tier == Tier::Onset || offset_ok(r, e, params))
                        && (tier != Tier::WithOffsetVelocity || velocity_ok(r, e, scale, params))
                })
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    max_matching(&adj, estimate.len())
}

/// All tiers plus duration accuracy for one piece.
pub fn compute_metrics(reference: &[NoteEvent], estimate: &[NoteEvent], params: &MatchParams) -> NoteMetrics {
    let m_on = match_notes(reference, estimate, params, Tier::Onset).len();
    let m_off = match_notes(reference, estimate, params, Tier::WithOffset).len();
    let m_vel = match_notes(reference, estimate, params, Tier::WithOffsetVelocity).len();
    let onset = Prf::from_counts(m_on, reference.len(), estimate.len());
    let with_offset = Prf::from_counts(m_off, reference.len(), estimate.len());
    let with_offset_velocity = Prf::from_counts(m_vel, reference.len(), estimate.len());
    let duration_accuracy =
        if onset.recall > 0.0 { with_offset.recall / onset.recall } else { 0.0 };
    NoteMetrics {
        onset,
        with_offset,
        with_offset_velocity,
        duration_accuracy,
        n_ref: reference.len(),
        n_est: estimate.len(),
        matched_onset: m_on,
        matched_offset: m_off,
        matched_velocity: m_vel,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakdownAxis {
    Pitch,
    Length,
}

/// Recall for the reference notes falling in one bucket.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketRecall {
    /// MIDI pitch for the pitch axis; bucket lower edge in seconds for the
    /// length axis.
    pub label: f64,
    pub n_ref: usize,
    pub onset_matched: usize,
    pub offset_matched: usize,
}

impl BucketRecall {
    pub fn onset_recall(&self) -> f64 {
        if self.n_ref == 0 { 0.0 } else { self.onset_matched as f64 / self.n_ref as f64 }
    }

    pub fn offset_recall(&self) -> f64 {
        if self.n_ref == 0 { 0.0 } else { self.offset_matched as f64 / self.n_ref as f64 }
    }
}

pub const LENGTH_BUCKETS: usize = 8;
pub const LENGTH_LO: f64 = 0.1;
pub const LENGTH_HI: f64 = 8.0;

/// Lower edge of length bucket `i` (log-spaced over `[0.1, 8]`).
pub fn length_bucket_edge(i: usize) -> f64 {
    use num_traits::Float;
    LENGTH_LO * (LENGTH_HI / LENGTH_LO).powf(i as f64 / LENGTH_BUCKETS as f64)
}

fn length_bucket(d: f64) -> usize {
    use num_traits::Float;
    if d <= LENGTH_LO {
        return 0;
    }
    if d >= LENGTH_HI {
        return LENGTH_BUCKETS - 1;
    }
    let x = (d / LENGTH_LO).ln() / (LENGTH_HI / LENGTH_LO).ln() * LENGTH_BUCKETS as f64;
    (x as usize).min(LENGTH_BUCKETS - 1)
}

/// Per-bucket onset and with-offset recall along the chosen axis.
pub fn breakdown(
    reference: &[NoteEvent],
    estimate: &[NoteEvent],
    params: &MatchParams,
    axis: BreakdownAxis,
) -> Vec<BucketRecall> {
    let n_buckets = match axis {
        BreakdownAxis::Pitch => crate::codec::NUM_PITCHES,
        BreakdownAxis::Length => LENGTH_BUCKETS,
    };
    let mut out: Vec<BucketRecall> = (0..n_buckets)
        .map(|i| BucketRecall {
            label: match axis {
                BreakdownAxis::Pitch => (crate::codec::PITCH_MIN as usize + i) as f64,
                BreakdownAxis::Length => length_bucket_edge(i),
            },
            n_ref: 0,
            onset_matched: 0,
            offset_matched: 0,
        })
        .collect();
    let bucket_of = |n: &NoteEvent| match axis {
        BreakdownAxis::Pitch => crate::codec::pitch_index(n.pitch),
        BreakdownAxis::Length => length_bucket(n.duration()),
    };
    for n in reference {
        out[bucket_of(n)].n_ref += 1;
    }
    for (r, _) in match_notes(reference, estimate, params, Tier::Onset) {
        out[bucket_of(&reference[r])].onset_matched += 1;
    }
    for (r, _) in match_notes(reference, estimate, params, Tier::WithOffset) {
        out[bucket_of(&reference[r])].offset_matched += 1;
    }
    out
}
