//! Triangular mel filterbank (HTK mel scale).

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::DspError;
use crate::tensor::Tensor;

/// HTK mel scale: `mel(f) = 2595 log10(1 + f / 700)`.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10.0f64.powf(m / 2595.0) - 1.0)
}

/// Dense filterbank matrix plus the sparse per-row form used at runtime.
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// Mel-bin center frequencies in Hz (the independent oracle table for
    /// the spectral-peak tests).
    pub centers_hz: Vec<f64>,
    /// Per row: first FFT bin with nonzero weight and the weights from there.
    rows: Vec<(usize, Vec<f32>)>,
}

impl MelFilterbank {
    /// Triangular filters with peaks equally spaced on the mel scale between
    /// `mel(f_min)` and `mel(f_max)`.
    ///
    /// `f_max` may exceed Nyquist (the standard piano range 27.5–8372 Hz does
    /// at 16 kHz); filters whose support lies entirely above the last FFT bin
    /// fall back to unit weight on the bin nearest their center so every row
    /// keeps at least one strictly positive entry.
    pub fn new(
        n_mels: usize,
        f_min: f64,
        f_max: f64,
        n_fft: usize,
        sample_rate: u32,
    ) -> Result<Self, DspError> {
        if n_mels == 0 || n_fft < 2 || n_fft % 2 != 0 {
            return Err(DspError::BadConfig("n_mels >= 1 and even n_fft >= 2 required"));
        }
        if !(f_min >= 0.0 && f_min < f_max) {
            return Err(DspError::BadConfig("need 0 <= f_min < f_max"));
        }
        if f_max > sample_rate as f64 {
            return Err(DspError::BadConfig("f_max exceeds the sample rate"));
        }
        let n_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let mel_lo = hz_to_mel(f_min);
        let mel_hi = hz_to_mel(f_max);
        // n_mels + 2 points; filter k peaks at point k+1
        let point = |i: usize| mel_lo + (mel_hi - mel_lo) * (i as f64) / ((n_mels + 1) as f64);
        let mut centers_hz = Vec::with_capacity(n_mels);
        let mut rows = Vec::with_capacity(n_mels);
        for k in 0..n_mels {
            let lo = mel_to_hz(point(k));
            let center = mel_to_hz(point(k + 1));
            let hi = mel_to_hz(point(k + 2));
            centers_hz.push(center);
            let mut weights = Vec::new();
            let mut start = 0usize;
            for bin in 0..n_bins {
                let f = bin as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= center {
                    (f - lo) / (center - lo)
                } else {
                    (hi - f) / (hi - center)
                };
                if w > 0.0 {
                    if weights.is_empty() {
                        start = bin;
                    }
                    weights.push(w as f32);
                } else if !weights.is_empty() {
                    break;
                }
            }
            if weights.is_empty() {
                // no bin falls strictly inside the triangle: pin to nearest
                start = ((center / bin_hz) + 0.5) as usize;
                start = start.min(n_bins - 1);
                weights.push(1.0);
            }
            rows.push((start, weights));
        }
        Ok(Self { n_mels, n_bins, centers_hz, rows })
    }

    /// Dense `[n_mels, n_bins]` matrix.
    pub fn matrix(&self) -> Tensor<f32> {
        let mut m = Tensor::zeros(&[self.n_mels, self.n_bins]);
        for (row, (start, ws)) in self.rows.iter().enumerate() {
            for (i, w) in ws.iter().enumerate() {
                m.data_mut()[row * self.n_bins + start + i] = *w;
            }
        }
        m
    }

    /// Apply to a power spectrum (`n_bins` values), writing `n_mels` energies.
    pub fn apply(&self, power: &[f32], out: &mut [f32]) {
        debug_assert_eq!(power.len(), self.n_bins);
        debug_assert_eq!(out.len(), self.n_mels);
        for (o, (start, ws)) in out.iter_mut().zip(self.rows.iter()) {
            let mut acc = 0.0f32;
            for (i, w) in ws.iter().enumerate() {
                acc += w * power[start + i];
            }
            *o = acc;
        }
    }

    /// Mel-bin index whose center frequency is nearest `hz`.
    pub fn nearest_center(&self, hz: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::infinity();
        for (i, c) in self.centers_hz.iter().enumerate() {
            let d = (c - hz).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }
}

/// Dense filterbank matrix of shape `[n_mels, n_fft/2 + 1]`.
pub fn build_mel_filterbank(
    n_mels: usize,
    f_min: f64,
    f_max: f64,
    n_fft: usize,
    sample_rate: u32,
) -> Result<Tensor<f32>, DspError> {
    Ok(MelFilterbank::new(n_mels, f_min, f_max, n_fft, sample_rate)?.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{F_MAX, F_MIN, N_FFT, N_MELS, SAMPLE_RATE};

    #[test]
    fn default_shape_is_700_by_2049() {
        let m = build_mel_filterbank(N_MELS, F_MIN, F_MAX, N_FFT, SAMPLE_RATE).unwrap();
        assert_eq!(m.shape(), &[700, 2049]);
    }

    #[test]
    fn all_entries_nonnegative_and_rows_nonempty() {
        let fb = MelFilterbank::new(N_MELS, F_MIN, F_MAX, N_FFT, SAMPLE_RATE).unwrap();
        let m = fb.matrix();
        assert!(m.data().iter().all(|&w| w >= 0.0));
        for row in 0..700 {
            let has_positive =
                m.data()[row * 2049..(row + 1) * 2049].iter().any(|&w| w > 0.0);
            assert!(has_positive, "row {row} has no positive entry");
        }
    }

    #[test]
    fn single_filter_peaks_between_its_edges() {
        let fb = MelFilterbank::new(1, 100.0, 200.0, 4096, 16000).unwrap();
        let m = fb.matrix();
        let bin_hz = 16000.0 / 4096.0;
        let (peak_bin, peak_w) = m
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, w)| (i, *w))
            .unwrap();
        assert!(peak_w > 0.0);
        let f = peak_bin as f64 * bin_hz;
        assert!(f > 100.0 && f < 200.0, "peak at {f} Hz");
        // outside the triangle all weights vanish
        for (bin, &w) in m.data().iter().enumerate() {
            let f = bin as f64 * bin_hz;
            if !(100.0..=200.0).contains(&f) {
                assert_eq!(w, 0.0);
            }
        }
    }

    #[test]
    fn row_peaks_are_nondecreasing_in_mel_index() {
        // independent peak scan over the dense default matrix
        let m = build_mel_filterbank(N_MELS, F_MIN, F_MAX, N_FFT, SAMPLE_RATE).unwrap();
        let mut prev_peak = 0usize;
        for row in 0..700 {
            let slice = &m.data()[row * 2049..(row + 1) * 2049];
            let mut peak = 0usize;
            let mut best = f32::NEG_INFINITY;
            for (i, &w) in slice.iter().enumerate() {
                if w > best {
                    best = w;
                    peak = i;
                }
            }
            assert!(peak >= prev_peak, "row {row}: peak {peak} < {prev_peak}");
            prev_peak = peak;
        }
    }

    #[test]
    fn every_in_range_bin_is_covered() {
        let fb = MelFilterbank::new(N_MELS, F_MIN, F_MAX, N_FFT, SAMPLE_RATE).unwrap();
        let m = fb.matrix();
        let bin_hz = 16000.0 / 4096.0;
        for bin in 0..2049 {
            let f = bin as f64 * bin_hz;
            if f >= F_MIN && f <= F_MAX.min(8000.0) {
                let covered = (0..700).any(|row| m.data()[row * 2049 + bin] > 0.0);
                assert!(covered, "bin {bin} ({f:.1} Hz) uncovered");
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(build_mel_filterbank(0, 27.5, 8372.0, 4096, 16000).is_err());
        assert!(build_mel_filterbank(10, 200.0, 100.0, 4096, 16000).is_err());
        assert!(build_mel_filterbank(10, 27.5, 20000.0, 4096, 16000).is_err());
    }

    #[test]
    fn mel_scale_round_trips() {
        for f in [27.5, 100.0, 440.0, 4186.0, 8372.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }
}
