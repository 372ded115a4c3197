//! Iterative radix-2 FFT, power-of-two sizes only.
//!
//! Hand-rolled so the frontend stays dependency-free and bit-deterministic
//! across the batch and streaming paths (both call exactly this code).

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

pub struct Fft {
    n: usize,
    // twiddle[k] = exp(-2πi k / n) for k in 0..n/2
    tw_re: Vec<f32>,
    tw_im: Vec<f32>,
    rev: Vec<u32>,
}

impl Fft {
    /// `n` must be a power of two ≥ 2.
    pub fn new(n: usize) -> Self {
        assert!(n >= 2 && n.is_power_of_two(), "FFT size must be a power of two");
        let mut tw_re = vec![0.0f32; n / 2];
        let mut tw_im = vec![0.0f32; n / 2];
        for k in 0..n / 2 {
            let ang = -2.0 * core::f64::consts::PI * (k as f64) / (n as f64);
            tw_re[k] = ang.cos() as f32;
            tw_im[k] = ang.sin() as f32;
        }
        let bits = n.trailing_zeros();
        let rev = (0..n as u32).map(|i| i.reverse_bits() >> (32 - bits)).collect();
        Self { n, tw_re, tw_im, rev }
    }

    /// In-place complex FFT over split re/im buffers of length `n`.
    pub fn run(&self, re: &mut [f32], im: &mut [f32]) {
        let n = self.n;
        debug_assert_eq!(re.len(), n);
        debug_assert_eq!(im.len(), n);
        for i in 0..n {
            let j = self.rev[i] as usize;
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            let mut base = 0;
            while base < n {
                for j in 0..half {
                    let (wr, wi) = (self.tw_re[j * step], self.tw_im[j * step]);
                    let (a, b) = (base + j, base + j + half);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
                base += len;
            }
            len <<= 1;
        }
    }

    /// Power spectrum |X[k]|² for k = 0..=n/2 of a real signal.
    pub fn power_spectrum(&self, signal: &[f32], re: &mut [f32], im: &mut [f32], out: &mut [f32]) {
        let n = self.n;
        debug_assert_eq!(signal.len(), n);
        debug_assert_eq!(out.len(), n / 2 + 1);
        re.copy_from_slice(signal);
        im.fill(0.0);
        self.run(re, im);
        for (k, o) in out.iter_mut().enumerate() {
            *o = re[k] * re[k] + im[k] * im[k];
        }
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let ang = 2.0 * core::f64::consts::PI * (i as f64) / (n as f64);
            (0.5 - 0.5 * ang.cos()) as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Naive O(n²) DFT oracle in f64.
    fn dft_power(signal: &[f32]) -> Vec<f64> {
        let n = signal.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (t, &s) in signal.iter().enumerate() {
                    let ang = -2.0 * core::f64::consts::PI * (k * t) as f64 / n as f64;
                    re += s as f64 * ang.cos();
                    im += s as f64 * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let n = 64;
        let fft = Fft::new(n);
        let signal: Vec<f32> =
            (0..n).map(|i| (0.3 * i as f32).sin() + 0.5 * (1.1 * i as f32).cos()).collect();
        let (mut re, mut im) = (vec![0.0; n], vec![0.0; n]);
        let mut power = vec![0.0; n / 2 + 1];
        fft.power_spectrum(&signal, &mut re, &mut im, &mut power);
        let want = dft_power(&signal);
        for k in 0..=n / 2 {
            assert!(
                (power[k] as f64 - want[k]).abs() <= 1e-2 + 1e-4 * want[k],
                "bin {k}: {} vs {}",
                power[k],
                want[k]
            );
        }
    }

    #[test]
    fn pure_tone_peaks_at_its_bin() {
        let n = 256;
        let fft = Fft::new(n);
        let bin = 19;
        let signal: Vec<f32> = (0..n)
            .map(|i| (2.0 * core::f32::consts::PI * bin as f32 * i as f32 / n as f32).sin())
            .collect();
        let (mut re, mut im) = (vec![0.0; n], vec![0.0; n]);
        let mut power = vec![0.0; n / 2 + 1];
        fft.power_spectrum(&signal, &mut re, &mut im, &mut power);
        let argmax = power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, bin);
    }

    #[test]
    fn zeros_stay_exactly_zero() {
        let n = 128;
        let fft = Fft::new(n);
        let signal = vec![0.0f32; n];
        let (mut re, mut im) = (vec![0.0; n], vec![0.0; n]);
        let mut power = vec![0.0; n / 2 + 1];
        fft.power_spectrum(&signal, &mut re, &mut im, &mut power);
        assert!(power.iter().all(|&p| p == 0.0));
    }
}
