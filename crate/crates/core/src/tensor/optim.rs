use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::tensor::{Scalar, Tensor};

/// Bias-corrected Adam.
///
/// Moment buffers are keyed by parameter name so the update is independent
/// of visit order.
pub struct Adam<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Advance the shared step counter; call once per optimizer step, before
    /// the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor<T>, grad: &Tensor<T>) {
        debug_assert!(self.t > 0, "begin_step before update");
        debug_assert_eq!(param.shape(), grad.shape());
        let n = param.numel();
        let (m, v) = self
            .moments
            .entry(String::from(name))
            .or_insert_with(|| (alloc::vec![T::zero(); n], alloc::vec![T::zero(); n]));
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for i in 0..n {
            let g = grad.data()[i];
            m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            let p = &mut param.data_mut()[i];
            *p = *p - self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut adam = Adam::new(0.0f64);
        let mut p = Tensor::from_fn(&[3], |i| i as f64);
        let orig = p.clone();
        for _ in 0..5 {
            adam.begin_step();
            adam.update("p", &mut p, &Tensor::filled(&[3], 1.0));
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // with bias correction the first update magnitude is ~lr for any
        // nonzero gradient
        let mut adam = Adam::new(0.01f64);
        let mut p = Tensor::filled(&[1], 1.0);
        adam.begin_step();
        adam.update("p", &mut p, &Tensor::filled(&[1], 7.3));
        assert!((p.item() - (1.0 - 0.01)).abs() < 1e-6);
    }

    #[test]
    fn matches_scalar_reference_over_steps() {
        let (b1, b2, eps, lr) = (0.9f64, 0.999, 1e-8, 0.05);
        let mut adam = Adam::new(lr);
        let mut p = Tensor::filled(&[1], 0.5);
        let mut refp = 0.5;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=20 {
            let g = (t as f64 * 0.37).sin();
            adam.begin_step();
            adam.update("x", &mut p, &Tensor::filled(&[1], g));
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            refp -= lr * mhat / (vhat.sqrt() + eps);
            assert!((p.item() - refp).abs() < 1e-12);
        }
    }
}
