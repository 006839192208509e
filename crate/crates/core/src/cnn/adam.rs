use ndarray::{ArrayD, Zip};

use super::model::ModelParams;
use crate::scalar::{lit, Real};

/// Adam with bias correction; skips non-trainable entries.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ModelParams<T>, learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<ArrayD<T>> = params.entries.iter().map(|e| ArrayD::zeros(e.value.raw_dim())).collect();
        Self { learning_rate, beta1, beta2, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &[ArrayD<T>]) {
        self.step += 1;
        let (b1, b2) = (lit::<T>(self.beta1), lit::<T>(self.beta2));
        let c1 = lit::<T>(1.0 - self.beta1.powi(self.step));
        let c2 = lit::<T>(1.0 - self.beta2.powi(self.step));
        let lr = lit::<T>(self.learning_rate);
        let eps = lit::<T>(self.eps);
        for (i, entry) in params.entries.iter_mut().enumerate() {
            if !entry.trainable {
                continue;
            }
            Zip::from(&mut entry.value)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(&grads[i])
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}
