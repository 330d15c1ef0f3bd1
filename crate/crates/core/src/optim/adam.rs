use serde::{Deserialize, Serialize};

/// Adam moments over a flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// One bias-corrected update; `lr` gives the step size per coordinate.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: impl Fn(usize) -> f64, beta1: f64, beta2: f64, eps: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr(i) * mhat / (vhat.sqrt() + eps);
        }
    }

    /// Keeps the moments of retained blocks (`block` values each) in order.
    pub fn retain_blocks(&mut self, block: usize, keep: &[bool]) {
        let filter = |v: &Vec<f64>| -> Vec<f64> {
            v.chunks(block)
                .zip(keep)
                .filter(|(_, k)| **k)
                .flat_map(|(c, _)| c.iter().copied())
                .collect()
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }

    pub fn grow(&mut self, len: usize) {
        self.m.resize(len, 0.0);
        self.v.resize(len, 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = AdamState::new(2);
        let mut p = [1.0, -1.0];
        s.update(&mut p, &[3.0, -0.5], |_| 0.1, 0.9, 0.999, 0.0);
        assert!((p[0] - 0.9).abs() < 1e-12 && (p[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut s = AdamState::new(1);
        let mut p = [5.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            s.update(&mut p, &g, |_| 0.05, 0.9, 0.999, 1e-8);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }
}
