//! Adagrad ascent with a persistent squared-gradient accumulator.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adagrad {
    pub learning_rate: f64,
    pub eps: f64,
    accum: Vec<f64>,
}

impl Adagrad {
    pub fn new(n_params: usize, learning_rate: f64, eps: f64) -> Self {
        Self { learning_rate, eps, accum: vec![0.0; n_params] }
    }

    /// Move `params` along `grad` (ascent).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, g), acc) in params.iter_mut().zip(grad).zip(&mut self.accum) {
            *acc += g * g;
            *p += self.learning_rate * g / (acc.sqrt() + self.eps);
        }
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accum
    }

    /// Resume from a saved accumulator of the same length.
    pub fn set_accumulator(&mut self, accum: &[f64]) {
        self.accum.copy_from_slice(accum);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut opt = Adagrad::new(3, 0.1, 1e-8);
        let mut p = vec![0.5, -1.0, 2.0];
        opt.step(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_has_learning_rate_size() {
        let mut opt = Adagrad::new(2, 0.1, 1e-8);
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.1).abs() < 1e-8 && (p[1] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn climbs_concave_quadratic() {
        let mut opt = Adagrad::new(1, 0.5, 1e-8);
        let mut p = vec![0.0];
        for _ in 0..2000 {
            let g = -2.0 * (p[0] - 1.5);
            opt.step(&mut p, &[g]);
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }
}
