//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: i32,
}

impl Adam {
    /// One moment pair per parameter array, shaped like `shapes`.
    pub fn new(cfg: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            cfg,
            m: shapes.iter().map(|&s| Mat::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Mat::zeros(s)).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Updates `params[i]` in place using `grads[i]`.
    pub fn step(&mut self, params: &mut [&mut Mat], grads: &[&Mat]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.cfg;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(&mut **p)
                .and(*g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias correction makes the first step exactly lr * sign(g) (up to eps)
        let mut p = array![[1.0, -2.0]];
        let g = array![[0.3, -40.0]];
        let mut opt = Adam::new(AdamConfig::default(), &[(1, 2)]);
        opt.step(&mut [&mut p], &[&g]);
        assert!((p[[0, 0]] - (1.0 - 1e-3)).abs() < 1e-10);
        assert!((p[[0, 1]] - (-2.0 + 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = array![[5.0]];
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
            &[(1, 1)],
        );
        for _ in 0..2000 {
            let g = p.mapv(|x| 2.0 * (x - 1.5));
            opt.step(&mut [&mut p], &[&g]);
        }
        assert!((p[[0, 0]] - 1.5).abs() < 1e-3);
    }
}
