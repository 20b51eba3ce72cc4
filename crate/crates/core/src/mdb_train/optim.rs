//! AdamW with linear warm-up followed by cosine annealing to zero.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of all steps spent warming up, in `[0, 1)`.
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWConfig {
    pub fn new(learning_rate: f64, weight_decay: f64, warmup_fraction: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            warmup_fraction,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// Completed update steps.
    pub step: usize,
    pub total_steps: usize,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, n_params: usize, total_steps: usize) -> Self {
        Self {
            config,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step: 0,
            total_steps,
        }
    }

    pub fn warmup_steps(&self) -> usize {
        (self.config.warmup_fraction * self.total_steps as f64).floor() as usize
    }

    /// Learning rate applied on update number `t` (1-based).
    pub fn lr_at(&self, t: usize) -> f64 {
        let lr = self.config.learning_rate;
        let warm = self.warmup_steps();
        if t <= warm {
            return lr * t as f64 / warm as f64;
        }
        let decay_len = self.total_steps.saturating_sub(warm);
        if decay_len == 0 {
            return lr;
        }
        let progress = ((t - warm) as f64 / decay_len as f64).min(1.0);
        0.5 * lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// One decoupled-weight-decay Adam update. Returns the learning rate used.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> f64 {
        assert_eq!(params.len(), self.first_moment.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient shape mismatch");
        self.step += 1;
        let t = self.step;
        let lr = self.lr_at(t);
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t as i32);
        let bc2 = 1.0 - c.beta2.powi(t as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * *p);
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_fixpoint() {
        let mut opt = OptimizerState::new(AdamWConfig::new(1e-2, 0.0, 0.1), 3, 100);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            opt.update(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn schedule_peaks_at_warmup_end_and_decays_to_zero() {
        let opt = OptimizerState::new(AdamWConfig::new(5e-6, 1e-2, 0.1), 1, 200);
        assert_eq!(opt.warmup_steps(), 20);
        assert_eq!(opt.lr_at(20), 5e-6);
        assert!((opt.lr_at(10) - 2.5e-6).abs() < 1e-20);
        assert!(opt.lr_at(200).abs() < 1e-20);
        let lrs: Vec<f64> = (20..=200).map(|t| opt.lr_at(t)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        // scripted trace: with g constant, m_hat = g and v_hat = g^2 exactly, so each
        // step moves by lr_t * g / (|g| + eps), i.e. monotonically against sign(g)
        let mut opt = OptimizerState::new(AdamWConfig::new(1e-2, 0.0, 0.2), 2, 50);
        let mut p = vec![0.0, 0.0];
        let mut prev = p.clone();
        let mut expected = [0.0f64, 0.0];
        for _ in 0..50 {
            let lr = opt.update(&mut p, &[0.3, -0.7]);
            expected[0] -= lr * 0.3 / (0.3 + 1e-8);
            expected[1] += lr * 0.7 / (0.7 + 1e-8);
            assert!(p[0] <= prev[0] && p[1] >= prev[1]);
            prev = p.clone();
        }
        assert!((p[0] - expected[0]).abs() < 1e-9);
        assert!((p[1] - expected[1]).abs() < 1e-9);
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let mut opt = OptimizerState::new(AdamWConfig::new(0.1, 0.5, 0.0), 1, 1000);
        let mut p = vec![2.0];
        let lr = opt.update(&mut p, &[0.0]);
        assert!(lr > 0.0999 && lr < 0.1);
        assert!((p[0] - (2.0 - lr * 0.5 * 2.0)).abs() < 1e-15);
    }
}
