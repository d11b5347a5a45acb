//! AdamW with linear warmup and cosine decay.

use crate::model::Parameters;
use crate::scalar::Scalar;

/// Learning rate at a given step: linear warmup to `peak`, then cosine decay
/// to `peak * min_ratio` at `total` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
    pub min_ratio: f64,
}

impl Schedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.warmup > 0 && step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1);
        let progress = ((step - self.warmup.min(step)) as f64 / span as f64).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.peak * (self.min_ratio + (1.0 - self.min_ratio) * cosine)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.01, clip_norm: Some(1.0) }
    }
}

/// Decoupled-weight-decay Adam. Weight decay applies to matrices only;
/// norm gains and biases are left alone.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    decay: Vec<bool>,
    step: usize,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &Parameters<T>) -> Self {
        let mut m = Vec::new();
        let mut decay = Vec::new();
        params.visit(|_, shape, values| {
            m.push(vec![T::zero(); values.len()]);
            decay.push(shape.len() == 2);
        });
        Self { config, v: m.clone(), m, decay, step: 0 }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Applies one update with learning rate `lr`. Returns the gradient norm
    /// before clipping.
    pub fn update(&mut self, params: &mut Parameters<T>, grad: &Parameters<T>, lr: f64) -> f64 {
        let norm = grad.squared_norm().sqrt();
        let clip = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(lr / bc1);
        let inv_sqrt_bc2 = T::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = T::from_f64_lossy(c.eps);
        let clip = T::from_f64_lossy(clip);
        let shrink = T::from_f64_lossy(lr * c.weight_decay);

        let mut grads = Vec::with_capacity(self.m.len());
        grad.visit(|_, _, g| grads.push(g));
        for (i, p) in params.tensors_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], grads[i]);
            let decay = self.decay[i];
            for j in 0..p.len() {
                let gj = g[j] * clip;
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                if decay {
                    p[j] -= shrink * p[j];
                }
                p[j] -= step_size * m[j] / (v[j].sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmbeddingMode, ModelConfig};

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = Schedule { peak: 1.0, warmup: 10, total: 110, min_ratio: 0.0 };
        assert!((s.lr(0) - 0.1).abs() < 1e-12);
        assert!((s.lr(9) - 1.0).abs() < 1e-12);
        assert!((s.lr(10) - 1.0).abs() < 1e-12);
        assert!((s.lr(60) - 0.5).abs() < 1e-12);
        assert!(s.lr(110).abs() < 1e-12);
        assert!(s.lr(500).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let cfg = ModelConfig { num_layers: 1, vocab_size: 20, ..ModelConfig::desk(EmbeddingMode::Token) };
        let mut p = Parameters::<f32>::init(&cfg);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.add_scaled(&before, 1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        opt.update(&mut p, &g, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_each_weight_by_about_lr() {
        let cfg = ModelConfig { num_layers: 1, vocab_size: 20, ..ModelConfig::desk(EmbeddingMode::Token) };
        let mut p = Parameters::<f64>::init(&cfg);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.final_norm.fill(1e-3);
        let config = AdamWConfig { weight_decay: 0.0, clip_norm: None, ..Default::default() };
        let mut opt = AdamW::new(config, &p);
        opt.update(&mut p, &g, 0.01);
        for (a, b) in p.final_norm.iter().zip(before.final_norm.iter()) {
            assert!((b - a - 0.01).abs() < 1e-6);
        }
        assert_eq!(p.head, before.head);
    }
}
