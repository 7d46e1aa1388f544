//! Adam (and plain gradient descent) over a list of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// `θ ← θ − α·g`, the averaged-gradient step written without momentum.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators, one pair per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: OptimizerConfig,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: OptimizerConfig, params: &[&Tensor]) -> Self {
        let zeros = |p: &&Tensor| Tensor::zeros(p.shape());
        AdamState {
            config,
            first_moment: params.iter().map(zeros).collect(),
            second_moment: params.iter().map(zeros).collect(),
            step: 0,
        }
    }

    /// Apply one update. `grads[i] == None` marks a frozen (or unused)
    /// parameter: neither the value nor its moments change.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: vec![params.len(), self.first_moment.len()],
                rhs: vec![grads.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if let Some(g) = g {
                p.expect_same_shape(g, "adam_step")?;
                p.expect_same_shape(m, "adam_step")?;
            }
        }
        self.step += 1;
        let c = self.config;
        let lr = c.learning_rate;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    let Some(g) = g else { continue };
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - (c.beta1 as f64).powi(t);
                let bc2 = 1.0 - (c.beta2 as f64).powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let Some(g) = g else { continue };
                    let m = self.first_moment[i].data_mut();
                    let v = self.second_moment[i].data_mut();
                    for (((w, &d), mi), vi) in
                        p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v)
                    {
                        *mi = c.beta1 * *mi + (1.0 - c.beta1) * d;
                        *vi = c.beta2 * *vi + (1.0 - c.beta2) * d * d;
                        let m_hat = *mi as f64 / bc1;
                        let v_hat = *vi as f64 / bc2;
                        *w -= (lr as f64 * m_hat / (v_hat.sqrt() + c.epsilon as f64)) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = Tensor::from_fn(&[3], |i| i as f32 - 1.0);
        let before = w.clone();
        let mut st = AdamState::new(OptimizerConfig::default(), &[&w]);
        st.step(&mut [&mut w], &[Some(Tensor::zeros(&[3]))]).unwrap();
        assert_eq!(w, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = Tensor::scalar(0.0);
        let mut st = AdamState::new(OptimizerConfig::default(), &[&w]);
        st.step(&mut [&mut w], &[Some(Tensor::scalar(1.0))]).unwrap();
        assert!((w.item() + 2e-4).abs() < 1e-9, "{}", w.item());
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        let mut w = Tensor::scalar(1.0);
        let cfg = OptimizerConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut st = AdamState::new(cfg, &[&w]);
        let mut prev = w.item().powi(2);
        for _ in 0..10 {
            let g = Tensor::scalar(2.0 * w.item());
            st.step(&mut [&mut w], &[Some(g)]).unwrap();
            let f = w.item().powi(2);
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn frozen_entries_are_untouched() {
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::scalar(2.0);
        let mut st = AdamState::new(OptimizerConfig::default(), &[&a, &b]);
        st.step(&mut [&mut a, &mut b], &[Some(Tensor::scalar(1.0)), None])
            .unwrap();
        assert_eq!(b.item().to_bits(), 2.0f32.to_bits());
        assert_ne!(a.item(), 1.0);
        assert_eq!(st.second_moment[1].item(), 0.0);
    }

    #[test]
    fn mismatched_gradient_shape_is_rejected() {
        let mut a = Tensor::zeros(&[2]);
        let mut st = AdamState::new(OptimizerConfig::default(), &[&a]);
        let r = st.step(&mut [&mut a], &[Some(Tensor::zeros(&[3]))]);
        assert!(matches!(r, Err(Error::Shape { .. })));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn sgd_mode_is_plain_descent() {
        let mut w = Tensor::scalar(1.0);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut st = AdamState::new(cfg, &[&w]);
        st.step(&mut [&mut w], &[Some(Tensor::scalar(2.0))]).unwrap();
        assert!((w.item() - 0.8).abs() < 1e-7);
    }
}
