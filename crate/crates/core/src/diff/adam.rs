use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state for one named parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    group: String,
    config: AdamConfig,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step_count: u64,
}

impl Adam {
    pub fn new<'a>(
        group: impl Into<String>,
        params: impl IntoIterator<Item = &'a Tensor>,
        config: AdamConfig,
    ) -> Self {
        let zeros: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            group: group.into(),
            config,
            second_moment: zeros.clone(),
            first_moment: zeros,
            step_count: 0,
        }
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update. Nothing is modified when any gradient
    /// is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<(), DiffError> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(DiffError::GroupSize {
                group: self.group.clone(),
                params: params.len(),
                grads: grads.len(),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(DiffError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(DiffError::NonFiniteGradient {
                group: self.group.clone(),
            });
        }
        self.step_count += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.5, -2.0]);
        let mut adam = Adam::new("g", [&p], AdamConfig::default());
        adam.step(&mut [&mut p], &[Tensor::zeros(&[2])], 0.1).unwrap();
        assert_eq!(p.data(), &[1.5, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = Adam::new("g", [&p], AdamConfig::default());
        adam.step(&mut [&mut p], &[Tensor::scalar(1.0)], 0.1).unwrap();
        // m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps)
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15);
        assert!((p.item() + 0.1).abs() < 1e-8);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = Tensor::vector(vec![0.25, 4.0]);
        let before = p.clone();
        let mut adam = Adam::new("g", [&p], AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Tensor::vector(vec![3.0, -1.0])], 0.0).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut p = Tensor::vector(vec![1.0]);
        let mut adam = Adam::new("policy", [&p], AdamConfig::default());
        let err = adam
            .step(&mut [&mut p], &[Tensor::vector(vec![f64::NAN])], 0.1)
            .unwrap_err();
        assert_eq!(err, DiffError::NonFiniteGradient { group: "policy".into() });
        assert_eq!(p.data(), &[1.0]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn deterministic_runs_are_bitwise_equal() {
        let run = || {
            let mut p = Tensor::vector(vec![0.3, -0.7, 1.1]);
            let mut adam = Adam::new("g", [&p], AdamConfig::default());
            for i in 0..50 {
                let g = p.map(|x| 2.0 * x + (i as f64).sin());
                adam.step(&mut [&mut p], &[g], 0.01).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
