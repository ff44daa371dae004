use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(3e-4)
    }
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// One update of every parameter in `params`. Gradients are read, not
    /// cleared.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some(missing) = params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::Gradient(format!(
                "parameter {:?} has no gradient",
                missing.name
            )));
        }
        if self.first_moment.is_empty() {
            self.first_moment = params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len() {
            return Err(Error::Gradient(
                "optimizer state was built for a different parameter set".into(),
            ));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);

        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let grad = params.grad(id).expect("checked above").data().to_vec();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let value = params.value_mut(id).data_mut();
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                value[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
