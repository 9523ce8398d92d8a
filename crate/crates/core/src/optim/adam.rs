use super::OptimError;
use crate::atssnet::Parameter;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, params: &[Parameter]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
            step_count: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update in place. `grads[i]` must cover `params[i]`
    /// element for element.
    pub fn step(&mut self, params: &mut [Parameter], grads: &[Vec<f64>]) -> Result<(), OptimError> {
        if params.len() != self.first.len() {
            return Err(OptimError::ParameterCount {
                expected: self.first.len(),
                found: params.len(),
            });
        }
        for (index, p) in params.iter().enumerate() {
            if grads.get(index).map(Vec::len) != Some(p.value.len()) {
                return Err(OptimError::MissingGradient { name: p.name.clone() });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (k, x) in p.value.data_mut().iter_mut().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
