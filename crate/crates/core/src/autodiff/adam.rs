use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam over a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments sized after `params`.
    pub fn new(params: &[&Tensor], learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Applies one update using each tensor's stored gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::contract(format!(
                "adam state tracks {} tensors, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        let mut grads = Vec::with_capacity(params.len());
        for p in params.iter() {
            let g = p
                .grad()
                .ok_or_else(|| Error::contract("adam step on a tensor without a gradient"))?;
            grads.push(g.to_vec());
        }
        let mut values: Vec<&mut [f64]> = params.iter_mut().map(|p| p.data_mut()).collect();
        adam_step(&mut values, &grads, self)
    }
}

/// Bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::contract(format!(
            "adam expects {} tensors, got {} params and {} grads",
            state.first_moment.len(),
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[i].len() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: vec![p.len()],
                rhs: vec![g.len()],
            });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
