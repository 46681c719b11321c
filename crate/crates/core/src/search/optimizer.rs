//! Gradient-ascent updates on raw cores.

use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::tn::{CoreGrads, EdgeCore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    PlainGradient,
    AdaptiveMoments { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::AdaptiveMoments {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for the adaptive optimizer; empty for plain gradient.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

/// One ascent step `beta <- beta + lr * direction(grads)`.
pub fn update_step(
    cores: &mut [EdgeCore],
    grads: &CoreGrads,
    state: &mut OptimizerState,
    optimizer: &OptimizerKind,
    learning_rate: f64,
) -> Result<(), SearchError> {
    if grads.0.len() != cores.len()
        || grads
            .0
            .iter()
            .zip(cores.iter())
            .any(|(g, c)| g.len() != c.values().len())
    {
        return Err(SearchError::Shape);
    }
    match *optimizer {
        OptimizerKind::PlainGradient => {
            for (c, g) in cores.iter_mut().zip(&grads.0) {
                for (x, d) in c.values_mut().iter_mut().zip(g) {
                    *x += learning_rate * d;
                }
            }
            state.step += 1;
        }
        OptimizerKind::AdaptiveMoments { beta1, beta2, eps } => {
            if state.first.is_empty() {
                state.first = grads.0.iter().map(|g| vec![0.0; g.len()]).collect();
                state.second = state.first.clone();
            }
            state.step += 1;
            let bc1 = 1.0 - beta1.powi(state.step as i32);
            let bc2 = 1.0 - beta2.powi(state.step as i32);
            for (t, (c, g)) in cores.iter_mut().zip(&grads.0).enumerate() {
                let m = &mut state.first[t];
                let v = &mut state.second[t];
                for (k, x) in c.values_mut().iter_mut().enumerate() {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                    let m_hat = m[k] / bc1;
                    let v_hat = v[k] / bc2;
                    *x += learning_rate * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
