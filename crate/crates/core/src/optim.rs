//! Minimal first-order optimizers shared by both retrievers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter optimizer state over one flat parameter vector. Lives for
/// the duration of a local training call.
pub struct OptimState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl OptimState {
    pub fn new(n_params: usize, optimizer: &Optimizer) -> Self {
        let (m, v) = match optimizer {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; n_params], vec![0.0; n_params]),
        };
        OptimState {
            first_moment: m,
            second_moment: v,
            step: 0,
        }
    }

    /// Advances the step counter; call once per minibatch before `apply`.
    pub fn tick(&mut self) {
        self.step += 1;
    }

    /// Updates `params[..]` in place from `grad`, where `offset` locates
    /// this segment inside the flat parameter vector.
    pub fn apply(
        &mut self,
        optimizer: &Optimizer,
        lr: f64,
        offset: usize,
        params: &mut [f64],
        grad: &[f64],
    ) {
        debug_assert_eq!(params.len(), grad.len());
        match *optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step.max(1) as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let m = &mut self.first_moment[offset..offset + params.len()];
                let v = &mut self.second_moment[offset..offset + params.len()];
                for i in 0..params.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}
