use super::Tensor;

/// Adam hyperparameters. The defaults are the usual β1 = 0.9, β2 = 0.999,
/// ε = 1e-8 with the fine-tuning learning rate 2e-5.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

/// Bias-corrected Adam over a fixed, ordered parameter list.
///
/// A parameter whose gradient is `None` at step time is skipped entirely:
/// its value, moments and step count stay untouched. This keeps an encoder
/// that did not take part in a batch frozen for that step.
pub struct Adam {
    config: AdamConfig,
    state: Vec<Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let state = params
            .iter()
            .map(|p| Moments {
                first: vec![0.0; p.numel()],
                second: vec![0.0; p.numel()],
                step: 0,
            })
            .collect();
        Adam { config, state }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// Number of updates applied to parameter `index` so far.
    pub fn steps_taken(&self, index: usize) -> u64 {
        self.state[index].step
    }

    /// Applies one update using the gradients currently stored on `params`,
    /// which must be the list this optimizer was built with.
    pub fn step(&mut self, params: &[Tensor]) {
        assert_eq!(params.len(), self.state.len(), "parameter list changed");
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for (param, st) in params.iter().zip(&mut self.state) {
            let Some(grad) = param.grad() else { continue };
            st.step += 1;
            let bc1 = 1.0 - beta1.powi(st.step as i32);
            let bc2 = 1.0 - beta2.powi(st.step as i32);
            param.update_data(|w| {
                for i in 0..w.len() {
                    st.first[i] = beta1 * st.first[i] + (1.0 - beta1) * grad[i];
                    st.second[i] = beta2 * st.second[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let m_hat = st.first[i] / bc1;
                    let v_hat = st.second[i] / bc2;
                    w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
    }

    pub fn zero_grad(params: &[Tensor]) {
        params.iter().for_each(Tensor::zero_grad);
    }
}
