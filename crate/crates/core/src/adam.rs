//! Adam with bias correction.

use crate::tensor::Tensor;
use crate::{Error, Result, TensorMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    /// QR-DQN-lineage defaults; desk-scale configs usually raise the
    /// learning rate.
    fn default() -> Self {
        AdamHyper {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 0.01 / 32.0,
        }
    }
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            ..AdamHyper::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("adam epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    step: u64,
    first_moment: TensorMap,
    second_moment: TensorMap,
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            step: 0,
            first_moment: TensorMap::new(),
            second_moment: TensorMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update. Parameters without a matching gradient entry are treated
/// as having zero gradient. Deterministic: identical inputs and state give
/// identical results.
pub fn adam_step(params: &mut TensorMap, grads: &TensorMap, state: &mut AdamState) -> Result<()> {
    state.hyper.validate()?;
    for (name, grad) in grads {
        match params.get(name) {
            Some(p) if p.shape() == grad.shape() => {}
            Some(p) => {
                return Err(Error::ShapeMismatch {
                    node: 0,
                    op: "adam_step",
                    detail: format!(
                        "gradient shape {:?} does not match parameter `{name}` shape {:?}",
                        grad.shape(),
                        p.shape()
                    ),
                })
            }
            None => {
                return Err(Error::UnboundSlot { name: name.clone() });
            }
        }
    }

    state.step += 1;
    let t = state.step;
    let h = state.hyper;
    let bias1 = 1.0 - h.beta1.powi(t as i32);
    let bias2 = 1.0 - h.beta2.powi(t as i32);

    for (name, p) in params.iter_mut() {
        let zero = Tensor::zeros(p.shape().to_vec());
        let g = grads.get(name).unwrap_or(&zero);
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        for i in 0..p.numel() {
            let gi = g.data()[i];
            let mi = h.beta1 * m.data()[i] + (1.0 - h.beta1) * gi;
            let vi = h.beta2 * v.data()[i] + (1.0 - h.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            p.data_mut()[i] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
        }
    }
    Ok(())
}
