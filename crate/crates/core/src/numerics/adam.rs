use super::{Gradients, NumericsError, ParamStore, Tensor};

/// Adam with bias correction. First and second moments live here, keyed like
/// the parameters they track.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: ParamStore,
    second: ParamStore,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: ParamStore::new(),
            second: ParamStore::new(),
        }
    }

    /// Rebuilds an optimizer from persisted moments.
    pub fn from_state(lr: f64, step: u64, first: ParamStore, second: ParamStore) -> Self {
        Self {
            step,
            first,
            second,
            ..Self::new(lr)
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &ParamStore {
        &self.first
    }

    pub fn second_moments(&self) -> &ParamStore {
        &self.second
    }

    /// One update. Non-finite gradients abort before any parameter changes.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<(), NumericsError> {
        grads.check_parity(params)?;
        if let Some(name) = grads.first_non_finite() {
            return Err(NumericsError::NonFinite(name.to_string()));
        }
        if self.first.is_empty() {
            for (name, p) in params.iter() {
                self.first.insert(name, Tensor::zeros(p.shape()))?;
                self.second.insert(name, Tensor::zeros(p.shape()))?;
            }
        } else {
            params.check_compatible(&self.first)?;
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);

        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("parity checked");
            let m = self.first.get_mut(name).expect("moments initialised");
            let v = self.second.get_mut(name).expect("moments initialised");
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
