//! Adam with bias correction, keyed by parameter name.

use std::collections::BTreeMap;

use super::{lit, AutodiffError, Float, Params};

struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

/// One parameter's exported moments. Checkpoints carry these so a resumed
/// run takes the exact same steps as an uninterrupted one.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

/// Optimizer state persists across steps per parameter name. Parameters
/// without a gradient in a given step are left untouched entirely: values,
/// moments, and step count. That makes freezing a parameter a pure no-op on
/// its bytes.
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, state: BTreeMap::new() }
    }

    /// One update over every parameter that has a gradient entry.
    /// `m_hat = m / (1 - b1^t)`, `v_hat = v / (1 - b2^t)`,
    /// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// An all-zero gradient decays that parameter's moments and changes
    /// nothing else; in particular no momentum carry-over moves the values.
    pub fn step(
        &mut self,
        params: &mut Params<T>,
        grads: &BTreeMap<String, Vec<T>>,
        lr: f64,
    ) -> Result<(), AutodiffError> {
        let b1 = lit::<T>(self.beta1);
        let b2 = lit::<T>(self.beta2);
        let one = T::one();
        let eps = lit::<T>(self.eps);
        let lr = lit::<T>(lr);
        for (name, grad) in grads {
            let p = params.get_mut(name)?;
            if p.numel() != grad.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    details: format!(
                        "parameter {name:?} has {} elements, gradient {}",
                        p.numel(),
                        grad.len()
                    ),
                });
            }
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![T::zero(); grad.len()],
                v: vec![T::zero(); grad.len()],
                t: 0,
            });
            if grad.iter().all(|g| *g == T::zero()) {
                for i in 0..grad.len() {
                    st.m[i] = b1 * st.m[i];
                    st.v[i] = b2 * st.v[i];
                }
                continue;
            }
            st.t += 1;
            let c1 = one - lit::<T>(self.beta1.powi(st.t as i32));
            let c2 = one - lit::<T>(self.beta2.powi(st.t as i32));
            let data = p.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                st.m[i] = b1 * st.m[i] + (one - b1) * g;
                st.v[i] = b2 * st.v[i] + (one - b2) * g * g;
                let m_hat = st.m[i] / c1;
                let v_hat = st.v[i] / c2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !data.iter().all(|v| v.is_finite()) {
                return Err(AutodiffError::NonFinite { op: "adam_step" });
            }
        }
        Ok(())
    }
}

impl<T: Float> Adam<T> {
    /// Snapshot of every parameter's moments.
    pub fn export_state(&self) -> BTreeMap<String, AdamState<T>> {
        self.state
            .iter()
            .map(|(k, s)| (k.clone(), AdamState { m: s.m.clone(), v: s.v.clone(), t: s.t }))
            .collect()
    }

    /// Replaces the moments wholesale, discarding any existing state.
    pub fn import_state(&mut self, state: BTreeMap<String, AdamState<T>>) {
        self.state = state
            .into_iter()
            .map(|(k, s)| (k, Moments { m: s.m, v: s.v, t: s.t }))
            .collect();
    }
}

impl<T: Float> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut params = Params::<f64>::new();
        params.insert("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap()).unwrap();
        let mut adam = Adam::new();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![1.0, 1.0]);
        adam.step(&mut params, &grads, 0.1).unwrap();
        let w = params.get("w").unwrap().data();
        // m_hat = v_hat = 1 at t=1, so the update is lr/(1+eps) ~= lr
        assert!((w[0] - (1.0 - 0.1)).abs() < 1e-8, "got {}", w[0]);
        assert!((w[1] - (-2.0 - 0.1)).abs() < 1e-8, "got {}", w[1]);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut params = Params::<f64>::new();
        params.insert("w", Tensor::new(vec![1], vec![5.0]).unwrap()).unwrap();
        let mut adam = Adam::new();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![1.0]);
        adam.step(&mut params, &grads, 0.1).unwrap();
        let after_first = params.get("w").unwrap().data()[0];
        // second step with zero grad: moments decay, m_hat = 0, update = 0
        grads.insert("w".to_string(), vec![0.0]);
        adam.step(&mut params, &grads, 0.1).unwrap();
        assert_eq!(params.get("w").unwrap().data()[0], after_first);
    }

    #[test]
    fn absent_gradient_is_a_pure_no_op() {
        let mut params = Params::<f32>::new();
        params.insert("a", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        params.insert("b", Tensor::new(vec![1], vec![2.0]).unwrap()).unwrap();
        let mut adam = Adam::new();
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), vec![0.5f32]);
        adam.step(&mut params, &grads, 0.01).unwrap();
        assert_eq!(params.get("b").unwrap().data()[0].to_bits(), 2.0f32.to_bits());
    }

    #[test]
    fn exported_state_resumes_bit_identically() {
        // two steps in one optimizer vs step, export, import into a fresh
        // optimizer, step: the parameter bytes must match exactly
        let g1 = vec![0.3f32, -0.7];
        let g2 = vec![-0.1f32, 0.4];
        let mut grads = BTreeMap::new();

        let mut p_full = Params::<f32>::new();
        p_full.insert("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let mut adam_full = Adam::new();
        grads.insert("w".to_string(), g1.clone());
        adam_full.step(&mut p_full, &grads, 0.05).unwrap();
        let mut p_resumed = p_full.clone();
        let saved = adam_full.export_state();
        grads.insert("w".to_string(), g2.clone());
        adam_full.step(&mut p_full, &grads, 0.05).unwrap();

        let mut adam_resumed = Adam::new();
        adam_resumed.import_state(saved);
        adam_resumed.step(&mut p_resumed, &grads, 0.05).unwrap();
        let want = p_full.get("w").unwrap().data();
        let got = p_resumed.get("w").unwrap().data();
        assert_eq!(
            want.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "FAIL: resumed optimizer must reproduce the uninterrupted step"
        );
    }
}
