use serde::{Deserialize, Serialize};

use super::{ParamStore, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids() {
            if !store.is_frozen(id) && store.grad(id).is_none() {
                return Err(TensorError::MissingGrad(store.name(id).to_string()));
            }
        }
        if self.m.len() < store.len() {
            for id in store.ids().skip(self.m.len()) {
                let n = store.value(id).len();
                self.m.push(vec![0.0; n]);
                self.v.push(vec![0.0; n]);
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in store.ids() {
            if store.is_frozen(id) {
                continue;
            }
            let g = store.grad(id).unwrap().to_vec();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let w = store.value_mut(id).data_mut();
            for k in 0..w.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                w[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        store.clear_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Init, Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::vector(vec![v])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = scalar_store(0.7);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..3 {
            s.ensure_grads();
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.value(s.id("x").unwrap()).data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = lr · 1 / (1 + eps).
        let mut s = scalar_store(0.0);
        let id = s.id("x").unwrap();
        s.add_grad(id, &[1.0]);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        adam.step(&mut s).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.value(id).item() - expected).abs() < 1e-15);
        assert!(s.grad(id).is_none());
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let mut s = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default());
        assert_eq!(adam.step(&mut s), Err(TensorError::MissingGrad("x".into())));
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut s = ParamStore::new();
            let w = s.add("w", &[3, 3], Init::Uniform, &mut rng).unwrap();
            let mut adam = Adam::new(AdamConfig::default());
            for _ in 0..10 {
                let mut t = Tape::new();
                let wv = t.param(&s, w);
                let x = t.constant(Tensor::vector(vec![1.0, -2.0, 0.5])).unwrap();
                let y = t.matvec(wv, x).unwrap();
                let y = t.tanh(y).unwrap();
                let l = t.dot(y, y).unwrap();
                t.backward(l).unwrap().accumulate_into(&t, &mut s);
                adam.step(&mut s).unwrap();
            }
            s.value(w).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}
