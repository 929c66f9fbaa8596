use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros = |s: &ParamStore| {
            s.iter()
                .map(|(_, p)| Tensor::zeros(p.tensor.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(store),
            v: zeros(store),
            trainable: vec![true; store.len()],
        }
    }

    pub fn freeze(&mut self, id: ParamId) {
        self.trainable[id.0] = false;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    /// Applies one update from the accumulated `grad` buffers in `store`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Invalid("optimizer state does not match store".into()));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            if !self.trainable[id.0] {
                continue;
            }
            let p = store.get_mut(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let w = p.tensor.data_mut();
            for (((w, g), m), v) in w
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new(0);
        let p = store.add("p", &[1, 2], Init::Const(1.0)).unwrap();
        store.get_mut(p).grad = Tensor::matrix(1, 2, vec![0.5, -2.0]).unwrap();
        let mut opt = AdamW::new(
            &store,
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
        );
        opt.step(&mut store, 0.1).unwrap();
        let v = store.value(p).data();
        // bias-corrected first step is lr·sign(g)
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut store = ParamStore::new(0);
        let p = store.add("p", &[1, 1], Init::Const(1.0)).unwrap();
        store.get_mut(p).grad = Tensor::scalar(1.0);
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        opt.freeze(p);
        opt.step(&mut store, 0.1).unwrap();
        assert_eq!(store.value(p).item(), 1.0);
    }
}
