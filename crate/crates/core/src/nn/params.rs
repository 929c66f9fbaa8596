use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// uniform(−1/√fan_in, 1/√fan_in), fan_in = rows of the weight.
    FanIn,
    /// uniform(−bound, bound)
    Uniform(f64),
    Zeros,
    Ones,
    Const(f64),
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Tensor,
}

/// Named parameters of one model. Ids are dense and stable for the life of
/// the store; names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
    seed: u64,
}

/// Per-parameter RNG stream derived from `(seed, name)` so that values do
/// not depend on construction order.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// 64-bit seed for a named sub-stream of `seed`.
pub fn stream_seed(seed: u64, stream: &str) -> u64 {
    param_rng(seed, stream).gen()
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter name `{name}`")));
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(v) => vec![v; n],
            Init::FanIn | Init::Uniform(_) => {
                let bound = match init {
                    Init::Uniform(b) => b,
                    _ => {
                        let fan_in = if shape.len() >= 2 { shape[0] } else { 1 };
                        1.0 / (fan_in.max(1) as f64).sqrt()
                    }
                };
                let mut rng = param_rng(self.seed, name);
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
        };
        let tensor = Tensor::new(shape.to_vec(), data)?;
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            grad: Tensor::zeros(shape),
            tensor,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `grads` into each parameter's `grad` buffer.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, g) in grads.by_param.iter().enumerate() {
            if let Some(g) = g {
                self.params[i].grad.add_assign(g);
            }
        }
    }

    /// Copies values for every parameter whose name exists in `other` with
    /// a matching shape. Returns the names that were copied.
    pub fn load_matching<'a>(
        &mut self,
        tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
        skip: impl Fn(&str) -> bool,
    ) -> Result<Vec<String>> {
        let mut copied = Vec::new();
        for (name, t) in tensors {
            if skip(name) {
                continue;
            }
            if let Some(id) = self.id(name) {
                let p = &mut self.params[id.0];
                if p.tensor.shape() != t.shape() {
                    return Err(Error::Checkpoint(format!(
                        "shape mismatch for `{name}`: model {:?}, checkpoint {:?}",
                        p.tensor.shape(),
                        t.shape()
                    )));
                }
                p.tensor = t.clone();
                copied.push(name.to_string());
            }
        }
        Ok(copied)
    }
}

/// Gradients produced by one backward pass, indexed by [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) by_param: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(n_params: usize) -> Self {
        Self {
            by_param: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn add(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.by_param[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId, shape: &[usize]) -> &mut Tensor {
        self.by_param[id.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    /// Sums `other` into `self` in parameter order.
    pub fn merge(&mut self, other: &Gradients) {
        if self.by_param.len() < other.by_param.len() {
            self.by_param.resize(other.by_param.len(), None);
        }
        for (i, g) in other.by_param.iter().enumerate() {
            if let Some(g) = g {
                self.add(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.by_param.iter_mut().flatten() {
            t.scale_assign(s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_name_keyed() {
        let mut a = ParamStore::new(3);
        a.add("x.w", &[4, 5], Init::FanIn).unwrap();
        a.add("y.w", &[4, 5], Init::FanIn).unwrap();
        let mut b = ParamStore::new(3);
        b.add("y.w", &[4, 5], Init::FanIn).unwrap();
        b.add("x.w", &[4, 5], Init::FanIn).unwrap();
        assert_eq!(
            a.value(a.id("x.w").unwrap()),
            b.value(b.id("x.w").unwrap())
        );
        let bound = 0.5;
        assert!(a.value(a.id("x.w").unwrap()).data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0);
        s.add("w", &[2, 2], Init::Zeros).unwrap();
        assert!(s.add("w", &[2, 2], Init::Zeros).is_err());
    }
}
