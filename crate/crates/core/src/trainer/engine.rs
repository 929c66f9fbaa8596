//! Shared optimisation loop pieces: batch order, per-sample gradients and
//! the optimizer step.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Precision, TrainConfig};
use super::schedule::lr_at;
use crate::error::{Error, Result};
use crate::nn::{stream_seed, AdamW, AdamWConfig, Gradients, Graph, ParamId, ParamStore, Var};

/// Samples per work unit. Fixed so that gradient summation order, and with
/// it every bit of the result, does not depend on the thread count.
const CHUNK: usize = 8;

/// Seeded epoch-wise shuffling. A batch never straddles two epochs, so no
/// sample appears twice in a batch.
#[derive(Debug, Clone)]
pub struct BatchOrder {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchOrder {
    pub fn new(pool: &[usize], seed: u64) -> Self {
        Self {
            pool: pool.to_vec(),
            order: Vec::new(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(stream_seed(seed, "order")),
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let b = size.min(self.pool.len());
        if self.order.is_empty() || self.pos + b > self.order.len() {
            self.order = self.pool.clone();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + b].to_vec();
        self.pos += b;
        out
    }
}

/// Optimizer, frozen set and numeric mode for one run.
pub struct Engine {
    pub opt: AdamW,
    frozen: Arc<Vec<bool>>,
    f32: bool,
}

impl Engine {
    pub fn new(store: &ParamStore, cfg: &TrainConfig, frozen: &[ParamId]) -> Result<Self> {
        let mut opt = AdamW::new(
            store,
            AdamWConfig {
                weight_decay: cfg.weight_decay,
                ..Default::default()
            },
        );
        let mut mask = vec![false; store.len()];
        for &id in frozen {
            opt.freeze(id);
            mask[id.0] = true;
        }
        Ok(Self {
            opt,
            frozen: Arc::new(mask),
            f32: cfg.resolved_precision()? == Precision::F32,
        })
    }

    pub fn graph<'s>(&self, store: &'s ParamStore) -> Graph<'s> {
        let frozen = Arc::clone(&self.frozen);
        let g = Graph::new(store).with_f32(self.f32);
        if frozen.iter().any(|&f| f) {
            g.with_frozen(move |id| frozen[id.0])
        } else {
            g
        }
    }

    /// Mean loss and mean gradient over `batch`, one tape per sample.
    /// `loss` receives the position within the batch and the sample index.
    pub fn per_sample_gradients<F>(&self, store: &ParamStore, batch: &[usize], loss: F) -> Result<(f64, Gradients)>
    where
        F: Fn(&mut Graph, usize, usize) -> Result<Var> + Sync,
    {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let parts: Vec<Result<(f64, Gradients)>> = batch
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut total = 0.0;
                let mut acc = Gradients::new(store.len());
                for (j, &i) in chunk.iter().enumerate() {
                    let mut g = self.graph(store);
                    let l = loss(&mut g, c * CHUNK + j, i)?;
                    total += g.value(l).item();
                    acc.merge(&g.backward(l)?);
                }
                Ok((total, acc))
            })
            .collect();
        let mut total = 0.0;
        let mut grads = Gradients::new(store.len());
        for p in parts {
            let (l, g) = p?;
            total += l;
            grads.merge(&g);
        }
        let inv = 1.0 / batch.len() as f64;
        grads.scale(inv);
        Ok((total * inv, grads))
    }

    /// Applies `grads` with the scheduled rate for `step` (1-based) and
    /// returns that rate.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &Gradients, step: usize, cfg: &TrainConfig) -> Result<f64> {
        let lr = lr_at(step, cfg);
        store.zero_grads();
        store.accumulate(grads);
        self.opt.step(store, lr)?;
        Ok(lr)
    }
}
