use super::graph::{Graph, Var};
use super::layers::Linear;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Scaled dot-product attention with `heads` heads. Queries come from one
/// sequence and keys/values from another (the same one for self-attention).
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_query: usize, d_kv: usize, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::config(
                format!("{name}.heads"),
                format!("model width {d_model} is not divisible by {heads} heads"),
            ));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), d_query, d_model)?,
            // a key bias shifts every score of a row equally, so softmax ignores it
            k: Linear::without_bias(store, &format!("{name}.k"), d_kv, d_model)?,
            v: Linear::new(store, &format!("{name}.v"), d_kv, d_model)?,
            o: Linear::new(store, &format!("{name}.o"), d_model, d_query)?,
            heads,
            d_model,
        })
    }

    /// Returns the projected output (rows of `xq`, width `d_query`) and,
    /// when `record` is set, the per-head weight matrices.
    pub fn forward(
        &self,
        g: &mut Graph,
        xq: Var,
        xkv: Var,
        key_allowed: Option<&[bool]>,
        record: bool,
    ) -> Result<(Var, Vec<Tensor>)> {
        let q = self.q.forward(g, xq)?;
        let k = self.k.forward(g, xkv)?;
        let v = self.v.forward(g, xkv)?;
        let dh = self.d_model / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut maps = Vec::new();
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let s = g.matmul_nt(qh, kh)?;
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s, key_allowed)?;
            if record {
                maps.push(g.value(a).clone());
            }
            outs.push(g.matmul(a, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs)? };
        Ok((self.o.forward(g, cat)?, maps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_of_every_head_sum_to_one() {
        let mut store = ParamStore::new(4);
        let mha = MultiHeadAttention::new(&mut store, "att", 6, 5, 8, 2).unwrap();
        assert!(MultiHeadAttention::new(&mut store, "bad", 6, 5, 9, 2).is_err());
        let mut g = Graph::new(&store);
        let xq = g.input(Tensor::matrix(3, 6, (0..18).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap());
        let xk = g.input(Tensor::matrix(4, 5, (0..20).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap());
        let allowed = [true, false, true, true];
        let (y, maps) = mha.forward(&mut g, xq, xk, Some(&allowed), true).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 6]);
        assert_eq!(maps.len(), 2);
        for m in &maps {
            assert_eq!(m.shape(), &[3, 4]);
            for r in 0..3 {
                assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(m.row(r)[1], 0.0);
            }
        }
    }
}
