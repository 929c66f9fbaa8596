use super::graph::{Activation, Graph, Var};
use super::params::{Init, ParamId, ParamStore};
use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;

/// Affine map `y = x·W + b` with `W` of shape `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), &[d_in, d_out], Init::FanIn)?;
        let b = store.add(&format!("{name}.b"), &[1, d_out], Init::Zeros)?;
        Ok(Self {
            w,
            b: Some(b),
            d_in,
            d_out,
        })
    }

    /// `y = x·W` without a bias term.
    pub fn without_bias(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), &[d_in, d_out], Init::FanIn)?;
        Ok(Self { w, b: None, d_in, d_out })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(&format!("{name}.gain"), &[1, dim], Init::Ones)?,
            bias: store.add(&format!("{name}.bias"), &[1, dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }
}

/// Lookup table; rows are initialised as a linear map from one-hot inputs.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize) -> Result<Self> {
        // fan_in of a one-hot input is 1
        let table = store.add(name, &[rows, dim], Init::Uniform(1.0))?;
        Ok(Self { table, rows, dim })
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.gather_rows(t, ids)
    }
}

/// Two affine maps with an activation in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
    pub act: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        act: Activation,
    ) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(store, &format!("{name}.0"), d_in, d_hidden)?,
            l2: Linear::new(store, &format!("{name}.1"), d_hidden, d_out)?,
            act,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, x)?;
        let h = g.activation(h, self.act);
        self.l2.forward(g, h)
    }
}
