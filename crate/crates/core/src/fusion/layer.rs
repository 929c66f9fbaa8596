use crate::error::Result;
use crate::nn::{Activation, Graph, LayerNorm, Linear, MultiHeadAttention, ParamStore, Tensor, Var};

/// Node rows attend over text rows, followed by a position-wise
/// feed-forward block. Both sub-blocks are pre-norm and residual.
#[derive(Debug, Clone)]
pub struct CrossAttentionLayer {
    ln_att: LayerNorm,
    att: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    act: Activation,
}

impl CrossAttentionLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        node_dim: usize,
        text_dim: usize,
        heads: usize,
        ffn_mult: usize,
    ) -> Result<Self> {
        Ok(Self {
            ln_att: LayerNorm::new(store, &format!("{name}.ln_att"), node_dim)?,
            att: MultiHeadAttention::new(store, &format!("{name}.att"), node_dim, text_dim, node_dim, heads)?,
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), node_dim)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), node_dim, node_dim * ffn_mult)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), node_dim * ffn_mult, node_dim)?,
            act: Activation::Gelu,
        })
    }

    pub fn heads(&self) -> usize {
        self.att.heads
    }

    /// Returns updated node rows and, if `record`, one `N × T` weight
    /// matrix per head.
    pub fn forward(
        &self,
        g: &mut Graph,
        nodes: Var,
        text: Var,
        key_allowed: Option<&[bool]>,
        record: bool,
    ) -> Result<(Var, Vec<Tensor>)> {
        let h = self.ln_att.forward(g, nodes)?;
        let (a, maps) = self.att.forward(g, h, text, key_allowed, record)?;
        let x = g.add(nodes, a)?;
        let h = self.ln_ff.forward(g, x)?;
        let h = self.ff1.forward(g, h)?;
        let h = g.activation(h, self.act);
        let h = self.ff2.forward(g, h)?;
        Ok((g.add(x, h)?, maps))
    }
}
