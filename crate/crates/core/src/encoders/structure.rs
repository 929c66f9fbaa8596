use serde::{Deserialize, Serialize};

use crate::crystal::{PeriodicGraph, RbfSpec, NUM_ELEMENTS};
use crate::error::{Error, Result};
use crate::nn::{Activation, Embedding, Graph, Linear, ParamStore, Tensor, Var};

/// Embedding row used for masked nodes.
pub const MASK_ELEMENT: usize = NUM_ELEMENTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureEncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub cutoff: f64,
    pub rbf_k: usize,
    pub activation: Activation,
}

impl Default for StructureEncoderConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            layers: 3,
            cutoff: 5.0,
            rbf_k: 16,
            activation: Activation::Silu,
        }
    }
}

impl StructureEncoderConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config(format!("{prefix}.dim"), "must be ≥ 2"));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::config(format!("{prefix}.cutoff"), "must be > 0"));
        }
        if self.rbf_k < 2 {
            return Err(Error::config(format!("{prefix}.rbf_k"), "must be ≥ 2"));
        }
        Ok(())
    }

    pub fn rbf(&self) -> RbfSpec {
        RbfSpec::uniform(self.cutoff, self.rbf_k).expect("validated")
    }
}

#[derive(Debug, Clone)]
struct Block {
    msg: Linear,
    upd: Linear,
}

/// Message passing over a periodic neighbour graph. Each block computes
/// `m_e = act(W[h_nbr ‖ rbf_e])`, averages messages per node and adds
/// `act(U[h ‖ mean m])` to the node state.
#[derive(Debug, Clone)]
pub struct StructureEncoder {
    pub config: StructureEncoderConfig,
    embed: Embedding,
    blocks: Vec<Block>,
}

impl StructureEncoder {
    pub fn new(store: &mut ParamStore, name: &str, config: StructureEncoderConfig) -> Result<Self> {
        config.validate(name)?;
        let d = config.dim;
        let embed = Embedding::new(store, &format!("{name}.embed"), NUM_ELEMENTS + 1, d)?;
        let blocks = (0..config.layers)
            .map(|l| {
                Ok(Block {
                    msg: Linear::new(store, &format!("{name}.{l}.msg"), d + config.rbf_k, d)?,
                    upd: Linear::new(store, &format!("{name}.{l}.upd"), 2 * d, d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, embed, blocks })
    }

    /// Node states (`N × dim`). Nodes with `masked[i]` set use the mask
    /// embedding in place of their element.
    pub fn forward(&self, g: &mut Graph, graph: &PeriodicGraph, masked: &[bool]) -> Result<Var> {
        let n = graph.num_nodes();
        if masked.len() != n {
            return Err(Error::Shape(format!("{} mask flags for {n} nodes", masked.len())));
        }
        if graph.edge_features.cols() != self.config.rbf_k && graph.num_edges() > 0 {
            return Err(Error::Shape(format!(
                "edge features have {} columns, encoder expects {}",
                graph.edge_features.cols(),
                self.config.rbf_k
            )));
        }
        let ids: Vec<usize> = graph
            .node_elements
            .iter()
            .zip(masked)
            .map(|(e, &m)| if m { MASK_ELEMENT } else { e.id() })
            .collect();
        let mut h = self.embed.forward(g, &ids)?;
        let d = self.config.dim;
        let act = self.config.activation;
        let src = graph.sources();
        let nbr = graph.targets();
        let rbf = (graph.num_edges() > 0).then(|| g.input(graph.edge_features.clone()));
        for b in &self.blocks {
            let agg = match rbf {
                Some(rbf) => {
                    let hn = g.gather_rows(h, &nbr)?;
                    let m = g.concat(&[hn, rbf])?;
                    let m = b.msg.forward(g, m)?;
                    let m = g.activation(m, act);
                    g.scatter_mean(m, &src, n)?
                }
                None => g.input(Tensor::zeros(&[n, d])),
            };
            let u = g.concat(&[h, agg])?;
            let u = b.upd.forward(g, u)?;
            let u = g.activation(u, act);
            h = g.add(h, u)?;
        }
        Ok(h)
    }
}
