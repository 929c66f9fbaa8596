use super::model::{ModelConfig, ModelInput};
use crate::encoders::{StructureEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::nn::{Graph, Init, Linear, ParamId, ParamStore, Var};

pub const INITIAL_TEMPERATURE: f64 = 0.07;

/// Symmetric InfoNCE over a batch of paired rows:
/// `½·[CE(S, I) + CE(Sᵀ, I)]` with `S = ẑ_s ẑ_tᵀ / τ`, rows L2-normalized
/// and `τ = exp(log_tau)`.
pub fn contrastive_loss(g: &mut Graph, z_struct: Var, z_text: Var, log_tau: Var) -> Result<Var> {
    let b = g.value(z_struct).rows();
    if b < 2 {
        return Err(Error::Invalid(format!("contrastive loss needs a batch of at least 2, got {b}")));
    }
    if g.value(z_text).rows() != b {
        return Err(Error::Shape(format!(
            "contrastive batch: {:?} vs {:?}",
            g.value(z_struct).shape(),
            g.value(z_text).shape()
        )));
    }
    let zs = g.l2_normalize_rows(z_struct);
    let zt = g.l2_normalize_rows(z_text);
    let sim = g.matmul_nt(zs, zt)?;
    let neg = g.scale(log_tau, -1.0);
    let inv_tau = g.exp(neg);
    let logits = g.mul_scalar(sim, inv_tau)?;
    let labels: Vec<usize> = (0..b).collect();
    let mask = vec![true; b];
    let l1 = g.cross_entropy_masked(logits, &labels, &mask)?;
    let lt = g.transpose(logits);
    let l2 = g.cross_entropy_masked(lt, &labels, &mask)?;
    let s = g.add(l1, l2)?;
    Ok(g.scale(s, 0.5))
}

/// Structure and text encoders aligned by a contrastive objective. Only the
/// structure encoder is carried into fine-tuning.
#[derive(Debug, Clone)]
pub struct ContrastiveModel {
    pub structure: StructureEncoder,
    pub text: TextEncoder,
    struct_proj: Linear,
    text_proj: Linear,
    pub log_tau: ParamId,
}

impl ContrastiveModel {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let p = config.contrastive_dim;
        Ok(Self {
            structure: StructureEncoder::new(store, "structure", config.structure.clone())?,
            text: TextEncoder::new(store, "text", vocab_size, config.text.clone())?,
            struct_proj: Linear::new(store, "cl.struct_proj", config.structure.dim, p)?,
            text_proj: Linear::new(store, "cl.text_proj", config.text.dim, p)?,
            log_tau: store.add("cl.log_tau", &[1, 1], Init::Const(INITIAL_TEMPERATURE.ln()))?,
        })
    }

    pub fn batch_loss(&self, g: &mut Graph, batch: &[&ModelInput]) -> Result<Var> {
        let mut zs = Vec::with_capacity(batch.len());
        let mut zt = Vec::with_capacity(batch.len());
        for x in batch {
            let h = self.structure.forward(g, &x.graph, &vec![false; x.graph.num_nodes()])?;
            let pooled = g.mean_rows(h);
            zs.push(self.struct_proj.forward(g, pooled)?);
            let t = self.text.forward(g, &x.tokens)?;
            let cls = g.gather_rows(t, &[0])?;
            zt.push(self.text_proj.forward(g, cls)?);
        }
        let zs = g.stack_rows(&zs)?;
        let zt = g.stack_rows(&zt)?;
        let lt = g.param(self.log_tau);
        contrastive_loss(g, zs, zt, lt)
    }
}
