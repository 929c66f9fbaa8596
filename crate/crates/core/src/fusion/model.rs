use serde::{Deserialize, Serialize};

use super::layer::CrossAttentionLayer;
use crate::crystal::PeriodicGraph;
use crate::encoders::{StructureEncoder, StructureEncoderConfig, TextEncoder, TextEncoderConfig, PAD};
use crate::error::{Error, Result};
use crate::nn::{Activation, Graph, Linear, Mlp, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub structure: StructureEncoderConfig,
    pub text: TextEncoderConfig,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    pub ffn_mult: usize,
    /// Hidden width of the two-layer heads used by the concat and
    /// descriptor baselines.
    pub head_hidden: usize,
    /// Shared embedding width of the contrastive baseline.
    pub contrastive_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            structure: StructureEncoderConfig::default(),
            text: TextEncoderConfig::default(),
            fusion_layers: 4,
            fusion_heads: 8,
            ffn_mult: 4,
            head_hidden: 128,
            contrastive_dim: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.structure.validate("model.structure")?;
        self.text.validate("model.text")?;
        let d = self.structure.dim;
        if self.fusion_heads == 0 || !d.is_multiple_of(self.fusion_heads) {
            return Err(Error::config(
                "model.fusion_heads",
                format!("must divide the node width {d}"),
            ));
        }
        for (f, v) in [
            ("model.ffn_mult", self.ffn_mult),
            ("model.head_hidden", self.head_hidden),
            ("model.contrastive_dim", self.contrastive_dim),
        ] {
            if v == 0 {
                return Err(Error::config(f, "must be ≥ 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Cast,
    GraphOnly,
    TextOnly,
    Concat,
    ConcatFrozenText,
    Desc,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Cast,
        Variant::GraphOnly,
        Variant::TextOnly,
        Variant::Concat,
        Variant::ConcatFrozenText,
        Variant::Desc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cast => "cast",
            Variant::GraphOnly => "graph-only",
            Variant::TextOnly => "text-only",
            Variant::Concat => "concat",
            Variant::ConcatFrozenText => "concat-frozen-text",
            Variant::Desc => "desc",
        }
    }

    pub fn uses_structure(self) -> bool {
        self != Variant::TextOnly
    }

    pub fn uses_text(self) -> bool {
        matches!(
            self,
            Variant::Cast | Variant::TextOnly | Variant::Concat | Variant::ConcatFrozenText
        )
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown model variant `{s}`")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything a model reads for one material.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub id: String,
    pub graph: PeriodicGraph,
    /// `[CLS]` first; a missing description is `[CLS]` alone.
    pub tokens: Vec<u32>,
    /// Standardized descriptor values; empty unless the model uses them.
    pub descriptors: Vec<f64>,
}

/// Cross-attention weights of one fusion layer and head, `N × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub head: usize,
    pub weights: Tensor,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub variant: Variant,
    pub config: ModelConfig,
    pub structure: Option<StructureEncoder>,
    pub text: Option<TextEncoder>,
    pub fusion: Vec<CrossAttentionLayer>,
    pub mnp: Option<Linear>,
    reg: Option<Linear>,
    text_proj: Option<Linear>,
    desc_proj: Option<Linear>,
    reg_mlp: Option<Mlp>,
}

pub const NUM_ELEMENT_CLASSES: usize = crate::crystal::NUM_ELEMENTS;

impl Model {
    /// Registers every parameter of `variant` in `store`. `n_desc` is the
    /// descriptor width, used only by the descriptor baseline.
    pub fn new(
        store: &mut ParamStore,
        variant: Variant,
        config: &ModelConfig,
        vocab_size: usize,
        n_desc: usize,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.structure.dim;
        let dt = config.text.dim;
        let structure = variant
            .uses_structure()
            .then(|| StructureEncoder::new(store, "structure", config.structure.clone()))
            .transpose()?;
        let text = variant
            .uses_text()
            .then(|| TextEncoder::new(store, "text", vocab_size, config.text.clone()))
            .transpose()?;
        let mut m = Self {
            variant,
            config: config.clone(),
            structure,
            text,
            fusion: Vec::new(),
            mnp: None,
            reg: None,
            text_proj: None,
            desc_proj: None,
            reg_mlp: None,
        };
        match variant {
            Variant::Cast => {
                m.fusion = (0..config.fusion_layers)
                    .map(|l| {
                        CrossAttentionLayer::new(
                            store,
                            &format!("fusion.{l}"),
                            d,
                            dt,
                            config.fusion_heads,
                            config.ffn_mult,
                        )
                    })
                    .collect::<Result<_>>()?;
                m.mnp = Some(Linear::new(store, "mnp", d, NUM_ELEMENT_CLASSES)?);
                m.reg = Some(Linear::new(store, "reg", d, 1)?);
            }
            Variant::GraphOnly => {
                m.mnp = Some(Linear::new(store, "mnp", d, NUM_ELEMENT_CLASSES)?);
                m.reg = Some(Linear::new(store, "reg", d, 1)?);
            }
            Variant::TextOnly => m.reg = Some(Linear::new(store, "reg", dt, 1)?),
            Variant::Concat | Variant::ConcatFrozenText => {
                m.text_proj = Some(Linear::new(store, "text_proj", dt, d)?);
                m.reg_mlp = Some(Mlp::new(store, "reg_mlp", 2 * d, config.head_hidden, 1, Activation::Silu)?);
            }
            Variant::Desc => {
                if n_desc == 0 {
                    return Err(Error::Invalid("descriptor baseline needs at least one descriptor".into()));
                }
                m.desc_proj = Some(Linear::new(store, "desc_proj", n_desc, d)?);
                m.reg_mlp = Some(Mlp::new(store, "reg_mlp", 2 * d, config.head_hidden, 1, Activation::Silu)?);
            }
        }
        Ok(m)
    }

    /// Parameters held fixed during fine-tuning.
    pub fn frozen_params(&self, store: &ParamStore) -> Vec<ParamId> {
        if self.variant != Variant::ConcatFrozenText {
            return Vec::new();
        }
        store
            .iter()
            .filter(|(_, p)| p.name.starts_with("text."))
            .map(|(id, _)| id)
            .collect()
    }

    /// Parameter name prefixes that are created fresh for each fine-tuning
    /// run instead of being loaded from a pretrained checkpoint.
    pub fn head_prefixes() -> &'static [&'static str] {
        &["mnp.", "reg.", "reg_mlp.", "text_proj.", "desc_proj."]
    }

    fn text_states(&self, g: &mut Graph, x: &ModelInput) -> Result<(Var, Option<Vec<bool>>)> {
        let enc = self.text.as_ref().expect("variant uses text");
        let t = enc.forward(g, &x.tokens)?;
        let allowed = x.tokens.contains(&PAD).then(|| x.tokens.iter().map(|&i| i != PAD).collect());
        Ok((t, allowed))
    }

    /// Final node states. For the fused model these are the outputs of the
    /// last cross-attention layer; attention maps are appended to `record`
    /// when given.
    pub fn node_states(
        &self,
        g: &mut Graph,
        x: &ModelInput,
        masked: &[bool],
        mut record: Option<&mut Vec<AttentionMap>>,
    ) -> Result<Var> {
        let enc = self
            .structure
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("{} has no structure encoder", self.variant)))?;
        let mut h = enc.forward(g, &x.graph, masked)?;
        if self.variant == Variant::Cast {
            let (t, allowed) = self.text_states(g, x)?;
            for (l, layer) in self.fusion.iter().enumerate() {
                let (next, maps) = layer.forward(g, h, t, allowed.as_deref(), record.is_some())?;
                if let Some(rec) = record.as_deref_mut() {
                    rec.extend(maps.into_iter().enumerate().map(|(head, weights)| AttentionMap {
                        layer: l,
                        head,
                        weights,
                    }));
                }
                h = next;
            }
        }
        Ok(h)
    }

    /// Element logits for the masked rows, in ascending node order.
    pub fn mnp_logits(&self, g: &mut Graph, x: &ModelInput, masked: &[bool]) -> Result<Var> {
        let head = self
            .mnp
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("{} has no masked-node head", self.variant)))?;
        let rows: Vec<usize> = (0..masked.len()).filter(|&i| masked[i]).collect();
        if rows.is_empty() {
            return Err(Error::Invalid("no masked nodes".into()));
        }
        let h = self.node_states(g, x, masked, None)?;
        let sel = g.gather_rows(h, &rows)?;
        head.forward(g, sel)
    }

    /// Scalar prediction (`1 × 1`).
    pub fn predict(&self, g: &mut Graph, x: &ModelInput) -> Result<Var> {
        let unmasked = vec![false; x.graph.num_nodes()];
        match self.variant {
            Variant::Cast | Variant::GraphOnly => {
                let h = self.node_states(g, x, &unmasked, None)?;
                let pooled = g.mean_rows(h);
                self.reg.as_ref().expect("linear head").forward(g, pooled)
            }
            Variant::TextOnly => {
                let (t, _) = self.text_states(g, x)?;
                let cls = g.gather_rows(t, &[0])?;
                self.reg.as_ref().expect("linear head").forward(g, cls)
            }
            Variant::Concat | Variant::ConcatFrozenText => {
                let h = self.node_states(g, x, &unmasked, None)?;
                let pooled = g.mean_rows(h);
                let (t, _) = self.text_states(g, x)?;
                let cls = g.gather_rows(t, &[0])?;
                let proj = self.text_proj.as_ref().expect("projection").forward(g, cls)?;
                let cat = g.concat(&[pooled, proj])?;
                self.reg_mlp.as_ref().expect("mlp head").forward(g, cat)
            }
            Variant::Desc => {
                let h = self.node_states(g, x, &unmasked, None)?;
                let pooled = g.mean_rows(h);
                let proj = self.desc_proj.as_ref().expect("projection");
                if x.descriptors.len() != proj.d_in {
                    return Err(Error::Shape(format!(
                        "{} descriptors, model expects {}",
                        x.descriptors.len(),
                        proj.d_in
                    )));
                }
                let dv = g.input(Tensor::matrix(1, proj.d_in, x.descriptors.clone())?);
                let dp = proj.forward(g, dv)?;
                let dp = g.activation(dp, Activation::Silu);
                let cat = g.concat(&[pooled, dp])?;
                self.reg_mlp.as_ref().expect("mlp head").forward(g, cat)
            }
        }
    }
}
