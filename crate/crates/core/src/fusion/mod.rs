//! Cross-attention fusion of node and token states, prediction heads, the
//! comparison baselines and the attention dump format.

mod contrastive;
mod dump;
mod layer;
mod model;

pub use contrastive::{contrastive_loss, ContrastiveModel, INITIAL_TEMPERATURE};
pub use dump::{decode_attention_dump, encode_attention_dump, AttentionRecord, ATTENTION_MAGIC};
pub use layer::CrossAttentionLayer;
pub use model::{AttentionMap, Model, ModelConfig, ModelInput, Variant, NUM_ELEMENT_CLASSES};
