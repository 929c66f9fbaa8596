//! Dense tensors, reverse-mode differentiation and the layer primitives the
//! encoders and fusion stack are built from.

pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use attention::MultiHeadAttention;
pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_diff_check, CoordCheck, GradCheckOptions, GradCheckReport};
pub use graph::{softmax_rows, softmax_rows_masked, Activation, Graph, Var};
pub use layers::{Embedding, LayerNorm, Linear, Mlp, LN_EPS};
pub use optim::{AdamW, AdamWConfig};
pub use params::{param_rng, stream_seed, Gradients, Init, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Mean absolute error.
pub fn mae(pred: &[f64], target: &[f64]) -> crate::Result<f64> {
    if pred.len() != target.len() {
        return Err(crate::Error::Shape(format!(
            "mae: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(crate::Error::Invalid("mae of empty input".into()));
    }
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}
