//! The adapter head.
//!
//! Patch tokens go through a bottleneck MLP, per-token layer norm, multi-head
//! self-attention and dropout, then are mean-pooled and blended with the class
//! token. The blended feature is classified against frozen text-derived rows
//! with a temperature-scaled softmax. Gradients are written out by hand; see
//! [`crate::gradcheck`] for the finite-difference harness that checks them.

mod backward;
mod forward;
mod ops;
mod params;
mod salience;

pub use backward::{adapter_backward, backward_from_feature};
pub use forward::{adapter_features, adapter_forward, FeatureTrace, ForwardTrace};
pub use ops::{
    argmax, bottleneck_mlp, classify, dropout, layer_norm, mean_pool, mhsa, residual_blend, softmax,
    softmax_in_place, Classification, ClassifierHead, LayerNormOutput, MhsaOutput, Mode, MIN_NORM,
};
pub use params::{count_trainable_params, AdapterConfig, AdapterParams, AdapterTensors, TENSOR_NAMES};
pub use salience::{attention_salience, salience_grid};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdapterError {
    #[error("invalid adapter configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("zero-norm vector in cosine mode")]
    ZeroVectorInCosineMode,
    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),
    #[error("non-finite parameter values")]
    NonFinite,
}

pub type Result<T, E = AdapterError> = std::result::Result<T, E>;

use crate::dataio::EmbeddingSet;
use crate::Real;

/// Predicted class per image from the deterministic view 0, eval mode.
pub fn predict<T: Real>(
    params: &AdapterParams<T>,
    head: &ClassifierHead<T>,
    set: &EmbeddingSet,
    images: &[usize],
) -> Result<Vec<usize>> {
    let one = |&i: &usize| -> Result<usize> {
        let tokens = set.view(i, 0).mapv(T::from_f32);
        // eval mode draws nothing from the rng
        let mut rng = crate::rng::stream(0, crate::rng::Stream::Dropout);
        let trace = adapter_forward(tokens.view(), params, head, Mode::Eval, &mut rng)?;
        Ok(argmax(trace.output.probabilities.view()))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        images.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        images.iter().map(one).collect()
    }
}
