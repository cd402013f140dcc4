//! Multi-head self-attention adapter over frozen CLIP token embeddings.
//!
//! The backbone is never run here: image and text features arrive as
//! precomputed containers (see [`dataio`]), and only the adapter head is
//! trained. The crate is split the same way a run flows:
//!
//! - [`dataio`]: embedding/weight containers, label tables, splits, checkpoints
//! - [`adapter`]: forward pass, exact reverse-mode gradients, attention salience
//! - [`training`]: weighted cross-entropy, AdamW, warmup + cosine schedule, fit loop
//! - [`metrics`]: confusion matrix, accuracy, macro/weighted F1, adjusted balanced accuracy
//! - `cli`: the `mhadapter` command-line surface (feature `cli`)

pub mod adapter;
pub mod dataio;
pub mod gradcheck;
pub mod metrics;
pub mod real;
pub mod rng;
pub mod synthetic;
pub mod training;

#[cfg(feature = "cli")]
pub mod cli;

pub use real::Real;

/// Version string recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Any failure of a data → adapter → metrics pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] dataio::DataError),
    #[error(transparent)]
    Adapter(#[from] adapter::AdapterError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
}
