//! A small laboratory for the hypersolid self-supervised objective: a
//! reverse-mode tape, a multi-view data generator, an MLP encoder, the
//! repulsion/alignment/normalization loss, an AdamW training loop, frozen
//! probes, embedding geometry metrics, latent energy walks and feature
//! inversion.

pub mod config;
pub mod embeddings;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod hseb;
pub mod inversion;
pub mod loss;
pub mod model;
pub mod optim;
pub mod probes;
pub mod tensor;
pub mod topology;
pub mod trainer;
pub mod views;

pub use embeddings::{load_embeddings, EmbeddingSet};
pub use error::{Error, Result};
pub use loss::{LossBreakdown, LossConfig, RepulsionMode};
pub use model::{EncoderConfig, Parameters};
pub use tensor::{Array, Tape, Var};
pub use trainer::{train, TrainConfig};
pub use views::{Dataset, SampleSource, ViewConfig};
