//! Tract-level food-insecurity classification from bags of street-view
//! image embeddings.
//!
//! Each census tract is a bag of fixed-length image embeddings. A gated
//! attention head weights the instances, the weighted average is fed to a
//! linear classifier, and the whole head is trained with a class-weighted,
//! label-smoothed cross-entropy. Around that core the crate provides data
//! ingestion and spatial joins ([`geodata`]), training ([`trainer`]),
//! evaluation and interpretation outputs ([`metrics`]), income late fusion
//! ([`fusion`]) and a planted-witness synthetic benchmark ([`synth`]).

pub mod bag;
pub mod error;
pub mod fusion;
pub mod geodata;
pub mod linalg;
pub mod metrics;
pub mod mil;
pub mod model;
pub mod synth;
pub mod trainer;

pub use bag::{InstanceEmbedding, Label, TractBag};
pub use error::{Error, Result};
pub use fusion::IncomeStats;
pub use linalg::Matrix;
pub use mil::{DropoutMask, ForwardOutput, LossConfig};
pub use model::{FusionBlock, GatedAttentionModel, GradientSet};
