//! Temporal user profiling for top-K recommendation.
//!
//! The pipeline turns chronological interaction histories into short-term and
//! long-term natural-language profiles, embeds them, fuses the two vectors
//! with a learned attention layer and scores user–item pairs with an MLP.
//! Popularity, matrix factorization, centroid and numeric temporal-fusion
//! baselines, the ablation variants and a top-K evaluation harness sit
//! alongside.

pub mod baselines;
pub mod checkpoint;
pub mod corpus;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod harness;
pub mod jsonl;
pub mod profiler;
pub mod scorer;
pub mod util;

#[cfg(test)]
mod testing;

pub use checkpoint::Checkpoint;
pub use corpus::{Catalog, Interaction, ItemRecord, SplitDataset, UserHistory, UserSplit};
pub use embedder::{EmbeddingVector, EncoderProvider};
pub use error::{Error, Result};
pub use fusion::{FusedUser, FusionLayer};
pub use harness::{AblationVariant, ExperimentConfig, Method, RunArtifact};
pub use profiler::{GenerationClient, PromptKind, TemporalProfiles};
pub use scorer::{HeadConfig, MlpHead, NeuralModel, TrainConfig, UserInput};
