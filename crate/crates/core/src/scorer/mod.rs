//! Scoring heads, the BCE objective, negative sampling and the Adam
//! training loop with early stopping.

mod adam;
mod index;
mod mlp;
mod model;
mod train;

pub use adam::{Adam, AdamConfig};
pub use index::PairIndex;
pub use mlp::{dot_score, sigmoid, Dense, HeadConfig, MlpHead, Trace, UpperTrace};
pub use model::{BoundNeural, Head, HeadKind, NeuralModel, UserInput};
pub use train::{
    bce_loss, chunked_gradient, example_rng, fit, sample_negatives, validation_loss, EpochRecord,
    LabeledPair, PairData, PairModel, TrainConfig, TrainLog, BCE_EPS,
};
