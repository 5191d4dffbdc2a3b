//! Tiny decoder-only transformer for length-extrapolation experiments.

pub mod config;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod train;

pub use config::{desk_hirope, ModelConfig, OptimizerKind, SyntheticTaskConfig, TrainConfig, DESK_WINDOW};
pub use corpus::{generate_corpus, generate_fixed_length, CorpusFile, Sequence, Vocab};
pub use eval::{evaluate_lengths, LengthEval};
pub use model::{loss_and_grads, Example, Model, TokenScores};
pub use train::{train, Checkpoint, LossCurve, LossPoint, RunManifest};
