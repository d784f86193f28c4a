//! Pair generation, optimizer and training loop.

pub mod adam;
pub mod dataset;
pub mod trainer;

pub use adam::{scheduled_lr, Adam, AdamConfig};
pub use dataset::{derive_seed, generate_pair, generate_pairs, prepare_templates, DatasetSpec, Pair, Regime, Split, Templates};
pub use trainer::{batch_loss, train, train_model, EpochStats, TrainConfig, TrainReport};
