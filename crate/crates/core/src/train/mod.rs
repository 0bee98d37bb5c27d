//! Training objectives, the pair-batch training loop and same-different evaluation.

pub mod loss;
pub mod samediff;
pub mod trainer;

pub use loss::{nt_xent, nt_xent_loss, reconstruction, reconstruction_loss, NtXent};
pub use samediff::same_different_ap;
pub use trainer::{cae_pair_gradients, train, train_with, LogRecord, TrainConfig, TrainReport};
