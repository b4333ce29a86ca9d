//! Synchronized GANs for cross-domain generation, built on a small
//! reverse-mode autodiff core.

pub mod adam;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod inversion;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pgm;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use model::{Architecture, Modality, SyncGanModel, Synchronizer, SynchronizerVariant};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Tensor, TensorError};
pub use trainer::{train, IterationMetrics, Net, TrainConfig, Trainer};
