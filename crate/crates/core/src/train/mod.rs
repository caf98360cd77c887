//! Model assembly, optimization, checkpoints and evaluation.

pub mod checkpoint;
pub mod eval;
pub mod model;
pub mod optim;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use eval::evaluate;
pub use model::{Model, ModelConfig};
pub use optim::{clip_grad_norm, Adam, StepLr};
pub use trainer::{
    init_model, mean_si_sdr, train, train_step, EpochLog, TrainConfig, TrainEvent, TrainOutcome,
};
