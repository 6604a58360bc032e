//! Cross-entropy, SGD with momentum and weight decay, the two gradient
//! routines and the training loop.

mod backward;
mod gradcheck;
mod loss;
mod optim;
mod trainer;

pub use backward::{backward_o1, backward_stored, BackwardOutput, Gradients, MemoryMeter};
pub use gradcheck::central_difference;
pub use loss::cross_entropy;
pub use optim::{sgd_step, OptimConfig, OptimState};
pub use trainer::{
    evaluate, train_loop, Augment, BackwardKind, LogRow, TrainConfig, TrainLog, TrainOutputs,
    LOG_HEADER,
};
