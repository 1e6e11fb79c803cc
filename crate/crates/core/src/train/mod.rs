//! Losses, optimizers, schedules, augmentation and the training loop.

pub mod augment;
pub mod loss;
pub mod optim;
mod run;
pub mod schedule;
pub mod tasks;

pub use augment::{augment, AugmentConfig, AugmentPlan};
pub use loss::{barron_drho, barron_loss, barron_rho};
pub use optim::{clip_grad_norm, Optimizer, OptimizerKind, StepOutcome};
pub use run::{batch_seed, train_loop, IterRecord, LossKind, RunLog, TrainConfig, TrainOutcome};
pub use schedule::{cosine_lr, Schedule};
