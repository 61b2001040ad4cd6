//! Projection heads, the confidence-weighted contrastive objective, and
//! training.

mod head;
mod loss;
mod model;
mod optim;
mod train;

pub use head::{project_and_normalize, ProjectionHead};
pub use loss::{contrastive_loss, contrastive_loss_tape, TAU_MAX, TAU_MIN};
pub use model::{AlignmentModel, Clip, LoraConfig, ModelConfig};
pub use optim::{is_head_param, AdamW, OptimConfig};
pub use train::{
    batch_loss, train, train_step, ConfidenceConfig, GradCheckFixture, Sample, StepRecord, TrainReport,
    TrainingBatch,
};
