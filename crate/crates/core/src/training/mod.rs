//! Supervised training with a freeze schedule, self-supervised pretraining,
//! and evaluation.

pub mod prep;
pub mod pretrain;
pub mod supervised;

pub use prep::{center_crop, clip_features, feature_examples, waveform_examples};
pub use pretrain::{contrastive_batch, ContrastiveBatch, contrastive_eval, pretrain_selfsupervised, PretrainConfig, PretrainReport};
pub use supervised::{
    active_params, evaluate, evaluate_logits, predict, stack_inputs, train_supervised, EpochRecord, Evaluation,
    Example, FreezeSchedule, LossKind, SplitData, StepRecord, TrainConfig, TrainHistory,
};
