//! Losses, AdamW, learning-rate schedule, classification heads, the
//! fine-tuning loop with early stopping and a wall-clock cap, and the two
//! pretraining loops.

mod fit;
mod head;
mod loss;
mod model;
mod optim;
mod pretrain;

pub use fit::{
    epoch_order, fit, nan_json, Clock, DataSplits, EarlyStopping, EpochRecord, FitReport,
    FitStatus, TickClock, TrainConfig, Trainer, WallClock,
};
pub use head::{Head, HeadConfig, HeadKind};
pub use loss::{cross_entropy, info_nce, info_nce_value, scos, softmax_and_loss, NORM_EPS};
pub use model::{head_seed, Classifier, Encoder, EncoderConfig, Evaluation, ModelKind};
pub use optim::{clip_grad_norm, cosine_warmup_lr, grad_norm, warmup_steps, AdamW, AdamWConfig};
pub use pretrain::{
    batch_masks, contrastive_loss, pretrain_contrastive, pretrain_mae, reconstruction_loss,
    step_rng, Objective, PretrainReport,
};
