//! Pre-training objectives and the training loop.

pub mod batch;
pub mod itc;
pub mod masking;
pub mod mim;
pub mod model;
pub mod optim;
pub mod schedule;
pub mod trainer;
pub mod visual_tokenizer;

pub use batch::{epoch_order, prepare_crop, steps_per_epoch, BatchLoader, CropMode, LoaderPlan, PretrainBatch};
pub use itc::{itc_loss, ItcLoss, TemperatureParam, INITIAL_TEMPERATURE};
pub use masking::{apply_mask, sample_mask, MaskPlacement, MaskSet, MaskToken, DEFAULT_MAX_MASKED};
pub use mim::{masked_token_nll, MimHead};
pub use model::{DualEncoder, MimBranch, BACKBONE_PREFIX};
pub use optim::{clip_grad_norm, grad_norm, GroupedAdamW, OptimizerConfig};
pub use schedule::{lr_at_step, ScheduleConfig};
pub use visual_tokenizer::{ColorGridTokenizer, VisualTokenizer};
pub use trainer::{LossLog, LossRecord, PretrainConfig, Pretrainer, Toggles};
