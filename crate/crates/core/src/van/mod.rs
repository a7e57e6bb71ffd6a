//! The four-stage VAN backbone.

pub mod config;
pub mod forward;
pub mod train;
pub mod weights;

pub use config::{Preset, StageConfig, VanVariant, IMAGE_CHANNELS, TOTAL_STRIDE};
pub use forward::{
    block_forward, block_vjp, model_forward, model_loss, model_vjp, stage_forward,
    train_micro_step, ModelOutput,
};
pub use train::{synthetic_batch, train_demo, TrainDemo, DEMO_BATCH, DEMO_EXTENT, DEMO_LR};
pub use weights::{
    build_van, check_structure, skeleton_van, AttentionWeights, BlockWeights, ConvLayer,
    FfnWeights, ModelWeights, NamedTensor, Role, StageWeights, Visit,
};
