//! Desk-scale generative stack: tokenization with shared rotary encoding and
//! domain embeddings, a transformer velocity predictor with optional
//! cross-domain attention and LoRA adapters, flow-matching training and an
//! Euler sampler.

mod attention;
mod data;
mod flow;
mod model;
mod tokens;
mod train;

pub use attention::{cross_domain_attention, lora_apply, AttentionWeights, CdsaMode};
pub use data::{moving_quad_dataset, moving_quad_video, LatentPipeline, QuadConfig};
pub use flow::{fm_interpolate, fm_loss, noise, noise_from, sample, VelocityField, DEFAULT_SAMPLE_STEPS};
pub use model::{
    time_features, token_layout, Condition, LatentPair, LoraConfig, ModelConfig, ModelInput, TokenLayout, Trainable,
    VelocityModel,
};
pub use tokens::{
    encode_tokens, patch_grid, patchify, patchify_tensor, unpatchify, unpatchify_tensor, DomainEmbeddings, Patch, Rope,
    TokenSequence,
};
pub use train::{
    build_loss_graph, heldout_loss, load_checkpoint, save_checkpoint, train, train_step, train_step_on, AdamW,
    LossItem, TrainConfig, TrainReport, TrainSample, TrainState, MANIFEST_FILE,
};
