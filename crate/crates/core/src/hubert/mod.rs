//! Desk-scale HuBERT-style speech branch.
//!
//! Frames are first labelled with k-means units; a small transformer then
//! learns to predict the units of masked frames through cosine-similarity
//! logits. A second round re-clusters the encoder's middle layer. For
//! emotion, a zero-initialised linear head reads the mean-pooled final layer.

mod mask;
mod model;
mod train;

pub use mask::{coverage, make_masks, MaskSpec};
pub use model::{
    cosine_logits, masked_prediction_loss, sinusoidal_positions, EncoderConfig, EncoderOutput,
    EncoderTrace, FeatureNorm, HubertModel, UnitCodebook, CHECKPOINT_KIND,
};
pub use train::{
    accuracy, discover_units, finetune, pretrain, refine_units, save_step_log, score,
    write_step_log, AudioExample, FinetuneConfig, FinetuneRun, PretrainConfig, PretrainRun,
    StepLoss,
};
