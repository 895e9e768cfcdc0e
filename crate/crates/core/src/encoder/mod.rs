//! Miniature BERT-style encoder: subword tokenizer, post-norm transformer
//! layers, masked-LM pretraining and classification fine-tuning.
//!
//! Everything runs in `f64` with hand-written backpropagation.

mod checkpoint;
mod model;
mod optim;
mod params;
mod train;
pub mod vocab;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use model::{
    accumulate_gradients, attention, forward, forward_with, gelu, gelu_grad, softmax, window, AttentionRecord,
    ForwardOutput, Objective,
};
pub use optim::{learning_rate_at, AdamW, AdamWConfig};
pub use params::{
    init_params, reinit_top_layers, Dense, EncoderConfig, EncoderParams, FreezeFlags, InitScheme, LayerWeights, Norm,
    ParamGroup, Weights,
};
pub use train::{
    finetune, grid_search, grid_search_finetune, mask_tokens, mlm_loss, predict, predict_proba, pretrain_mlm,
    write_metrics_log, FinetuneConfig, GridCell, GridResult, MetricRecord, PretrainConfig, TrainHistory,
    DEFAULT_BATCH_SIZES, DEFAULT_LEARNING_RATES,
};
pub use vocab::{encode_text, train_subword_vocab, Encoding, SubwordVocab};
