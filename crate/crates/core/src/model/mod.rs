//! The TCM attention module, Conformer/Transformer blocks and the classifier.

mod attention;
mod blocks;
mod classifier;
mod config;
mod layers;
mod params;

pub use attention::{
    attention_forward, enrich_cls, generate_head_tokens, mhsa_forward, prepend_cls, tcm_attention, tcm_forward,
    TokenSequence,
};
pub use blocks::{block_forward, conformer_block_forward, conv_module, transformer_block_forward};
pub use classifier::{
    analytic_tcm_delta, param_count, param_report, project_features, sinusoidal_table, tcm_delta, Classifier,
    ForwardPass, ParamReport, Score, BONAFIDE, SPOOF,
};
pub use config::{AblationVariant, BlockKind, ModelConfig, PositionalEncoding, TcmToggles};
pub use layers::{feed_forward, Activation, Dropout};
pub use params::{
    classifier_layout, AttentionParams, Binder, BlockParams, ClassifierParams, ConformerParams, ConvModuleParams,
    FeedForwardParams, HeadTokenParams, Init, Initializer, Linear, MhsaParams, Norm, ParamSource, ParamStore,
    TransformerParams,
};
