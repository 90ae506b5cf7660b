//! DETR-style decoder: self-attention, cross-attention over image keys,
//! feed-forward block and a sigmoid classification head after every layer.

mod attention;
mod config;
mod forward;
mod weights;

pub use attention::{multi_head_attention, AttentionOutput};
pub use config::{AttentionScale, DecoderConfig};
pub use forward::{
    classification_head, Decoder, DecoderOutput, ForwardCounters, ForwardOptions, HookAction,
    HookContext, LayerHook, LayerTrace, Prediction,
};
pub use weights::{
    AttentionWeights, ClassifierWeights, DecoderWeights, FeedForward, LayerWeights, NormWeights,
};
