//! Probability models driving the arithmetic coder.
//!
//! All models share the [`BitModel`] interface: given the previous messages
//! of a UE, they predict each bit of the next message in order, seeing only
//! the bits already coded.

mod adaptive;
mod features;
mod gradcheck;
mod io;
mod loss;
pub mod nn;
mod rnn;
mod train;
mod transformer;

pub use adaptive::AdaptiveModel;
pub use features::{build_features, decoder_tokens, encoder_tokens, FeaturePair, FieldLabel};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport};
pub use io::{
    load_model, read_model, save_model, write_model, ModelKind, StoredModel, StoredNetwork, TrainingMeta,
    MODEL_MAGIC, MODEL_VERSION,
};
pub use loss::{bce_loss, bce_with_logits, clamped_nll};
pub use rnn::{rnn_samples, GruModel, RnnConfig, RnnSample, RnnState};
pub use train::{train, Adam, EpochStats, TrainConfig, TrainReport, Trainable};
pub use transformer::{message_samples, EncodedContext, MessageSample, ModelConfig, Transformer};
