//! Shared model plumbing: the named-tensor registry that drives checkpoint
//! serialization and init policies, the train/eval mode switch, and the
//! combined encoder-decoder captioning model.

use thiserror::Error;

use crate::decoder::BertDecoder;
use crate::encoder::Cnn10Encoder;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train)
    }
}

/// What a tensor is, structurally; decides its random-init distribution and
/// whether the optimizer may touch it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Dense weight matrix or convolution kernel.
    Weight,
    Bias,
    /// Normalization scale (init 1).
    Gamma,
    /// Normalization shift (init 0).
    Beta,
    /// Embedding table.
    Embedding,
    /// Non-trainable state (running statistics); serialized, never optimized.
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::Buffer)
    }
}

/// A tensor with its dot-separated path name, e.g.
/// `decoder.block0.crossattn.wq`. Names are unique within a model.
#[derive(Debug, Clone)]
pub struct NamedTensor<F: Scalar> {
    pub name: String,
    pub tensor: Tensor<F>,
    pub kind: ParamKind,
}

impl<F: Scalar> NamedTensor<F> {
    pub fn new(name: impl Into<String>, tensor: &Tensor<F>, kind: ParamKind) -> Self {
        NamedTensor { name: name.into(), tensor: tensor.clone(), kind }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("hidden size {hidden} not divisible by {heads} heads")]
    HeadDivisibility { hidden: usize, heads: usize },
    #[error("self-attention mask is not causal: position {i} may attend to {j}")]
    NonCausalMask { i: usize, j: usize },
    #[error("decoder hidden size {decoder} does not match encoder feature size {encoder}")]
    HiddenDimMismatch { decoder: usize, encoder: usize },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("sequence of {len} tokens exceeds the {max} learned positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("decoder input must be non-empty")]
    EmptyInput,
    #[error("spectrogram has {frames} frames; at least 16 are required")]
    TimeTooShort { frames: usize },
    #[error("encoder input must be [1, T, {expected}], got {shape}")]
    BadEncoderInput { expected: usize, shape: Shape },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The full captioning model: CNN10 audio encoder feeding a BERT-style
/// causal decoder through cross-attention.
pub struct CaptionModel<F: Scalar> {
    pub encoder: Cnn10Encoder<F>,
    pub decoder: BertDecoder<F>,
}

impl<F: Scalar> CaptionModel<F> {
    pub fn new(encoder: Cnn10Encoder<F>, decoder: BertDecoder<F>) -> Result<Self, ModelError> {
        if encoder.config.hidden_dim != decoder.config.hidden {
            return Err(ModelError::HiddenDimMismatch {
                decoder: decoder.config.hidden,
                encoder: encoder.config.hidden_dim,
            });
        }
        Ok(CaptionModel { encoder, decoder })
    }

    /// Every tensor of the model under the `encoder.` / `decoder.` prefixes.
    pub fn named_tensors(&self) -> Vec<NamedTensor<F>> {
        let mut out = Vec::new();
        self.encoder.collect_tensors("encoder", &mut out);
        self.decoder.collect_tensors("decoder", &mut out);
        out
    }

    pub fn trainable_tensors(&self) -> Vec<NamedTensor<F>> {
        self.named_tensors().into_iter().filter(|nt| nt.kind.trainable()).collect()
    }
}
