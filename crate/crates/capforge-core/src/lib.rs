//! capforge-core: an audio-captioning toolkit.
//!
//! The pipeline: WAV -> 64-bin log-mel spectrogram -> CNN10 convolutional
//! encoder -> BERT-style causal decoder with cross-attention -> WordPiece
//! caption, trained with Adam under a warmup + step-decay schedule and decoded
//! greedily or with beam search. Caption quality is scored with BLEU, ROUGE-L,
//! CIDEr-D and a METEOR variant.
//!
//! All tensor math is generic over the [`scalar::Scalar`] element type; the
//! shipping pipeline runs in `f32` (aliases below) and the gradient-check
//! harness re-runs the identical code in `f64`.

pub mod checkpoint;
pub mod decoder;
pub mod dsp;
pub mod encoder;
pub mod gradcheck;
pub mod infer;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use rng::Rng;
pub use scalar::Scalar;

/// Single-precision tensor: the type the training/inference pipeline runs on.
pub type Tensor32 = tensor::Tensor<f32>;
/// Double-precision tensor for shadow evaluations in verification harnesses.
pub type Tensor64 = tensor::Tensor<f64>;
