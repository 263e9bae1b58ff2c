//! CNN10 audio encoder: four convolutional blocks (two 3x3 conv layers each,
//! batch-norm + ReLU after every conv, then 2x2 average pooling) over the
//! `[1, T, 64]` log-mel input, channel plan 64/128/256/512. After the last
//! block the frequency axis is mean-pooled away and two fully-connected
//! layers align the features with the decoder hidden size, giving
//! `I in R^{T' x D}` with `T' = floor(T / 16)`.

use crate::dsp::{LogMelSpectrogram, N_MELS};
use crate::model::{Mode, ModelError, NamedTensor, ParamKind};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{batch_norm, RunningStats, Shape, Tensor};

/// Batch-norm defaults (momentum for the running-stat fold, epsilon).
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
/// Dropout rate between the two fully-connected layers in training mode.
pub const FC_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub block_channels: [usize; 4],
    /// Output feature dimension; must match the decoder hidden size.
    pub hidden_dim: usize,
    pub input_mels: usize,
}

impl EncoderConfig {
    pub fn new(hidden_dim: usize) -> Self {
        EncoderConfig {
            block_channels: [64, 128, 256, 512],
            hidden_dim,
            input_mels: N_MELS,
        }
    }
}

/// One conv block: conv3x3 -> BN -> ReLU, twice, then 2x2 average pooling.
pub struct ConvBlock<F: Scalar> {
    pub conv1_w: Tensor<F>,
    pub conv1_b: Tensor<F>,
    pub bn1_gamma: Tensor<F>,
    pub bn1_beta: Tensor<F>,
    pub bn1_running: RunningStats<F>,
    pub conv2_w: Tensor<F>,
    pub conv2_b: Tensor<F>,
    pub bn2_gamma: Tensor<F>,
    pub bn2_beta: Tensor<F>,
    pub bn2_running: RunningStats<F>,
}

impl<F: Scalar> ConvBlock<F> {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        let gamma = || Tensor::full(vec![c_out], F::one()).requires_grad();
        let beta = || Tensor::zeros(vec![c_out]).requires_grad();
        ConvBlock {
            conv1_w: Tensor::zeros(vec![c_out, c_in, 3, 3]).requires_grad(),
            conv1_b: Tensor::zeros(vec![c_out]).requires_grad(),
            bn1_gamma: gamma(),
            bn1_beta: beta(),
            bn1_running: RunningStats::identity(c_out),
            conv2_w: Tensor::zeros(vec![c_out, c_out, 3, 3]).requires_grad(),
            conv2_b: Tensor::zeros(vec![c_out]).requires_grad(),
            bn2_gamma: gamma(),
            bn2_beta: beta(),
            bn2_running: RunningStats::identity(c_out),
        }
    }

    /// Block forward without the trailing pool (exposed for gradient checks).
    pub fn convs(&self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>, ModelError> {
        let training = mode.is_train();
        let h = x.conv2d(&self.conv1_w)?.add_channel_bias(&self.conv1_b)?;
        let h = batch_norm(&h, &self.bn1_gamma, &self.bn1_beta, &self.bn1_running, training, BN_MOMENTUM, BN_EPS)?.relu();
        let h = h.conv2d(&self.conv2_w)?.add_channel_bias(&self.conv2_b)?;
        Ok(batch_norm(&h, &self.bn2_gamma, &self.bn2_beta, &self.bn2_running, training, BN_MOMENTUM, BN_EPS)?.relu())
    }

    pub fn forward(&self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>, ModelError> {
        Ok(self.convs(x, mode)?.avg_pool2d()?)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor<F>>) {
        out.push(NamedTensor::new(format!("{prefix}.conv1.weight"), &self.conv1_w, ParamKind::Weight));
        out.push(NamedTensor::new(format!("{prefix}.conv1.bias"), &self.conv1_b, ParamKind::Bias));
        out.push(NamedTensor::new(format!("{prefix}.bn1.gamma"), &self.bn1_gamma, ParamKind::Gamma));
        out.push(NamedTensor::new(format!("{prefix}.bn1.beta"), &self.bn1_beta, ParamKind::Beta));
        out.push(NamedTensor::new(format!("{prefix}.bn1.running_mean"), &self.bn1_running.mean, ParamKind::Buffer));
        out.push(NamedTensor::new(format!("{prefix}.bn1.running_var"), &self.bn1_running.var, ParamKind::Buffer));
        out.push(NamedTensor::new(format!("{prefix}.conv2.weight"), &self.conv2_w, ParamKind::Weight));
        out.push(NamedTensor::new(format!("{prefix}.conv2.bias"), &self.conv2_b, ParamKind::Bias));
        out.push(NamedTensor::new(format!("{prefix}.bn2.gamma"), &self.bn2_gamma, ParamKind::Gamma));
        out.push(NamedTensor::new(format!("{prefix}.bn2.beta"), &self.bn2_beta, ParamKind::Beta));
        out.push(NamedTensor::new(format!("{prefix}.bn2.running_mean"), &self.bn2_running.mean, ParamKind::Buffer));
        out.push(NamedTensor::new(format!("{prefix}.bn2.running_var"), &self.bn2_running.var, ParamKind::Buffer));
    }
}

/// Encoder features `[T', D]` with `T' = floor(T / 16)`.
pub struct EncoderOutput<F: Scalar> {
    pub features: Tensor<F>,
}

impl<F: Scalar> EncoderOutput<F> {
    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }
}

pub struct Cnn10Encoder<F: Scalar> {
    pub config: EncoderConfig,
    pub blocks: Vec<ConvBlock<F>>,
    pub fc1_w: Tensor<F>,
    pub fc1_b: Tensor<F>,
    pub fc2_w: Tensor<F>,
    pub fc2_b: Tensor<F>,
}

impl<F: Scalar> Cnn10Encoder<F> {
    pub fn new(config: EncoderConfig) -> Self {
        let mut blocks = Vec::with_capacity(4);
        let mut c_in = 1;
        for &c_out in &config.block_channels {
            blocks.push(ConvBlock::new(c_in, c_out));
            c_in = c_out;
        }
        let last = config.block_channels[3];
        let d = config.hidden_dim;
        Cnn10Encoder {
            blocks,
            fc1_w: Tensor::zeros(vec![last, d]).requires_grad(),
            fc1_b: Tensor::zeros(vec![d]).requires_grad(),
            fc2_w: Tensor::zeros(vec![d, d]).requires_grad(),
            fc2_b: Tensor::zeros(vec![d]).requires_grad(),
            config,
        }
    }

    pub fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor<F>>) {
        for (i, block) in self.blocks.iter().enumerate() {
            block.collect(&format!("{prefix}.block{i}"), out);
        }
        out.push(NamedTensor::new(format!("{prefix}.fc1.weight"), &self.fc1_w, ParamKind::Weight));
        out.push(NamedTensor::new(format!("{prefix}.fc1.bias"), &self.fc1_b, ParamKind::Bias));
        out.push(NamedTensor::new(format!("{prefix}.fc2.weight"), &self.fc2_w, ParamKind::Weight));
        out.push(NamedTensor::new(format!("{prefix}.fc2.bias"), &self.fc2_b, ParamKind::Bias));
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor<F>> {
        let mut out = Vec::new();
        self.collect_tensors("encoder", &mut out);
        out
    }

    /// Forward over an already-lifted `[1, T, 64]` tensor (the gradient-check
    /// entry point; spectrogram values are constants there too).
    pub fn forward_tensor(
        &self,
        x: &Tensor<F>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<EncoderOutput<F>, ModelError> {
        let shape = x.shape();
        if shape.len() != 3 || shape[0] != 1 || shape[2] != self.config.input_mels {
            return Err(ModelError::BadEncoderInput {
                expected: self.config.input_mels,
                shape: Shape(shape.to_vec()),
            });
        }
        if shape[1] < 16 {
            return Err(ModelError::TimeTooShort { frames: shape[1] });
        }
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h, mode)?;
        }
        // [512, T', W'] -> mean over the frequency axis -> [T', 512]
        let pooled = h.mean_last_axis()?.transpose()?;
        let h = pooled.matmul(&self.fc1_w)?.add_row_broadcast(&self.fc1_b)?.relu();
        let h = h.dropout(FC_DROPOUT, mode.is_train(), rng)?;
        let features = h.matmul(&self.fc2_w)?.add_row_broadcast(&self.fc2_b)?;
        Ok(EncoderOutput { features })
    }

    /// Featurized clip -> `[T', D]` features.
    pub fn encode(
        &self,
        spec: &LogMelSpectrogram,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<EncoderOutput<F>, ModelError> {
        let t = spec.n_frames();
        let data: Vec<F> = spec.data().iter().map(|&v| F::from_f32(v)).collect();
        let x = Tensor::from_vec(vec![1, t, N_MELS], data).map_err(ModelError::Tensor)?;
        self.forward_tensor(&x, mode, rng)
    }
}

/// `T' = floor(T / 16)`: the time-resolution law of the four 2x2 pools.
pub fn output_frames(input_frames: usize) -> usize {
    input_frames / 16
}
