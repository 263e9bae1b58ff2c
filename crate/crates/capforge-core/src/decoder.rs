//! BERT-style language decoder adapted for captioning: causal multi-head
//! self-attention, cross-attention over encoder features inserted after it,
//! and a GELU feed-forward, each sub-layer wrapped post-norm as
//! `LayerNorm(x + Dropout(Sublayer(x)))`. Token logits are produced through
//! the transposed input embedding matrix (tied weights: one storage, two
//! uses).
//!
//! Attention follows `Attn(Q,K,V) = Softmax((W^q Q)(W^k K)^T / sqrt(d)) W^v V`
//! per head, with `d` the per-head dimension `hidden / num_heads`, plus the
//! standard output projection `wo`. For cross-attention the queries come from
//! the decoder state and the keys/values from the encoder output:
//! `CrossAttn(H, I) = Attn(H, I, I)`.

use crate::model::{Mode, ModelError, NamedTensor, ParamKind};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Layer-norm epsilon (BERT convention).
pub const LN_EPS: f64 = 1e-12;
/// Additive mask value; exp() underflows to exactly 0 at this magnitude.
const MASK_NEG: f64 = -1e9;

/// Decoder architecture configuration. The named presets mirror the
/// published compact-BERT family sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub num_heads: usize,
    pub hidden: usize,
    /// Feed-forward inner dimension; defaults to `4 * hidden`.
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Generation cap (tokens after `<soc>`).
    pub max_len: usize,
    /// Learned positions available to the decoder.
    pub max_positions: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(num_blocks: usize, num_heads: usize, hidden: usize, vocab_size: usize) -> Self {
        ModelConfig {
            num_blocks,
            num_heads,
            hidden,
            ffn_dim: 4 * hidden,
            vocab_size,
            max_len: 50,
            max_positions: 512,
            dropout: 0.2,
        }
    }

    /// Named presets: tiny(2,2,128), mini(4,4,256), medium(6,8,512),
    /// base(12,12,768), roberta_base(12,12,768).
    pub fn preset(name: &str, vocab_size: usize) -> Option<Self> {
        let (blocks, heads, hidden) = match name {
            "tiny" => (2, 2, 128),
            "mini" => (4, 4, 256),
            "medium" => (6, 8, 512),
            "base" => (12, 12, 768),
            "roberta_base" => (12, 12, 768),
            _ => return None,
        };
        Some(Self::new(blocks, heads, hidden, vocab_size))
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["tiny", "mini", "medium", "base", "roberta_base"]
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden % self.num_heads != 0 {
            return Err(ModelError::HeadDivisibility {
                hidden: self.hidden,
                heads: self.num_heads,
            });
        }
        Ok(())
    }
}

/// The learnable matrices of one attention sub-layer. All are `[D, D]`
/// (applied as `y = x . W + b`); `wo` is the standard output projection over
/// the concatenated heads.
pub struct AttentionParams<F: Scalar> {
    pub wq: Tensor<F>,
    pub bq: Tensor<F>,
    pub wk: Tensor<F>,
    pub bk: Tensor<F>,
    pub wv: Tensor<F>,
    pub bv: Tensor<F>,
    pub wo: Tensor<F>,
    pub bo: Tensor<F>,
    pub num_heads: usize,
}

impl<F: Scalar> AttentionParams<F> {
    fn new(hidden: usize, num_heads: usize) -> Self {
        let mat = || Tensor::zeros(vec![hidden, hidden]);
        let vecp = || Tensor::zeros(vec![hidden]);
        AttentionParams {
            wq: mat().requires_grad(),
            bq: vecp().requires_grad(),
            wk: mat().requires_grad(),
            bk: vecp().requires_grad(),
            wv: mat().requires_grad(),
            bv: vecp().requires_grad(),
            wo: mat().requires_grad(),
            bo: vecp().requires_grad(),
            num_heads,
        }
    }

    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor<F>>) {
        out.push(NamedTensor::new(format!("{prefix}.wq"), &self.wq, ParamKind::Weight));
        out.push(NamedTensor::new(format!("{prefix}.bq"), &self.bq, ParamKind::Bias));
        out.push(NamedTensor::new(format!("{prefix}.wk"), &self.wk, ParamKind::Weight));
        out.push(NamedTensor::new(format!("{prefix}.bk"), &self.bk, ParamKind::Bias));
        out.push(NamedTensor::new(format!("{prefix}.wv"), &self.wv, ParamKind::Weight));
        out.push(NamedTensor::new(format!("{prefix}.bv"), &self.bv, ParamKind::Bias));
        out.push(NamedTensor::new(format!("{prefix}.wo"), &self.wo, ParamKind::Weight));
        out.push(NamedTensor::new(format!("{prefix}.bo"), &self.bo, ParamKind::Bias));
    }
}

struct LayerNormParams<F: Scalar> {
    gamma: Tensor<F>,
    beta: Tensor<F>,
}

impl<F: Scalar> LayerNormParams<F> {
    fn new(dim: usize) -> Self {
        LayerNormParams {
            gamma: Tensor::full(vec![dim], F::one()).requires_grad(),
            beta: Tensor::zeros(vec![dim]).requires_grad(),
        }
    }

    fn apply(&self, x: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        Ok(x.layer_norm(&self.gamma, &self.beta, LN_EPS)?)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor<F>>) {
        out.push(NamedTensor::new(format!("{prefix}.gamma"), &self.gamma, ParamKind::Gamma));
        out.push(NamedTensor::new(format!("{prefix}.beta"), &self.beta, ParamKind::Beta));
    }
}

struct FeedForwardParams<F: Scalar> {
    w1: Tensor<F>,
    b1: Tensor<F>,
    w2: Tensor<F>,
    b2: Tensor<F>,
}

impl<F: Scalar> FeedForwardParams<F> {
    fn new(hidden: usize, ffn_dim: usize) -> Self {
        FeedForwardParams {
            w1: Tensor::zeros(vec![hidden, ffn_dim]).requires_grad(),
            b1: Tensor::zeros(vec![ffn_dim]).requires_grad(),
            w2: Tensor::zeros(vec![ffn_dim, hidden]).requires_grad(),
            b2: Tensor::zeros(vec![hidden]).requires_grad(),
        }
    }

    fn apply(&self, x: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        let h = x.matmul(&self.w1)?.add_row_broadcast(&self.b1)?.gelu();
        Ok(h.matmul(&self.w2)?.add_row_broadcast(&self.b2)?)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor<F>>) {
        out.push(NamedTensor::new(format!("{prefix}.w1"), &self.w1, ParamKind::Weight));
        out.push(NamedTensor::new(format!("{prefix}.b1"), &self.b1, ParamKind::Bias));
        out.push(NamedTensor::new(format!("{prefix}.w2"), &self.w2, ParamKind::Weight));
        out.push(NamedTensor::new(format!("{prefix}.b2"), &self.b2, ParamKind::Bias));
    }
}

struct DecoderBlock<F: Scalar> {
    self_attn: AttentionParams<F>,
    self_ln: LayerNormParams<F>,
    cross_attn: AttentionParams<F>,
    cross_ln: LayerNormParams<F>,
    ffn: FeedForwardParams<F>,
    ffn_ln: LayerNormParams<F>,
}

impl<F: Scalar> DecoderBlock<F> {
    fn new(cfg: &ModelConfig) -> Self {
        DecoderBlock {
            self_attn: AttentionParams::new(cfg.hidden, cfg.num_heads),
            self_ln: LayerNormParams::new(cfg.hidden),
            cross_attn: AttentionParams::new(cfg.hidden, cfg.num_heads),
            cross_ln: LayerNormParams::new(cfg.hidden),
            ffn: FeedForwardParams::new(cfg.hidden, cfg.ffn_dim),
            ffn_ln: LayerNormParams::new(cfg.hidden),
        }
    }
}

/// Boolean attention mask over an `N x T` score matrix; `allowed[i][j]` says
/// query position `i` may attend to key position `j`.
#[derive(Debug, Clone)]
pub struct AttnMask {
    allowed: Vec<bool>,
    rows: usize,
    cols: usize,
}

impl AttnMask {
    /// Lower-triangular causal mask over `n` positions.
    pub fn causal(n: usize) -> Self {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                allowed[i * n + j] = true;
            }
        }
        AttnMask { allowed, rows: n, cols: n }
    }

    /// Causal mask that additionally hides padding keys.
    pub fn causal_with_pads(ids: &[u32], pad_id: u32) -> Self {
        let n = ids.len();
        let mut mask = Self::causal(n);
        for (j, &id) in ids.iter().enumerate() {
            if id == pad_id {
                for i in 0..n {
                    mask.allowed[i * n + j] = false;
                }
            }
        }
        mask
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    /// Verifies no position attends beyond itself.
    pub fn verify_causal(&self) -> Result<(), ModelError> {
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                if self.allows(i, j) {
                    return Err(ModelError::NonCausalMask { i, j });
                }
            }
        }
        Ok(())
    }

    /// Additive form: 0 where allowed, a large negative constant elsewhere.
    fn additive<F: Scalar>(&self) -> Tensor<F> {
        let data: Vec<F> = self
            .allowed
            .iter()
            .map(|&a| if a { F::zero() } else { F::from_f64(MASK_NEG) })
            .collect();
        Tensor::from_vec(vec![self.rows, self.cols], data).expect("mask shape")
    }
}

/// Multi-head scaled dot-product attention over already-projected inputs.
/// Queries come from `queries_from` (`[N, D]`), keys and values from
/// `keys_values_from` (`[T, D]`). Returns the `wo`-projected context without
/// residual or normalization.
pub fn attention<F: Scalar>(
    params: &AttentionParams<F>,
    queries_from: &Tensor<F>,
    keys_values_from: &Tensor<F>,
    mask: Option<&AttnMask>,
) -> Result<Tensor<F>, ModelError> {
    let d = queries_from.shape()[1];
    let heads = params.num_heads;
    let dh = d / heads;
    let q = queries_from.matmul(&params.wq)?.add_row_broadcast(&params.bq)?;
    let k = keys_values_from.matmul(&params.wk)?.add_row_broadcast(&params.bk)?;
    let v = keys_values_from.matmul(&params.wv)?.add_row_broadcast(&params.bv)?;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let additive = mask.map(|m| m.additive::<F>());
    let mut contexts = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = q.slice_cols(lo, hi)?;
        let kh = k.slice_cols(lo, hi)?;
        let vh = v.slice_cols(lo, hi)?;
        let mut scores = qh.matmul_t(&kh)?.scale(scale);
        if let Some(m) = &additive {
            scores = scores.add(m)?;
        }
        let weights = scores.softmax(1)?;
        contexts.push(weights.matmul(&vh)?);
    }
    let concat = Tensor::concat_cols(&contexts)?;
    Ok(concat.matmul(&params.wo)?.add_row_broadcast(&params.bo)?)
}

/// Causal multi-head self-attention plus residual: rejects any mask that
/// would let a position see the future; the caller applies the layer norm.
pub fn causal_self_attention<F: Scalar>(
    hidden: &Tensor<F>,
    params: &AttentionParams<F>,
    mask: &AttnMask,
) -> Result<Tensor<F>, ModelError> {
    mask.verify_causal()?;
    let attn = attention(params, hidden, hidden, Some(mask))?;
    Ok(attn.add(hidden)?)
}

/// Cross-attention `Attn(H, I, I)` plus residual; queries from the decoder
/// state `hidden`, keys/values from the encoder output `enc`.
pub fn cross_attention<F: Scalar>(
    hidden: &Tensor<F>,
    enc: &Tensor<F>,
    params: &AttentionParams<F>,
) -> Result<Tensor<F>, ModelError> {
    if enc.shape()[1] != hidden.shape()[1] {
        return Err(ModelError::HiddenDimMismatch {
            decoder: hidden.shape()[1],
            encoder: enc.shape()[1],
        });
    }
    let attn = attention(params, hidden, enc, None)?;
    Ok(attn.add(hidden)?)
}

/// The language decoder. Construct with [`BertDecoder::new`] (all tensors
/// zeroed) and initialize through the checkpoint module's init policy.
pub struct BertDecoder<F: Scalar> {
    pub config: ModelConfig,
    token_embed: Tensor<F>,
    pos_embed: Tensor<F>,
    out_bias: Tensor<F>,
    blocks: Vec<DecoderBlock<F>>,
}

impl<F: Scalar> BertDecoder<F> {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let blocks = (0..config.num_blocks).map(|_| DecoderBlock::new(&config)).collect();
        Ok(BertDecoder {
            token_embed: Tensor::zeros(vec![config.vocab_size, config.hidden]).requires_grad(),
            pos_embed: Tensor::zeros(vec![config.max_positions, config.hidden]).requires_grad(),
            out_bias: Tensor::zeros(vec![config.vocab_size]).requires_grad(),
            blocks,
            config,
        })
    }

    /// The tied embedding/classification matrix (one storage for both roles).
    pub fn token_embedding(&self) -> &Tensor<F> {
        &self.token_embed
    }

    pub fn position_embedding(&self) -> &Tensor<F> {
        &self.pos_embed
    }

    pub fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor<F>>) {
        out.push(NamedTensor::new(format!("{prefix}.embed.token"), &self.token_embed, ParamKind::Embedding));
        out.push(NamedTensor::new(format!("{prefix}.embed.position"), &self.pos_embed, ParamKind::Embedding));
        out.push(NamedTensor::new(format!("{prefix}.out_bias"), &self.out_bias, ParamKind::Bias));
        for (k, block) in self.blocks.iter().enumerate() {
            block.self_attn.collect(&format!("{prefix}.block{k}.selfattn"), out);
            block.self_ln.collect(&format!("{prefix}.block{k}.selfattn.ln"), out);
            block.cross_attn.collect(&format!("{prefix}.block{k}.crossattn"), out);
            block.cross_ln.collect(&format!("{prefix}.block{k}.crossattn.ln"), out);
            block.ffn.collect(&format!("{prefix}.block{k}.ffn"), out);
            block.ffn_ln.collect(&format!("{prefix}.block{k}.ffn.ln"), out);
        }
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor<F>> {
        let mut out = Vec::new();
        self.collect_tensors("decoder", &mut out);
        out
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if ids.len() > self.config.max_positions {
            return Err(ModelError::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_positions,
            });
        }
        for &id in ids {
            if id as usize >= self.config.vocab_size {
                return Err(ModelError::TokenOutOfRange { id, vocab: self.config.vocab_size });
            }
        }
        Ok(())
    }

    /// Full teacher-forcing forward: token + position embeddings, then per
    /// block causal self-attention, cross-attention over `enc` (skipped when
    /// `None`, the language-model pretraining arrangement), and feed-forward,
    /// each post-norm with dropout in training mode. Returns `[N, vocab]`
    /// logits through the tied embedding matrix.
    ///
    /// `pad_id`, when given, hides padding keys from self-attention; padded
    /// positions still produce logits and must be masked in the loss.
    pub fn forward(
        &self,
        ids: &[u32],
        enc: Option<&Tensor<F>>,
        mode: Mode,
        rng: &mut Rng,
        pad_id: Option<u32>,
    ) -> Result<Tensor<F>, ModelError> {
        self.check_ids(ids)?;
        let n = ids.len();
        let token_ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..n).collect();
        let tok = self.token_embed.embedding(&token_ids)?;
        let pos = self.pos_embed.embedding(&positions)?;
        let mut x = tok.add(&pos)?;
        let mask = match pad_id {
            Some(pad) => AttnMask::causal_with_pads(ids, pad),
            None => AttnMask::causal(n),
        };
        let training = mode.is_train();
        let rate = self.config.dropout;
        for block in &self.blocks {
            let a = attention(&block.self_attn, &x, &x, Some(&mask))?;
            x = block.self_ln.apply(&a.dropout(rate, training, rng)?.add(&x)?)?;
            if let Some(enc) = enc {
                if enc.shape()[1] != self.config.hidden {
                    return Err(ModelError::HiddenDimMismatch {
                        decoder: self.config.hidden,
                        encoder: enc.shape()[1],
                    });
                }
                let c = attention(&block.cross_attn, &x, enc, None)?;
                x = block.cross_ln.apply(&c.dropout(rate, training, rng)?.add(&x)?)?;
            }
            let f = block.ffn.apply(&x)?;
            x = block.ffn_ln.apply(&f.dropout(rate, training, rng)?.add(&x)?)?;
        }
        // Tied output head: logits through the transposed embedding matrix.
        Ok(x.matmul_t(&self.token_embed)?.add_row_broadcast(&self.out_bias)?)
    }

    /// Log-probabilities of the next token given a full prefix, by
    /// recomputing the forward pass (the reference for the cached session).
    pub fn next_token_log_probs(
        &self,
        ids: &[u32],
        enc: Option<&Tensor<F>>,
    ) -> Result<Vec<F>, ModelError> {
        let mut rng = Rng::new(0);
        let logits = crate::tensor::no_grad(|| self.forward(ids, enc, Mode::Eval, &mut rng, None))?;
        let logp = logits.log_softmax(1)?;
        let v = self.config.vocab_size;
        let data = logp.to_vec();
        Ok(data[(ids.len() - 1) * v..].to_vec())
    }
}

// ---------------------------------------------------------------------------
// Incremental decoding with cached keys/values
// ---------------------------------------------------------------------------

/// Autoregressive decoding state over a frozen decoder: per-block key/value
/// caches grow one row per consumed token; cross-attention keys/values are
/// projected once from the encoder output. This is the optimized counterpart
/// of [`BertDecoder::next_token_log_probs`] and is held to it by tests.
pub struct DecodeSession<'m, F: Scalar> {
    decoder: &'m BertDecoder<F>,
    self_k: Vec<Vec<F>>,
    self_v: Vec<Vec<F>>,
    cross_k: Vec<Vec<F>>,
    cross_v: Vec<Vec<F>>,
    enc_rows: usize,
    consumed: usize,
    log_probs: Vec<F>,
}

impl<F: Scalar> Clone for DecodeSession<'_, F> {
    fn clone(&self) -> Self {
        DecodeSession {
            decoder: self.decoder,
            self_k: self.self_k.clone(),
            self_v: self.self_v.clone(),
            cross_k: self.cross_k.clone(),
            cross_v: self.cross_v.clone(),
            enc_rows: self.enc_rows,
            consumed: self.consumed,
            log_probs: self.log_probs.clone(),
        }
    }
}

fn vecmat<F: Scalar>(x: &[F], w: &[F], bias: &[F], out_dim: usize) -> Vec<F> {
    let mut out = bias.to_vec();
    debug_assert_eq!(out.len(), out_dim);
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * out_dim..(i + 1) * out_dim];
        for (o, wv) in out.iter_mut().zip(row.iter()) {
            *o += xi * *wv;
        }
    }
    out
}

fn layer_norm_row<F: Scalar>(x: &mut [F], gamma: &[F], beta: &[F]) {
    let d = x.len();
    let inv_d = F::one() / F::from_f64(d as f64);
    let mean = x.iter().copied().sum::<F>() * inv_d;
    let var = x.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() * inv_d;
    let istd = F::one() / (var + F::from_f64(LN_EPS)).sqrt();
    for j in 0..d {
        x[j] = gamma[j] * (x[j] - mean) * istd + beta[j];
    }
}

fn gelu_scalar<F: Scalar>(x: F) -> F {
    let c = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = F::from_f64(0.044715);
    F::from_f64(0.5) * x * (F::one() + (c * (x + k * x * x * x)).tanh())
}

impl<'m, F: Scalar> DecodeSession<'m, F> {
    /// Opens a session over encoder features (`[T', D]` flattened,
    /// `enc_rows` rows). Cross K/V are projected here, once.
    pub fn new(decoder: &'m BertDecoder<F>, enc: &[F], enc_rows: usize) -> Result<Self, ModelError> {
        let d = decoder.config.hidden;
        if enc_rows * d != enc.len() {
            return Err(ModelError::HiddenDimMismatch {
                decoder: d,
                encoder: if enc_rows == 0 { 0 } else { enc.len() / enc_rows },
            });
        }
        let mut cross_k = Vec::with_capacity(decoder.blocks.len());
        let mut cross_v = Vec::with_capacity(decoder.blocks.len());
        for block in &decoder.blocks {
            let wk = block.cross_attn.wk.to_vec();
            let bk = block.cross_attn.bk.to_vec();
            let wv = block.cross_attn.wv.to_vec();
            let bv = block.cross_attn.bv.to_vec();
            let mut k_rows = Vec::with_capacity(enc_rows * d);
            let mut v_rows = Vec::with_capacity(enc_rows * d);
            for t in 0..enc_rows {
                let row = &enc[t * d..(t + 1) * d];
                k_rows.extend(vecmat(row, &wk, &bk, d));
                v_rows.extend(vecmat(row, &wv, &bv, d));
            }
            cross_k.push(k_rows);
            cross_v.push(v_rows);
        }
        Ok(DecodeSession {
            decoder,
            self_k: vec![Vec::new(); decoder.blocks.len()],
            self_v: vec![Vec::new(); decoder.blocks.len()],
            cross_k,
            cross_v,
            enc_rows,
            consumed: 0,
            log_probs: Vec::new(),
        })
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    /// Log-softmax over the next-token distribution after the last `advance`.
    pub fn log_probs(&self) -> &[F] {
        &self.log_probs
    }

    /// Feeds one token and refreshes the next-token distribution.
    pub fn advance(&mut self, token: u32) -> Result<(), ModelError> {
        let cfg = &self.decoder.config;
        let d = cfg.hidden;
        let heads = cfg.num_heads;
        let dh = d / heads;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        if token as usize >= cfg.vocab_size {
            return Err(ModelError::TokenOutOfRange { id: token, vocab: cfg.vocab_size });
        }
        let pos = self.consumed;
        if pos >= cfg.max_positions {
            return Err(ModelError::SequenceTooLong { len: pos + 1, max: cfg.max_positions });
        }
        let tok_table = self.decoder.token_embed.data_ref();
        let pos_table = self.decoder.pos_embed.data_ref();
        let mut x: Vec<F> = (0..d)
            .map(|j| tok_table[token as usize * d + j] + pos_table[pos * d + j])
            .collect();
        drop(tok_table);
        drop(pos_table);

        for (b, block) in self.decoder.blocks.iter().enumerate() {
            // self-attention over the cached prefix plus this row
            let q = vecmat(&x, &block.self_attn.wq.data_ref(), &block.self_attn.bq.data_ref(), d);
            let k = vecmat(&x, &block.self_attn.wk.data_ref(), &block.self_attn.bk.data_ref(), d);
            let v = vecmat(&x, &block.self_attn.wv.data_ref(), &block.self_attn.bv.data_ref(), d);
            self.self_k[b].extend_from_slice(&k);
            self.self_v[b].extend_from_slice(&v);
            let rows = pos + 1;
            let ctx = attend_row(&q, &self.self_k[b], &self.self_v[b], rows, heads, dh, scale);
            let mut attn_out = vecmat(&ctx, &block.self_attn.wo.data_ref(), &block.self_attn.bo.data_ref(), d);
            for j in 0..d {
                attn_out[j] += x[j];
            }
            layer_norm_row(&mut attn_out, &block.self_ln.gamma.data_ref(), &block.self_ln.beta.data_ref());
            let mut x2 = attn_out;

            // cross-attention over the precomputed encoder keys/values
            if self.enc_rows > 0 {
                let q = vecmat(&x2, &block.cross_attn.wq.data_ref(), &block.cross_attn.bq.data_ref(), d);
                let ctx = attend_row(&q, &self.cross_k[b], &self.cross_v[b], self.enc_rows, heads, dh, scale);
                let mut cross_out =
                    vecmat(&ctx, &block.cross_attn.wo.data_ref(), &block.cross_attn.bo.data_ref(), d);
                for j in 0..d {
                    cross_out[j] += x2[j];
                }
                layer_norm_row(&mut cross_out, &block.cross_ln.gamma.data_ref(), &block.cross_ln.beta.data_ref());
                x2 = cross_out;
            }

            // feed-forward
            let h = vecmat(&x2, &block.ffn.w1.data_ref(), &block.ffn.b1.data_ref(), cfg.ffn_dim);
            let h: Vec<F> = h.into_iter().map(gelu_scalar).collect();
            let mut f = vecmat(&h, &block.ffn.w2.data_ref(), &block.ffn.b2.data_ref(), d);
            for j in 0..d {
                f[j] += x2[j];
            }
            layer_norm_row(&mut f, &block.ffn_ln.gamma.data_ref(), &block.ffn_ln.beta.data_ref());
            x = f;
        }

        // tied output head + log-softmax
        let table = self.decoder.token_embed.data_ref();
        let bias = self.decoder.out_bias.data_ref();
        let v_size = cfg.vocab_size;
        let mut logits = Vec::with_capacity(v_size);
        for t in 0..v_size {
            let row = &table[t * d..(t + 1) * d];
            let dot: F = row.iter().zip(x.iter()).map(|(a, b)| *a * *b).sum();
            logits.push(dot + bias[t]);
        }
        drop(table);
        drop(bias);
        let mut max = F::neg_infinity();
        for &l in &logits {
            max = max.max(l);
        }
        let lse = max + logits.iter().map(|l| (*l - max).exp()).sum::<F>().ln();
        self.log_probs = logits.into_iter().map(|l| l - lse).collect();
        self.consumed += 1;
        Ok(())
    }
}

/// One query row attending over `rows` cached key/value rows, per head.
fn attend_row<F: Scalar>(
    q: &[F],
    keys: &[F],
    values: &[F],
    rows: usize,
    heads: usize,
    dh: usize,
    scale: F,
) -> Vec<F> {
    let d = heads * dh;
    let mut ctx = vec![F::zero(); d];
    let mut scores = vec![F::zero(); rows];
    for h in 0..heads {
        let lo = h * dh;
        let mut max = F::neg_infinity();
        for (r, score) in scores.iter_mut().enumerate() {
            let krow = &keys[r * d + lo..r * d + lo + dh];
            let dot: F = q[lo..lo + dh].iter().zip(krow.iter()).map(|(a, b)| *a * *b).sum();
            *score = dot * scale;
            max = max.max(*score);
        }
        let mut total = F::zero();
        for score in scores.iter_mut() {
            *score = (*score - max).exp();
            total += *score;
        }
        for (r, score) in scores.iter().enumerate() {
            let w = *score / total;
            let vrow = &values[r * d + lo..r * d + lo + dh];
            for (c, vv) in ctx[lo..lo + dh].iter_mut().zip(vrow.iter()) {
                *c += w * *vv;
            }
        }
    }
    ctx
}
