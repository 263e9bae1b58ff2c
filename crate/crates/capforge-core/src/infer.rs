//! Autoregressive caption generation: greedy decoding and beam search with
//! widths up to 5 and a 50-token generation cap.
//!
//! Decoding runs against the [`Scorer`] abstraction (a next-token
//! log-probability stream) so the search logic is testable against stub
//! models with hand-built probability tables; the real decoder plugs in via
//! its cached [`DecodeSession`].

use crate::decoder::{BertDecoder, DecodeSession};
use crate::dsp::LogMelSpectrogram;
use crate::model::{CaptionModel, Mode, ModelError};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tokenizer::Vocabulary;
use thiserror::Error;

/// The paper's beam-width ceiling.
pub const MAX_BEAM_WIDTH: usize = 5;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("beam width {width} out of range 1..={MAX_BEAM_WIDTH}")]
    BadBeamWidth { width: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A stream of next-token log-probabilities. `advance` consumes a token;
/// `log_probs` is the distribution over the following token.
pub trait ScorerSession<F: Scalar>: Clone {
    fn advance(&mut self, token: u32) -> Result<(), ModelError>;
    fn log_probs(&self) -> &[F];
}

pub trait Scorer<F: Scalar> {
    type Session: ScorerSession<F>;
    fn vocab_size(&self) -> usize;
    fn begin(&self) -> Result<Self::Session, ModelError>;
}

impl<F: Scalar> ScorerSession<F> for DecodeSession<'_, F> {
    fn advance(&mut self, token: u32) -> Result<(), ModelError> {
        DecodeSession::advance(self, token)
    }
    fn log_probs(&self) -> &[F] {
        DecodeSession::log_probs(self)
    }
}

/// The real model as a scorer: a frozen decoder over fixed encoder features.
pub struct ModelScorer<'m, F: Scalar> {
    decoder: &'m BertDecoder<F>,
    enc_flat: Vec<F>,
    enc_rows: usize,
}

impl<'m, F: Scalar> ModelScorer<'m, F> {
    pub fn new(decoder: &'m BertDecoder<F>, enc_flat: Vec<F>, enc_rows: usize) -> Self {
        ModelScorer { decoder, enc_flat, enc_rows }
    }
}

impl<'m, F: Scalar> Scorer<F> for ModelScorer<'m, F> {
    type Session = DecodeSession<'m, F>;

    fn vocab_size(&self) -> usize {
        self.decoder.config.vocab_size
    }

    fn begin(&self) -> Result<Self::Session, ModelError> {
        DecodeSession::new(self.decoder, &self.enc_flat, self.enc_rows)
    }
}

/// A decode result: ids start with `<soc>`; `finished` distinguishes an
/// `<eoc>` ending from the length cap. The score is the cumulative
/// log-probability of the generated tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub ids: Vec<u32>,
    pub score: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Generated-token count (excludes `<soc>`).
    pub fn generated(&self) -> usize {
        self.ids.len() - 1
    }
}

/// Argmax decoding; ties resolve to the lowest token id. Stops at `<eoc>` or
/// after `max_len` generated tokens.
pub fn greedy_decode<F: Scalar, S: Scorer<F>>(
    scorer: &S,
    soc: u32,
    eoc: u32,
    max_len: usize,
) -> Result<BeamHypothesis, InferError> {
    let mut session = scorer.begin()?;
    session.advance(soc)?;
    let mut ids = vec![soc];
    let mut score = 0.0f64;
    loop {
        let logp = session.log_probs();
        let mut best = 0usize;
        for (i, v) in logp.iter().enumerate() {
            if *v > logp[best] {
                best = i;
            }
        }
        let token = best as u32;
        score += logp[best].as_f64();
        ids.push(token);
        if token == eoc {
            return Ok(BeamHypothesis { ids, score, finished: true });
        }
        if ids.len() - 1 >= max_len {
            return Ok(BeamHypothesis { ids, score, finished: true });
        }
        session.advance(token)?;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BeamConfig {
    pub width: usize,
    pub max_len: usize,
    /// Optional ranking normalization `score / len^alpha`; off by default
    /// (raw cumulative log-probabilities).
    pub length_norm_alpha: Option<f64>,
}

impl BeamConfig {
    pub fn new(width: usize) -> Self {
        BeamConfig { width, max_len: 50, length_norm_alpha: None }
    }
}

fn ranking_key(h: &BeamHypothesis, alpha: Option<f64>) -> f64 {
    match alpha {
        None => h.score,
        Some(a) => h.score / (h.generated().max(1) as f64).powf(a),
    }
}

/// Standard beam search over cumulative log-probabilities. Hypotheses ending
/// in `<eoc>` (or hitting the cap) retire to a finished pool; expansion stops
/// once `width` hypotheses have finished or no active beam remains. Returns
/// the pool ranked best-first; every returned sequence ends with `<eoc>` or
/// has `max_len` generated tokens, and nothing extends past `<eoc>`.
pub fn beam_search<F: Scalar, S: Scorer<F>>(
    scorer: &S,
    soc: u32,
    eoc: u32,
    config: &BeamConfig,
) -> Result<Vec<BeamHypothesis>, InferError> {
    let width = config.width;
    if width == 0 || width > MAX_BEAM_WIDTH {
        return Err(InferError::BadBeamWidth { width });
    }
    let mut root = scorer.begin()?;
    root.advance(soc)?;
    let mut actives: Vec<(BeamHypothesis, S::Session)> =
        vec![(BeamHypothesis { ids: vec![soc], score: 0.0, finished: false }, root)];
    let mut pool: Vec<BeamHypothesis> = Vec::new();

    while pool.len() < width && !actives.is_empty() {
        // all single-token extensions of all active beams
        let mut candidates: Vec<(f64, u32, usize)> = Vec::new();
        for (idx, (hyp, session)) in actives.iter().enumerate() {
            for (t, lp) in session.log_probs().iter().enumerate() {
                candidates.push((hyp.score + lp.as_f64(), t as u32, idx));
            }
        }
        // score desc, then token id, then beam index: deterministic
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next: Vec<(BeamHypothesis, S::Session)> = Vec::new();
        for (rank, &(score, token, idx)) in candidates.iter().take(2 * width).enumerate() {
            let parent = &actives[idx];
            let mut ids = parent.0.ids.clone();
            ids.push(token);
            let finishes = token == eoc || ids.len() - 1 >= config.max_len;
            if finishes {
                // only candidates ranked within the beam may retire; lower
                // ranks would let a worse hypothesis pre-empt live beams
                if rank < width && pool.len() < width {
                    pool.push(BeamHypothesis { ids, score, finished: true });
                }
            } else if next.len() < width {
                let mut session = parent.1.clone();
                session.advance(token)?;
                next.push((BeamHypothesis { ids, score, finished: false }, session));
            }
            if next.len() == width {
                break;
            }
        }
        actives = next;
    }
    pool.sort_by(|a, b| {
        ranking_key(b, config.length_norm_alpha)
            .partial_cmp(&ranking_key(a, config.length_norm_alpha))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.ids.cmp(&b.ids))
    });
    pool.truncate(width);
    Ok(pool)
}

/// End-to-end caption for featurized audio: encoder in eval mode, beam search
/// (width 1 is the greedy path), ids decoded back to text.
pub fn caption_spectrogram<F: Scalar>(
    model: &CaptionModel<F>,
    spec: &LogMelSpectrogram,
    vocab: &Vocabulary,
    config: &BeamConfig,
) -> Result<(String, f64), InferError> {
    let mut rng = Rng::new(0);
    let enc = crate::tensor::no_grad(|| model.encoder.encode(spec, Mode::Eval, &mut rng))?;
    let rows = enc.frames();
    let scorer = ModelScorer::new(&model.decoder, enc.features.to_vec(), rows);
    let max_len = config.max_len.min(model.decoder.config.max_len);
    let cfg = BeamConfig { max_len, ..*config };
    let best = if cfg.width == 1 {
        greedy_decode(&scorer, vocab.soc_id, vocab.eoc_id, cfg.max_len)?
    } else {
        beam_search(&scorer, vocab.soc_id, vocab.eoc_id, &cfg)?
            .into_iter()
            .next()
            .expect("beam search returns at least one hypothesis")
    };
    let text = crate::tokenizer::decode(&best.ids, vocab).expect("decoder ids are in range");
    Ok((text, best.score))
}
