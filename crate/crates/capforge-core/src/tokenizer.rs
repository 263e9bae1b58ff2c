//! Caption text processing: normalization and WordPiece encode/decode against
//! a BERT-style vocabulary with `<soc>`/`<eoc>` caption boundary tokens.
//!
//! Normalization lowercases, strips punctuation (Unicode general categories
//! P*) and collapses whitespace. Encoding is greedy longest-match-first
//! WordPiece: per word, repeatedly take the longest vocabulary prefix, with
//! continuations carrying the `##` prefix; words with no match (or longer
//! than 100 characters) become `[UNK]`. Encoded sequences are wrapped as
//! `[<soc>, ..., <eoc>]`.

use std::collections::HashMap;

use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

pub const SOC_TOKEN: &str = "<soc>";
pub const EOC_TOKEN: &str = "<eoc>";
pub const UNK_TOKEN: &str = "[UNK]";
pub const PAD_TOKEN: &str = "[PAD]";
pub const CONTINUATION_PREFIX: &str = "##";
/// Words longer than this many characters are mapped straight to `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("duplicate token {token:?} at line {line}")]
    DuplicateToken { token: String, line: usize },
    #[error("vocabulary is missing required token {token:?}")]
    MissingSpecial { token: &'static str },
    #[error("required token {token:?} appears more than once")]
    DuplicateSpecial { token: &'static str },
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: u32, size: usize },
}

/// Immutable token table; ids are dense `0..len`, in vocab-file line order.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
    pub soc_id: u32,
    pub eoc_id: u32,
    pub unk_id: u32,
    pub pad_id: u32,
}

impl Vocabulary {
    /// Builds from vocab-file lines (one token per line, line index = id).
    pub fn from_lines<I, S>(lines: I) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = lines.into_iter().map(Into::into).collect();
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if lookup.insert(tok.clone(), i as u32).is_some() {
                return Err(TokenizerError::DuplicateToken { token: tok.clone(), line: i });
            }
        }
        let special = |name: &'static str| -> Result<u32, TokenizerError> {
            lookup.get(name).copied().ok_or(TokenizerError::MissingSpecial { token: name })
        };
        let vocab = Vocabulary {
            soc_id: special(SOC_TOKEN)?,
            eoc_id: special(EOC_TOKEN)?,
            unk_id: special(UNK_TOKEN)?,
            pad_id: special(PAD_TOKEN)?,
            tokens,
            lookup,
        };
        Ok(vocab)
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        Self::from_lines(text.lines().map(str::to_owned))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str, TokenizerError> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(TokenizerError::IdOutOfRange { id, size: self.tokens.len() })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Vocab-file representation (one token per line, trailing newline).
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }
}

/// Token id sequence; encode output always starts with `<soc>` and ends with
/// `<eoc>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Lowercases, removes punctuation, collapses whitespace. Idempotent.
pub fn normalize(text: &str) -> String {
    let stripped: String = text
        .chars()
        .flat_map(|c| c.to_lowercase())
        .filter(|c| !is_punctuation(*c))
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Greedy longest-match WordPiece split of a single word. `None` means the
/// word cannot be covered and maps to `[UNK]`.
fn wordpiece_split(word: &str, vocab: &Vocabulary) -> Option<Vec<u32>> {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > MAX_WORD_CHARS {
        return None;
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut matched = None;
        let mut end = chars.len();
        while end > start {
            let mut candidate: String = if start > 0 {
                CONTINUATION_PREFIX.to_owned()
            } else {
                String::new()
            };
            candidate.extend(&chars[start..end]);
            if let Some(id) = vocab.id(&candidate) {
                matched = Some((id, end));
                break;
            }
            end -= 1;
        }
        match matched {
            Some((id, end)) => {
                pieces.push(id);
                start = end;
            }
            None => return None,
        }
    }
    Some(pieces)
}

/// Encodes normalized text as `[<soc>, pieces..., <eoc>]`.
pub fn encode(text: &str, vocab: &Vocabulary) -> TokenSequence {
    let mut ids = vec![vocab.soc_id];
    for word in text.split_whitespace() {
        match wordpiece_split(word, vocab) {
            Some(pieces) => ids.extend(pieces),
            None => ids.push(vocab.unk_id),
        }
    }
    ids.push(vocab.eoc_id);
    TokenSequence { ids }
}

/// Inverse of `encode` on UNK-free text: strips boundary/pad ids and fuses
/// `##` continuations.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Result<String, TokenizerError> {
    let mut out = String::new();
    for &id in ids {
        if id == vocab.soc_id || id == vocab.eoc_id || id == vocab.pad_id {
            continue;
        }
        let token = vocab.token(id)?;
        if let Some(rest) = token.strip_prefix(CONTINUATION_PREFIX) {
            out.push_str(rest);
        } else {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(token);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_vocab() -> Vocabulary {
        Vocabulary::from_lines([
            "[PAD]", "[UNK]", "a", "man", "speaks", "play", "##ing", "##s", "dog", "water",
            "<soc>", "<eoc>",
        ])
        .unwrap()
    }

    #[test]
    fn vocab_ids_follow_line_order() {
        let v = test_vocab();
        assert_eq!(v.id("[PAD]"), Some(0));
        assert_eq!(v.id("man"), Some(3));
        assert_eq!(v.soc_id, 10);
        assert_eq!(v.eoc_id, 11);
        assert_eq!(v.token(8).unwrap(), "dog");
        assert!(v.token(12).is_err());
    }

    #[test]
    fn vocab_rejects_duplicates_and_missing_specials() {
        let err = Vocabulary::from_lines(["a", "a", "<soc>", "<eoc>", "[UNK]", "[PAD]"]).unwrap_err();
        assert!(matches!(err, TokenizerError::DuplicateToken { line: 1, .. }));
        let err = Vocabulary::from_lines(["a", "<soc>", "<eoc>", "[UNK]"]).unwrap_err();
        assert!(matches!(err, TokenizerError::MissingSpecial { token: "[PAD]" }));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("A man Speaks!"), "a man speaks");
        assert_eq!(normalize("  Dogs,  barking.  "), "dogs barking");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("Don't stop—now…"), "dont stopnow");
    }

    #[test]
    fn normalize_is_idempotent() {
        for s in ["A man Speaks!", "  Dogs,  barking.  ", "", "ça VA; très bien?"] {
            let once = normalize(s);
            assert_eq!(normalize(&once), once);
        }
    }

    #[test]
    fn encode_greedy_longest_match() {
        let v = test_vocab();
        // Independent longest-match oracle: scan all prefixes, keep longest.
        let oracle = |word: &str| -> Vec<String> {
            let mut out = Vec::new();
            let chars: Vec<char> = word.chars().collect();
            let mut start = 0;
            while start < chars.len() {
                let mut best: Option<(usize, String)> = None;
                for end in start + 1..=chars.len() {
                    let mut cand = if start > 0 { "##".to_owned() } else { String::new() };
                    cand.extend(&chars[start..end]);
                    if v.id(&cand).is_some() {
                        best = Some((end, cand));
                    }
                }
                let (end, tok) = best.expect("oracle word must be coverable");
                out.push(tok);
                start = end;
            }
            out
        };
        assert_eq!(oracle("playing"), vec!["play", "##ing"]);
        let seq = encode("playing", &v);
        assert_eq!(
            seq.ids,
            vec![v.soc_id, v.id("play").unwrap(), v.id("##ing").unwrap(), v.eoc_id]
        );

        let seq = encode("man", &v);
        assert_eq!(seq.ids, vec![v.soc_id, v.id("man").unwrap(), v.eoc_id]);

        // no vocab prefix at all -> UNK
        let seq = encode("zebra", &v);
        assert_eq!(seq.ids, vec![v.soc_id, v.unk_id, v.eoc_id]);
    }

    #[test]
    fn encode_wraps_and_bounds() {
        let v = test_vocab();
        for text in ["", "a man speaks", "water dogs playing"] {
            let seq = encode(text, &v);
            assert_eq!(*seq.ids.first().unwrap(), v.soc_id);
            assert_eq!(*seq.ids.last().unwrap(), v.eoc_id);
            assert!(seq.ids.iter().all(|id| (*id as usize) < v.len()));
        }
    }

    #[test]
    fn overlong_word_becomes_unk() {
        let v = test_vocab();
        let long = "a".repeat(101);
        let seq = encode(&long, &v);
        assert_eq!(seq.ids, vec![v.soc_id, v.unk_id, v.eoc_id]);
    }

    #[test]
    fn decode_examples_and_roundtrip() {
        let v = test_vocab();
        let seq = encode("playing", &v);
        assert_eq!(decode(&seq.ids, &v).unwrap(), "playing");

        assert_eq!(decode(&[v.soc_id, v.eoc_id], &v).unwrap(), "");
        assert_eq!(decode(&[v.soc_id, v.pad_id, v.eoc_id], &v).unwrap(), "");

        for w in ["a", "man", "speaks", "play", "dog", "water"] {
            let seq = encode(w, &v);
            assert_eq!(decode(&seq.ids, &v).unwrap(), w);
        }
        assert!(decode(&[99], &v).is_err());
    }

    #[test]
    fn decode_encode_identity_on_unkfree_sentences() {
        let v = test_vocab();
        for s in ["a man speaks", "dog playing", "water plays", "dogs playing"] {
            let n = normalize(s);
            let seq = encode(&n, &v);
            if !seq.ids.contains(&v.unk_id) {
                assert_eq!(decode(&seq.ids, &v).unwrap(), n);
            }
        }
    }
}
