//! Caption evaluation metrics: corpus BLEU_n, ROUGE-L, CIDEr-D, a METEOR
//! variant (exact + Porter-stem matching, no WordNet stages — reported as
//! `meteor_lite` and not comparable to toolkit METEOR numbers), and the
//! SPIDEr combiner (mean of CIDEr and an externally supplied SPICE).
//!
//! Metric tokenization is caption normalization plus whitespace splitting;
//! scores are deterministic pure functions of the token lists.

pub mod porter;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::tokenizer::normalize;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("item {item} has no references")]
    NoReferences { item: usize },
    #[error("BLEU order {n} out of range 1..=4")]
    BadOrder { n: usize },
}

/// One scored item: a candidate token list against 1..=5 reference lists.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct EvalCorpus {
    pub items: Vec<EvalItem>,
}

impl EvalCorpus {
    /// Builds from raw text: normalize, then whitespace-split.
    pub fn from_texts(pairs: &[(String, Vec<String>)]) -> Result<Self, MetricsError> {
        if pairs.is_empty() {
            return Err(MetricsError::EmptyCorpus);
        }
        let tokenize = |s: &str| -> Vec<String> {
            normalize(s).split_whitespace().map(str::to_owned).collect()
        };
        let mut items = Vec::with_capacity(pairs.len());
        for (i, (candidate, references)) in pairs.iter().enumerate() {
            if references.is_empty() {
                return Err(MetricsError::NoReferences { item: i });
            }
            items.push(EvalItem {
                candidate: tokenize(candidate),
                references: references.iter().map(|r| tokenize(r)).collect(),
            });
        }
        Ok(Self { items })
    }

    fn check_nonempty(&self) -> Result<(), MetricsError> {
        if self.items.is_empty() {
            return Err(MetricsError::EmptyCorpus);
        }
        for (i, item) in self.items.iter().enumerate() {
            if item.references.is_empty() {
                return Err(MetricsError::NoReferences { item: i });
            }
        }
        Ok(())
    }
}

/// n-gram counts keyed by `\u{1f}`-joined tokens (deterministic order).
fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.join("\u{1f}")).or_insert(0) += 1;
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

/// Corpus-level BLEU_n: geometric mean of clipped modified precisions for
/// orders 1..=n, with the brevity penalty `exp(1 - r/c)` when the candidate
/// corpus is shorter than the closest-length references.
pub fn bleu(corpus: &EvalCorpus, n: usize) -> Result<f64, MetricsError> {
    if !(1..=4).contains(&n) {
        return Err(MetricsError::BadOrder { n });
    }
    corpus.check_nonempty()?;
    let mut clipped = vec![0usize; n];
    let mut totals = vec![0usize; n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for item in &corpus.items {
        let c = item.candidate.len();
        cand_len += c;
        // closest reference length; ties resolve to the shorter
        ref_len += item
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|l| (l.abs_diff(c), *l))
            .unwrap();
        for (k, slot) in clipped.iter_mut().enumerate() {
            let order = k + 1;
            let cand_counts = ngram_counts(&item.candidate, order);
            let mut max_ref: BTreeMap<String, usize> = BTreeMap::new();
            for reference in &item.references {
                for (gram, count) in ngram_counts(reference, order) {
                    let entry = max_ref.entry(gram).or_insert(0);
                    *entry = (*entry).max(count);
                }
            }
            for (gram, count) in &cand_counts {
                totals[k] += count;
                *slot += count.min(max_ref.get(gram).copied().unwrap_or(0));
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        if clipped[k] == 0 || totals[k] == 0 {
            return Ok(0.0);
        }
        log_sum += (clipped[k] as f64 / totals[k] as f64).ln();
    }
    let bp = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_sum / n as f64).exp())
}

// ---------------------------------------------------------------------------
// ROUGE-L
// ---------------------------------------------------------------------------

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut dp = vec![0usize; b.len() + 1];
    for ai in a {
        let mut prev = 0;
        for (j, bj) in b.iter().enumerate() {
            let diag = prev;
            prev = dp[j + 1];
            dp[j + 1] = if ai == bj { diag + 1 } else { dp[j + 1].max(dp[j]) };
        }
    }
    dp[b.len()]
}

/// ROUGE-L beta (the COCO evaluation convention).
pub const ROUGE_BETA: f64 = 1.2;

fn rouge_l_item(item: &EvalItem) -> f64 {
    let mut best = 0.0f64;
    for reference in &item.references {
        if item.candidate.is_empty() || reference.is_empty() {
            continue;
        }
        let lcs = lcs_len(&item.candidate, reference) as f64;
        let recall = lcs / reference.len() as f64;
        let precision = lcs / item.candidate.len() as f64;
        let denom = recall + ROUGE_BETA * ROUGE_BETA * precision;
        let f = if denom > 0.0 {
            (1.0 + ROUGE_BETA * ROUGE_BETA) * recall * precision / denom
        } else {
            0.0
        };
        best = best.max(f);
    }
    best
}

/// LCS-based F-measure, max over references per item, mean over the corpus.
pub fn rouge_l(corpus: &EvalCorpus) -> Result<f64, MetricsError> {
    corpus.check_nonempty()?;
    let per_item = rouge_l_per_item(corpus)?;
    Ok(per_item.iter().sum::<f64>() / per_item.len() as f64)
}

pub fn rouge_l_per_item(corpus: &EvalCorpus) -> Result<Vec<f64>, MetricsError> {
    corpus.check_nonempty()?;
    Ok(corpus.items.iter().map(rouge_l_item).collect())
}

// ---------------------------------------------------------------------------
// CIDEr-D
// ---------------------------------------------------------------------------

pub const CIDER_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;

/// CIDEr-D: per order 1..=4, TF-IDF vectors with clipped candidate counts,
/// cosine similarity against each reference, a Gaussian length penalty
/// (sigma 6) and a x10 scale, averaged over orders and references. IDF is
/// computed over the corpus's reference sets.
pub fn cider(corpus: &EvalCorpus) -> Result<f64, MetricsError> {
    let per_item = cider_per_item(corpus)?;
    Ok(per_item.iter().sum::<f64>() / per_item.len() as f64)
}

pub fn cider_per_item(corpus: &EvalCorpus) -> Result<Vec<f64>, MetricsError> {
    corpus.check_nonempty()?;
    // document frequency: number of items whose reference set contains the
    // n-gram (counted once per item)
    let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
    for item in &corpus.items {
        let mut seen: BTreeMap<String, ()> = BTreeMap::new();
        for reference in &item.references {
            for n in 1..=CIDER_N {
                for gram in ngram_counts(reference, n).into_keys() {
                    seen.entry(gram).or_insert(());
                }
            }
        }
        for gram in seen.into_keys() {
            *doc_freq.entry(gram).or_insert(0) += 1;
        }
    }
    let log_items = (corpus.items.len() as f64).ln();
    // tf-idf vector per order: count * (log N - log max(1, df))
    let vectorize = |tokens: &[String]| -> (Vec<BTreeMap<String, f64>>, Vec<f64>, usize) {
        let mut vecs = Vec::with_capacity(CIDER_N);
        let mut norms = Vec::with_capacity(CIDER_N);
        for n in 1..=CIDER_N {
            let mut vec_n = BTreeMap::new();
            let mut norm = 0.0f64;
            for (gram, count) in ngram_counts(tokens, n) {
                let df = doc_freq.get(&gram).copied().unwrap_or(0);
                let idf = log_items - (df.max(1) as f64).ln();
                let w = count as f64 * idf;
                norm += w * w;
                vec_n.insert(gram, w);
            }
            vecs.push(vec_n);
            norms.push(norm.sqrt());
        }
        (vecs, norms, tokens.len())
    };
    let mut scores = Vec::with_capacity(corpus.items.len());
    for item in &corpus.items {
        let (cand_vecs, cand_norms, cand_len) = vectorize(&item.candidate);
        let mut total = 0.0f64;
        for reference in &item.references {
            let (ref_vecs, ref_norms, ref_len) = vectorize(reference);
            let delta = cand_len as f64 - ref_len as f64;
            let penalty = (-delta * delta / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for n in 0..CIDER_N {
                let mut sim = 0.0f64;
                for (gram, w_cand) in &cand_vecs[n] {
                    if let Some(w_ref) = ref_vecs[n].get(gram) {
                        sim += w_cand.min(*w_ref) * w_ref;
                    }
                }
                if cand_norms[n] > 0.0 && ref_norms[n] > 0.0 {
                    sim /= cand_norms[n] * ref_norms[n];
                }
                total += sim * penalty;
            }
        }
        scores.push(10.0 * total / (CIDER_N as f64 * item.references.len() as f64));
    }
    Ok(scores)
}

// ---------------------------------------------------------------------------
// METEOR (lite)
// ---------------------------------------------------------------------------

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_GAMMA: f64 = 0.5;
pub const METEOR_BETA: f64 = 3.0;

/// In-order greedy alignment in two stages (exact words, then Porter stems).
/// Returns (matches, chunks).
fn align(candidate: &[String], reference: &[String]) -> (usize, usize) {
    let mut cand_to_ref: Vec<Option<usize>> = vec![None; candidate.len()];
    let mut ref_used = vec![false; reference.len()];
    // stage 1: exact
    for (i, word) in candidate.iter().enumerate() {
        for (j, rword) in reference.iter().enumerate() {
            if !ref_used[j] && word == rword {
                cand_to_ref[i] = Some(j);
                ref_used[j] = true;
                break;
            }
        }
    }
    // stage 2: stems
    let cand_stems: Vec<String> = candidate.iter().map(|w| porter::stem(w)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| porter::stem(w)).collect();
    for i in 0..candidate.len() {
        if cand_to_ref[i].is_some() {
            continue;
        }
        for j in 0..reference.len() {
            if !ref_used[j] && cand_stems[i] == ref_stems[j] {
                cand_to_ref[i] = Some(j);
                ref_used[j] = true;
                break;
            }
        }
    }
    let matched: Vec<(usize, usize)> = cand_to_ref
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect();
    let matches = matched.len();
    let mut chunks = 0;
    for (k, (i, j)) in matched.iter().enumerate() {
        if k == 0 || !(matched[k - 1].0 + 1 == *i && matched[k - 1].1 + 1 == *j) {
            chunks += 1;
        }
    }
    (matches, chunks)
}

fn meteor_item(item: &EvalItem) -> f64 {
    let mut best = 0.0f64;
    for reference in &item.references {
        if item.candidate.is_empty() || reference.is_empty() {
            continue;
        }
        let (matches, chunks) = align(&item.candidate, reference);
        if matches == 0 {
            continue;
        }
        let precision = matches as f64 / item.candidate.len() as f64;
        let recall = matches as f64 / reference.len() as f64;
        let f_mean = precision * recall / (METEOR_ALPHA * precision + (1.0 - METEOR_ALPHA) * recall);
        let penalty = METEOR_GAMMA * (chunks as f64 / matches as f64).powf(METEOR_BETA);
        best = best.max(f_mean * (1.0 - penalty));
    }
    best
}

/// Harmonic-mean word-matching score with a fragmentation penalty, best
/// reference per item, mean over the corpus.
pub fn meteor_lite(corpus: &EvalCorpus) -> Result<f64, MetricsError> {
    let per_item = meteor_lite_per_item(corpus)?;
    Ok(per_item.iter().sum::<f64>() / per_item.len() as f64)
}

pub fn meteor_lite_per_item(corpus: &EvalCorpus) -> Result<Vec<f64>, MetricsError> {
    corpus.check_nonempty()?;
    Ok(corpus.items.iter().map(meteor_item).collect())
}

// ---------------------------------------------------------------------------
// SPIDEr and the combined report
// ---------------------------------------------------------------------------

/// SPIDEr: the arithmetic mean of CIDEr and SPICE (SPICE computed
/// externally; scene-graph parsing is out of scope here).
pub fn spider(cider_score: f64, spice_score: f64) -> f64 {
    (cider_score + spice_score) / 2.0
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricValues {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub meteor_lite: f64,
    pub cider: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spider: Option<f64>,
}

impl MetricValues {
    fn scaled(&self, factor: f64) -> MetricValues {
        MetricValues {
            bleu_1: self.bleu_1 * factor,
            bleu_2: self.bleu_2 * factor,
            bleu_3: self.bleu_3 * factor,
            bleu_4: self.bleu_4 * factor,
            rouge_l: self.rouge_l * factor,
            meteor_lite: self.meteor_lite * factor,
            cider: self.cider * factor,
            spice: self.spice.map(|v| v * factor),
            spider: self.spider.map(|v| v * factor),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PerItemValues {
    pub rouge_l: Vec<f64>,
    pub meteor_lite: Vec<f64>,
    pub cider: Vec<f64>,
}

/// Full evaluation report: raw [0,1]-ish values plus x100 presentation
/// values, with an explicit list of deviations from the reference toolkit.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub raw: MetricValues,
    pub x100: MetricValues,
    pub per_item: PerItemValues,
    pub deviations: Vec<String>,
}

/// Computes every metric; `spice` is an externally computed score in raw
/// [0,1] terms, without which SPIDEr is omitted (with the reason recorded
/// under `deviations`).
pub fn compute_report(corpus: &EvalCorpus, spice: Option<f64>) -> Result<MetricReport, MetricsError> {
    let cider_items = cider_per_item(corpus)?;
    let cider_score = cider_items.iter().sum::<f64>() / cider_items.len() as f64;
    let mut deviations = vec![
        "meteor_lite: exact + Porter-stem stages only (no WordNet synonymy/paraphrase); not comparable to toolkit METEOR".to_owned(),
    ];
    let spider_score = match spice {
        Some(s) => Some(spider(cider_score, s)),
        None => {
            deviations.push("spider omitted: no SPICE score supplied (scene-graph parsing is external)".to_owned());
            None
        }
    };
    let raw = MetricValues {
        bleu_1: bleu(corpus, 1)?,
        bleu_2: bleu(corpus, 2)?,
        bleu_3: bleu(corpus, 3)?,
        bleu_4: bleu(corpus, 4)?,
        rouge_l: rouge_l(corpus)?,
        meteor_lite: meteor_lite(corpus)?,
        cider: cider_score,
        spice,
        spider: spider_score,
    };
    Ok(MetricReport {
        x100: raw.scaled(100.0),
        per_item: PerItemValues {
            rouge_l: rouge_l_per_item(corpus)?,
            meteor_lite: meteor_lite_per_item(corpus)?,
            cider: cider_items,
        },
        raw,
        deviations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(pairs: &[(&str, &[&str])]) -> EvalCorpus {
        let owned: Vec<(String, Vec<String>)> = pairs
            .iter()
            .map(|(c, rs)| (c.to_string(), rs.iter().map(|r| r.to_string()).collect()))
            .collect();
        EvalCorpus::from_texts(&owned).unwrap()
    }

    #[test]
    fn bleu_identity_is_one_for_all_orders() {
        let c = corpus(&[("a man speaks loudly today", &["a man speaks loudly today"])]);
        for n in 1..=4 {
            let score = bleu(&c, n).unwrap();
            assert!((score - 1.0).abs() < 1e-12, "BLEU_{n} = {score}");
        }
    }

    #[test]
    fn bleu_brevity_penalty_hand_case() {
        // candidate "the cat" vs reference "the cat sat":
        // p1 = 2/2, BP = exp(1 - 3/2) -> 0.6065
        let c = corpus(&[("the cat", &["the cat sat"])]);
        let score = bleu(&c, 1).unwrap();
        assert!((score - (1.0f64 - 1.5).exp()).abs() < 1e-12);
        assert!((score - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn bleu_clipping_hand_case() {
        // "the the the" vs "the cat": clipped unigram precision = 1/3
        let c = corpus(&[("the the the", &["the cat"])]);
        // candidate longer than reference: BP = 1, BLEU_1 = clipped precision
        let score = bleu(&c, 1).unwrap();
        assert!((score - 1.0 / 3.0).abs() < 1e-12, "{score}");
    }

    #[test]
    fn bleu_monotone_in_order_and_validates_n() {
        let c = corpus(&[
            ("a dog barks in the yard", &["a dog barks loudly in the yard"]),
            ("water runs", &["water runs fast", "water flows"]),
        ]);
        let scores: Vec<f64> = (1..=4).map(|n| bleu(&c, n).unwrap()).collect();
        for pair in scores.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{scores:?}");
        }
        assert!(matches!(bleu(&c, 0), Err(MetricsError::BadOrder { n: 0 })));
        assert!(matches!(bleu(&c, 5), Err(MetricsError::BadOrder { n: 5 })));
    }

    #[test]
    fn rouge_identity_disjoint_and_hand_case() {
        let ident = corpus(&[("a man speaks", &["a man speaks"])]);
        assert!((rouge_l(&ident).unwrap() - 1.0).abs() < 1e-12);

        let disjoint = corpus(&[("dog barks", &["water runs"])]);
        assert_eq!(rouge_l(&disjoint).unwrap(), 0.0);

        // candidate "the cat sat", reference "the cat on the mat":
        // LCS = 2, R = 2/5, P = 2/3, beta = 1.2
        let hand = corpus(&[("the cat sat", &["the cat on the mat"])]);
        let r: f64 = 2.0 / 5.0;
        let p: f64 = 2.0 / 3.0;
        let expected = (1.0 + 1.44) * r * p / (r + 1.44 * p);
        let got = rouge_l(&hand).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.478).abs() < 1e-3, "{got}");
    }

    #[test]
    fn rouge_takes_max_over_references() {
        let c = corpus(&[("a man speaks", &["water running", "a man speaks"])]);
        assert!((rouge_l(&c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cider_single_item_corpus_is_zero() {
        // IDF = log(1/1) = 0 for every n-gram: vectors vanish
        let c = corpus(&[("a man speaks", &["a man speaks"])]);
        assert_eq!(cider(&c).unwrap(), 0.0);
    }

    #[test]
    fn cider_two_item_corpus_matches_hand_oracle() {
        // Item A's candidate equals its reference; its n-grams are absent
        // from item B's references. Independent oracle: every A n-gram has
        // df = 1 so idf = ln 2; candidate == reference makes each order's
        // cosine 1 and the length penalty 1, so A scores 10 * mean(1) = 10.
        let c = corpus(&[
            ("a high tone rings", &["a high tone rings"]),
            ("low noise rumbles loudly", &["low noise rumbles loudly"]),
        ]);
        let per_item = cider_per_item(&c).unwrap();
        assert!(per_item[0] > 0.0);
        assert!((per_item[0] - 10.0).abs() < 1e-9, "{per_item:?}");
        assert!((per_item[1] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn cider_partial_overlap_oracle() {
        // Hand-computed oracle on a 2-item corpus with a partial match.
        // Item A: cand "a b", ref "a c". unigrams: df(a)=2 (in both items'
        // refs)? A refs: {a, c}; B refs: {a, d}. df(a)=2, df(c)=1, df(d)=1.
        // idf(a) = ln2 - ln2 = 0, idf(c) = ln2.
        // A: cand vec1 {a:0, b:ln2*0? b has df 0 -> idf ln2}, ref vec1
        // {a:0, c:ln2}. cosine num = min/ref products over shared grams:
        // only "a" shared with weight 0 -> sim1 = 0. bigrams: "a b" vs
        // "a c": disjoint -> 0. orders 3,4: no grams. penalty = 1.
        // score(A) = 0.
        let c = corpus(&[("a b", &["a c"]), ("x y", &["a d"])]);
        let per_item = cider_per_item(&c).unwrap();
        assert_eq!(per_item[0], 0.0, "shared gram carries zero idf");
    }

    #[test]
    fn cider_is_order_invariant() {
        let a = corpus(&[
            ("a high tone", &["a high tone then noise"]),
            ("low noise", &["a low noise", "low noise rumbling"]),
            ("silence", &["total silence"]),
        ]);
        let b = corpus(&[
            ("silence", &["total silence"]),
            ("a high tone", &["a high tone then noise"]),
            ("low noise", &["a low noise", "low noise rumbling"]),
        ]);
        let sa = cider_per_item(&a).unwrap();
        let sb = cider_per_item(&b).unwrap();
        assert!((sa[0] - sb[1]).abs() < 1e-12);
        assert!((sa[1] - sb[2]).abs() < 1e-12);
        assert!((sa[2] - sb[0]).abs() < 1e-12);
        assert!((cider(&a).unwrap() - cider(&b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn meteor_identical_pair_formula() {
        // n matched words in one chunk: score = 1 - 0.5 / n^3
        let two = corpus(&[("dogs barking", &["dogs barking"])]);
        let got = meteor_lite(&two).unwrap();
        assert!((got - 0.9375).abs() < 1e-12, "{got}");

        let three = corpus(&[("a dog barks", &["a dog barks"])]);
        let got3 = meteor_lite(&three).unwrap();
        assert!((got3 - (1.0 - 0.5 / 27.0)).abs() < 1e-12);
    }

    #[test]
    fn meteor_zero_matches_is_zero() {
        let c = corpus(&[("dog barks", &["water runs"])]);
        assert_eq!(meteor_lite(&c).unwrap(), 0.0);
    }

    #[test]
    fn meteor_stem_stage_matches_plural() {
        let c = corpus(&[("dogs", &["dog"])]);
        let got = meteor_lite(&c).unwrap();
        // single stem match, one chunk: F = 1, penalty = 0.5
        assert!((got - 0.5).abs() < 1e-12, "{got}");
    }

    #[test]
    fn spider_is_the_mean() {
        assert_eq!(spider(0.6, 0.2), 0.4);
        assert_eq!(spider(0.37, 0.37), 0.37);
        // the published mini-decoder row: CIDEr 66.7, SPICE 17.2 -> 41.95,
        // printed as 41.9 at one-decimal rounding
        let s = spider(66.7, 17.2);
        assert!((s - 41.95).abs() < 1e-12);
        assert!((s - 41.9).abs() <= 0.05 + 1e-12);
    }

    #[test]
    fn identical_candidates_max_out_all_metrics() {
        let c = corpus(&[
            ("a high tone then noise", &["a high tone then noise"]),
            ("low rumbling sound", &["low rumbling sound", "a low rumble"]),
        ]);
        for n in 1..=4 {
            assert!((bleu(&c, n).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((rouge_l(&c).unwrap() - 1.0).abs() < 1e-12);
        let meteor = meteor_lite(&c).unwrap();
        let expect = (1.0 - 0.5 / 125.0 + 1.0 - 0.5 / 27.0) / 2.0;
        assert!((meteor - expect).abs() < 1e-12);
    }

    #[test]
    fn report_carries_deviations_and_scaling() {
        let c = corpus(&[
            ("a high tone", &["a high tone"]),
            ("low noise", &["low noise here"]),
        ]);
        let report = compute_report(&c, None).unwrap();
        assert!(report.raw.spider.is_none());
        assert_eq!(report.deviations.len(), 2);
        assert!((report.x100.bleu_1 - report.raw.bleu_1 * 100.0).abs() < 1e-9);
        assert_eq!(report.per_item.cider.len(), 2);

        let with_spice = compute_report(&c, Some(0.2)).unwrap();
        let expected = spider(with_spice.raw.cider, 0.2);
        assert_eq!(with_spice.raw.spider.unwrap(), expected);
        assert_eq!(with_spice.deviations.len(), 1);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty = EvalCorpus { items: vec![] };
        assert!(matches!(bleu(&empty, 1), Err(MetricsError::EmptyCorpus)));
        assert!(matches!(rouge_l(&empty), Err(MetricsError::EmptyCorpus)));
        assert!(matches!(cider(&empty), Err(MetricsError::EmptyCorpus)));
        assert!(matches!(meteor_lite(&empty), Err(MetricsError::EmptyCorpus)));
        assert!(EvalCorpus::from_texts(&[]).is_err());
        assert!(EvalCorpus::from_texts(&[("x".into(), vec![])]).is_err());
    }
}
