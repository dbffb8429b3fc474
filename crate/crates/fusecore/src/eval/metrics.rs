//! Text-overlap metrics over the model tokenizer's word segmentation
//! (lowercased): corpus-level clipped n-gram precision with brevity
//! penalty, longest-common-subsequence F-measure, TF-IDF n-gram cosine
//! similarity, and exact-match accuracy for multiple choice.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};
use crate::reasoner::Vocabulary;

pub const MAX_NGRAM: usize = 4;
const BLEU_EPSILON: f64 = 1e-9;
/// ROUGE-L recall weight (beta squared = 1.2^2).
const ROUGE_BETA_SQ: f64 = 1.44;

/// Word segmentation used by every metric: the model tokenizer's view of
/// the text, reserved ids dropped.
pub fn metric_tokens(vocab: &Vocabulary, text: &str) -> Vec<String> {
    vocab
        .tokenize(text)
        .into_iter()
        .filter(|&id| !vocab.is_reserved(id))
        .map(|id| vocab.token(id).expect("tokenizer emits known ids").to_string())
        .collect()
}

/// Exact-match fraction over aligned option indices.
pub fn accuracy_mcq(predictions: &[usize], answers: &[usize]) -> Result<f64> {
    if predictions.len() != answers.len() {
        return Err(FuseError::contract(format!(
            "accuracy: {} predictions vs {} answers",
            predictions.len(),
            answers.len()
        )));
    }
    if predictions.is_empty() {
        return Err(FuseError::InvalidBatch("accuracy over an empty set".into()));
    }
    let hits = predictions
        .iter()
        .zip(answers)
        .filter(|(p, a)| p == a)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Per-sample n-gram statistics; corpus BLEU is recomputable from the
/// sum of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub clipped: [u64; MAX_NGRAM],
    pub totals: [u64; MAX_NGRAM],
    pub hyp_len: u64,
    pub ref_len: u64,
}

pub fn bleu_pair_stats(hypothesis: &[String], reference: &[String]) -> BleuStats {
    let mut stats = BleuStats {
        clipped: [0; MAX_NGRAM],
        totals: [0; MAX_NGRAM],
        hyp_len: hypothesis.len() as u64,
        ref_len: reference.len() as u64,
    };
    for n in 1..=MAX_NGRAM {
        let hyp_counts = ngram_counts(hypothesis, n);
        let ref_counts = ngram_counts(reference, n);
        for (gram, &count) in &hyp_counts {
            let limit = ref_counts.get(gram).copied().unwrap_or(0);
            stats.clipped[n - 1] += count.min(limit);
            stats.totals[n - 1] += count;
        }
    }
    stats
}

/// Corpus BLEU from aggregated per-sample statistics: geometric mean of
/// clipped precisions for n = 1..4 (zero precisions replaced by 1e-9;
/// orders with no n-grams at all are skipped) times the brevity penalty
/// `exp(1 - r/c)` applied when the hypothesis corpus is shorter.
pub fn bleu_from_stats(stats: &[BleuStats]) -> f64 {
    let mut clipped = [0u64; MAX_NGRAM];
    let mut totals = [0u64; MAX_NGRAM];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for s in stats {
        for n in 0..MAX_NGRAM {
            clipped[n] += s.clipped[n];
            totals[n] += s.totals[n];
        }
        hyp_len += s.hyp_len;
        ref_len += s.ref_len;
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut used = 0usize;
    for n in 0..MAX_NGRAM {
        if totals[n] == 0 {
            continue;
        }
        let p = if clipped[n] == 0 {
            BLEU_EPSILON
        } else {
            clipped[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
        used += 1;
    }
    if used == 0 {
        return 0.0;
    }
    let precision = (log_sum / used as f64).exp();
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    bp * precision
}

/// Corpus BLEU over aligned hypothesis/reference token lists.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(FuseError::InvalidBatch(format!(
            "bleu: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let stats: Vec<BleuStats> = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| bleu_pair_stats(h, r))
        .collect();
    Ok(bleu_from_stats(&stats))
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    // Two-row dynamic program.
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with recall weighted by beta^2 = 1.44. Both
/// sequences empty scores 0.
pub fn rouge_l(hypothesis: &[String], reference: &[String]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_length(hypothesis, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / hypothesis.len() as f64;
    let recall = lcs / reference.len() as f64;
    (1.0 + ROUGE_BETA_SQ) * precision * recall / (recall + ROUGE_BETA_SQ * precision)
}

/// TF-IDF n-gram cosine similarity averaged over n = 1..4, scaled by 10.
/// IDF is computed over the reference corpus (document frequency clamped
/// to 1), which needs at least two samples. Returns per-sample scores.
pub fn cider(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<Vec<f64>> {
    if references.len() < 2 {
        return Err(FuseError::InvalidBatch(
            "cider needs a corpus of at least 2 samples".into(),
        ));
    }
    if hypotheses.len() != references.len() {
        return Err(FuseError::InvalidBatch(format!(
            "cider: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let n_docs = references.len() as f64;
    // Document frequency per n-gram order.
    let mut df: Vec<HashMap<Vec<String>, u64>> = vec![HashMap::new(); MAX_NGRAM];
    for r in references {
        for n in 1..=MAX_NGRAM {
            let mut seen: Vec<&[String]> = ngram_counts(r, n).into_keys().collect();
            seen.sort();
            for gram in seen {
                *df[n - 1].entry(gram.to_vec()).or_insert(0) += 1;
            }
        }
    }
    let tfidf = |tokens: &[String], n: usize| -> HashMap<Vec<String>, f64> {
        let counts = ngram_counts(tokens, n);
        let total: u64 = counts.values().sum();
        let mut vec = HashMap::new();
        if total == 0 {
            return vec;
        }
        for (gram, &c) in &counts {
            let d = df[n - 1].get(*gram).copied().unwrap_or(0).max(1) as f64;
            let idf = (n_docs / d).ln();
            vec.insert(gram.to_vec(), (c as f64 / total as f64) * idf);
        }
        vec
    };
    let cosine = |a: &HashMap<Vec<String>, f64>, b: &HashMap<Vec<String>, f64>| -> f64 {
        let dot: f64 = a
            .iter()
            .filter_map(|(g, &x)| b.get(g).map(|&y| x * y))
            .sum();
        let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    Ok(hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| {
            let mut acc = 0.0;
            for n in 1..=MAX_NGRAM {
                acc += cosine(&tfidf(h, n), &tfidf(r, n));
            }
            10.0 * acc / MAX_NGRAM as f64
        })
        .collect())
}
