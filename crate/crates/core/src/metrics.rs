//! BLEU-4, ROUGE-L, a simplified METEOR, and the SCST reward.
//!
//! All scores are in `[0, 1]`. The METEOR variant aligns exact unigram
//! matches only (no stemming, synonyms or paraphrases) and is not
//! comparable to numbers produced by the official tool.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const MAX_ORDER: usize = 4;
pub const ROUGE_BETA: f64 = 1.2;
pub const REWARD_BLEU_WEIGHT: f64 = 1.0;
pub const REWARD_ROUGE_WEIGHT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuMode {
    /// n-gram statistics pooled over all pairs.
    Corpus,
    /// Per-sentence score with add-one smoothing for orders 2–4.
    Sentence,
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(|t| t.as_ref()).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BleuStats {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    ref_totals: [usize; MAX_ORDER],
    cand_len: usize,
    ref_len: usize,
}

fn bleu_stats<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> BleuStats {
    let mut s = BleuStats {
        cand_len: candidate.len(),
        ref_len: reference.len(),
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        s.totals[n - 1] = candidate.len().saturating_sub(n - 1);
        s.ref_totals[n - 1] = reference.len().saturating_sub(n - 1);
        s.matches[n - 1] = cand
            .iter()
            .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
            .sum();
    }
    s
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

fn corpus_score(s: &BleuStats) -> f64 {
    if s.cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let p = if s.totals[n] == 0 {
            // nothing to match and nothing expected counts as agreement
            if s.ref_totals[n] == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            s.matches[n] as f64 / s.totals[n] as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    brevity_penalty(s.cand_len, s.ref_len) * (log_sum / MAX_ORDER as f64).exp()
}

fn sentence_score(s: &BleuStats) -> f64 {
    if s.cand_len == 0 || s.matches[0] == 0 {
        return 0.0;
    }
    let mut log_sum = (s.matches[0] as f64 / s.totals[0] as f64).ln();
    for n in 1..MAX_ORDER {
        log_sum += ((s.matches[n] + 1) as f64 / (s.totals[n] + 1) as f64).ln();
    }
    brevity_penalty(s.cand_len, s.ref_len) * (log_sum / MAX_ORDER as f64).exp()
}

/// BLEU-4 with a single reference per candidate. In sentence mode the
/// score is averaged over pairs.
pub fn bleu4<T: AsRef<str>>(candidates: &[Vec<T>], references: &[Vec<T>], mode: BleuMode) -> f64 {
    assert_eq!(candidates.len(), references.len(), "one reference per candidate");
    if candidates.is_empty() {
        return 0.0;
    }
    match mode {
        BleuMode::Corpus => {
            let mut total = BleuStats::default();
            for (c, r) in candidates.iter().zip(references) {
                let s = bleu_stats(c, r);
                for n in 0..MAX_ORDER {
                    total.matches[n] += s.matches[n];
                    total.totals[n] += s.totals[n];
                    total.ref_totals[n] += s.ref_totals[n];
                }
                total.cand_len += s.cand_len;
                total.ref_len += s.ref_len;
            }
            corpus_score(&total)
        }
        BleuMode::Sentence => {
            candidates
                .iter()
                .zip(references)
                .map(|(c, r)| sentence_bleu(c, r))
                .sum::<f64>()
                / candidates.len() as f64
        }
    }
}

pub fn sentence_bleu<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    sentence_score(&bleu_stats(candidate, reference))
}

fn lcs_len<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with β = 1.2.
pub fn rouge_l<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Exact-match METEOR: each candidate token aligns to the earliest unused
/// identical reference token.
pub fn meteor_simplified<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    let mut used = vec![false; reference.len()];
    let mut alignment: Vec<(usize, usize)> = Vec::new();
    for (i, c) in candidate.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j].as_ref() == c.as_ref()) {
            used[j] = true;
            alignment.push((i, j));
        }
    }
    let matches = alignment.len();
    if matches == 0 {
        return 0.0;
    }
    let chunks = 1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let p = matches as f64 / candidate.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    f_mean * (1.0 - penalty)
}

/// `1.0 · sentence BLEU-4 + 0.02 · ROUGE-L`
pub fn reward<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    weighted_reward(candidate, reference, REWARD_BLEU_WEIGHT, REWARD_ROUGE_WEIGHT)
}

pub fn weighted_reward<T: AsRef<str>>(candidate: &[T], reference: &[T], bleu_w: f64, rouge_w: f64) -> f64 {
    bleu_w * sentence_bleu(candidate, reference) + rouge_w * rouge_l(candidate, reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScores {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor_simplified: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor_simplified: f64,
    pub n_examples: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_example: Vec<SentenceScores>,
}

impl MetricReport {
    /// Corpus BLEU plus example-averaged ROUGE-L and METEOR.
    pub fn compute<T: AsRef<str>>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Self {
        let per_example: Vec<SentenceScores> = candidates
            .iter()
            .zip(references)
            .map(|(c, r)| SentenceScores {
                bleu4: sentence_bleu(c, r),
                rouge_l: rouge_l(c, r),
                meteor_simplified: meteor_simplified(c, r),
            })
            .collect();
        let n = per_example.len();
        let mean = |f: fn(&SentenceScores) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_example.iter().map(f).sum::<f64>() / n as f64
            }
        };
        MetricReport {
            bleu4: bleu4(candidates, references, BleuMode::Corpus),
            rouge_l: mean(|s| s.rouge_l),
            meteor_simplified: mean(|s| s.meteor_simplified),
            n_examples: n,
            per_example,
        }
    }

    /// Same report with corpus scores multiplied by 100.
    pub fn as_percent(&self) -> MetricReport {
        MetricReport {
            bleu4: 100.0 * self.bleu4,
            rouge_l: 100.0 * self.rouge_l,
            meteor_simplified: 100.0 * self.meteor_simplified,
            n_examples: self.n_examples,
            per_example: Vec::new(),
        }
    }
}
