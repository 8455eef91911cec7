//! ROUGE-1/2/L, exact-match METEOR, and WER.
//!
//! Text is scored after [`tokenize`]: lowercased, punctuation replaced by
//! spaces, split on whitespace. Corpus ROUGE and METEOR average per-sample
//! scores; corpus WER pools edit counts over all references.

mod report;

pub use report::{evaluate, evaluate_files, read_id_text, SampleScore, ScoreReport};

use std::collections::HashMap;
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("word error rate needs a non-empty reference")]
    EmptyReference,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {detail}")]
    Format { path: String, line: usize, detail: String },
    #[error("utterance {0} has no hypothesis")]
    MissingHypothesis(String),
    #[error("hypothesis {0} has no reference")]
    UnexpectedHypothesis(String),
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| {
            if c.is_ascii_punctuation() || c.is_ascii_control() {
                ' '
            } else {
                c
            }
        })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Precision, recall, and F1 in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        if overlap == 0 || hyp_total == 0 || ref_total == 0 {
            return Prf {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            };
        }
        let p = overlap as f64 / hyp_total as f64;
        let r = overlap as f64 / ref_total as f64;
        Prf {
            precision: 100.0 * p,
            recall: 100.0 * r,
            // 2PR/(P+R) without the intermediate rounding of P and R
            f1: 100.0 * (2 * overlap) as f64 / (hyp_total + ref_total) as f64,
        }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n > 0 {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram overlap. `n = 0` scores zero.
pub fn rouge_n<T: Eq + Hash>(hyp: &[T], reference: &[T], n: usize) -> Prf {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let overlap = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    Prf::from_counts(overlap, h.values().sum(), r.values().sum())
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(hyp: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(hyp, reference), hyp.len(), reference.len())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeteorScore {
    pub matches: usize,
    pub chunks: usize,
    /// Fraction in `[0, 1]`.
    pub score: f64,
}

impl MeteorScore {
    pub fn percent(&self) -> f64 {
        100.0 * self.score
    }
}

/// Unigram alignment with the most matches, and among those the fewest
/// chunks (runs of consecutive hypothesis positions aligned to consecutive
/// reference positions).
pub fn meteor<T: Eq>(hyp: &[T], reference: &[T]) -> MeteorScore {
    let (matches, continuations) = Aligner::new(hyp, reference).best();
    meteor_from_alignment(matches, matches - continuations, hyp.len(), reference.len())
}

/// `Fmean = 10PR/(R + 9P)`, `penalty = 0.5·(chunks/matches)³`.
pub fn meteor_from_alignment(matches: usize, chunks: usize, hyp_len: usize, ref_len: usize) -> MeteorScore {
    if matches == 0 {
        return MeteorScore {
            matches: 0,
            chunks: 0,
            score: 0.0,
        };
    }
    let p = matches as f64 / hyp_len as f64;
    let r = matches as f64 / ref_len as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks.pow(3) as f64 / matches.pow(3) as f64);
    MeteorScore {
        matches,
        chunks,
        score: fmean * (1.0 - penalty),
    }
}

/// Exact search for the alignment maximizing `(matches, continuations)`
/// lexicographically, memoized on (hypothesis position, previous reference
/// position, used reference positions).
struct Aligner<'a, T> {
    hyp: &'a [T],
    candidates: Vec<Vec<usize>>,
    memo: HashMap<(usize, usize, Vec<u64>), (usize, usize)>,
}

const NONE: usize = usize::MAX;

impl<'a, T: Eq> Aligner<'a, T> {
    fn new(hyp: &'a [T], reference: &'a [T]) -> Self {
        let candidates = hyp
            .iter()
            .map(|h| (0..reference.len()).filter(|&j| reference[j] == *h).collect())
            .collect();
        Self {
            hyp,
            candidates,
            memo: HashMap::new(),
        }
    }

    fn best(&mut self) -> (usize, usize) {
        let words = self.candidates.iter().flatten().max().map_or(0, |m| m / 64 + 1);
        self.search(0, NONE, &mut vec![0u64; words])
    }

    fn search(&mut self, i: usize, prev: usize, used: &mut Vec<u64>) -> (usize, usize) {
        if i == self.hyp.len() {
            return (0, 0);
        }
        let key = (i, prev, used.clone());
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let mut best = self.search(i + 1, NONE, used);
        for c in 0..self.candidates[i].len() {
            let j = self.candidates[i][c];
            let (w, bit) = (j / 64, 1u64 << (j % 64));
            if used[w] & bit != 0 {
                continue;
            }
            used[w] |= bit;
            let (m, k) = self.search(i + 1, j, used);
            used[w] &= !bit;
            let cont = usize::from(prev != NONE && j == prev + 1);
            best = best.max((m + 1, k + cont));
        }
        self.memo.insert(key, best);
        best
    }
}

pub fn edit_distance<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word error rate in percent; may exceed 100 when the hypothesis inserts words.
pub fn wer<T: Eq>(hyp: &[T], reference: &[T]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(100.0 * edit_distance(hyp, reference) as f64 / reference.len() as f64)
}
