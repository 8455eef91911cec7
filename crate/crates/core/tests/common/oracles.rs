use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssum_core::decoding::{Hypothesis, StepScorer};
use ssum_core::model::{ModelError, TokenId, PAD};

pub const RIG_SOS: TokenId = 99;
pub const RIG_EOS: TokenId = 1;

/// Deterministic pseudo-random next-token distribution per prefix. With
/// `levels` set, logits are quantized to force exact score ties.
pub struct Rigged {
    pub seed: u64,
    pub vocab: usize,
    pub levels: Option<u32>,
}

impl StepScorer for Rigged {
    fn sos(&self) -> TokenId {
        RIG_SOS
    }

    fn eos(&self) -> TokenId {
        RIG_EOS
    }

    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        let mut h = DefaultHasher::new();
        (self.seed, prefix).hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let logits: Vec<f64> = (0..self.vocab)
            .map(|_| match self.levels {
                Some(l) => rng.gen_range(0..l) as f64,
                None => rng.gen_range(-3.0..3.0),
            })
            .collect();
        let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
        Ok(logits.iter().map(|x| x - lse).collect())
    }
}

/// Every complete output: ends in eos, or is cut at `max_len`. Scores are
/// accumulated step by step exactly as a hypothesis grows.
pub fn enumerate(s: &Rigged, alpha: f64, max_len: usize) -> Vec<Hypothesis> {
    let mut out = Vec::new();
    let mut stack = vec![(vec![RIG_SOS], 0.0f64, 0.0f64)];
    while let Some((tokens, lp, score)) = stack.pop() {
        let dist = s.log_probs(&tokens).unwrap();
        for (k, l) in dist.iter().enumerate() {
            let mut t = tokens.clone();
            t.push(k as TokenId);
            let (nl, ns) = (lp + l, score + l + alpha);
            if k as TokenId == RIG_EOS || t.len() - 1 == max_len {
                out.push(Hypothesis {
                    tokens: t,
                    log_prob: nl,
                    score: ns,
                    finished: true,
                });
            } else {
                stack.push((t, nl, ns));
            }
        }
    }
    out
}

/// Highest score; ties to the shorter, then lexicographically smaller.
pub fn oracle_best(all: &[Hypothesis]) -> &Hypothesis {
    all.iter()
        .min_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.tokens.len().cmp(&b.tokens.len()))
                .then(a.tokens.cmp(&b.tokens))
        })
        .unwrap()
}

pub fn random_seq(rng: &mut ChaCha8Rng, max_len: usize, alphabet: u8) -> Vec<u8> {
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| rng.gen_range(0..alphabet)).collect()
}

/// Top-down memoized LCS.
pub fn lcs_oracle(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Top-down memoized Levenshtein distance.
pub fn edit_oracle(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = (go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]))
            .min(go(a, b, i + 1, j, memo) + 1)
            .min(go(a, b, i, j + 1, memo) + 1);
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

pub fn f1(overlap: usize, h: usize, r: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let (p, rc) = (overlap as f64 / h as f64, overlap as f64 / r as f64);
    100.0 * 2.0 * p * rc / (p + rc)
}

/// Every one-to-one alignment of equal tokens; keeps the most matches and,
/// among those, the fewest chunks.
pub fn meteor_oracle(h: &[u8], r: &[u8]) -> (usize, usize, f64) {
    fn chunks(pairs: &[(usize, usize)]) -> usize {
        let mut sorted = pairs.to_vec();
        sorted.sort();
        let mut c = 0;
        for (k, &(i, j)) in sorted.iter().enumerate() {
            if k == 0 || !(sorted[k - 1].0 + 1 == i && sorted[k - 1].1 + 1 == j) {
                c += 1;
            }
        }
        c
    }
    fn enumerate(
        h: &[u8],
        r: &[u8],
        i: usize,
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut (usize, usize),
    ) {
        if i == h.len() {
            let cand = (pairs.len(), chunks(pairs));
            if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                *best = cand;
            }
            return;
        }
        enumerate(h, r, i + 1, used, pairs, best);
        for j in 0..r.len() {
            if !used[j] && r[j] == h[i] {
                used[j] = true;
                pairs.push((i, j));
                enumerate(h, r, i + 1, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    enumerate(h, r, 0, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
    let (m, ch) = best;
    if m == 0 {
        return (0, 0, 0.0);
    }
    let (p, rc) = (m as f64 / h.len() as f64, m as f64 / r.len() as f64);
    // harmonic mean weighted 9:1 toward recall
    let fmean = p * rc / (0.9 * p + 0.1 * rc);
    let frag = ch as f64 / m as f64;
    (m, ch, fmean * (1.0 - 0.5 * frag * frag * frag))
}

/// Direct double sum over positions and classes.
pub fn ce_oracle(probs: &[Vec<f64>], targets: &[TokenId], eps: f64) -> f64 {
    let k = probs[0].len() as f64;
    let mut total = 0.0;
    let mut count = 0.0;
    for (row, &y) in probs.iter().zip(targets) {
        if y == PAD {
            continue;
        }
        count += 1.0;
        for (c, &p) in row.iter().enumerate() {
            let target = if c == y as usize { 1.0 - eps + eps / k } else { eps / k };
            total -= target * p.max(1e-12).ln();
        }
    }
    total / count
}
