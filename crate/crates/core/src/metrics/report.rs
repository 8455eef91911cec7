use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{edit_distance, meteor, rouge_l, rouge_n, tokenize, MetricsError};

#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub id: String,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    /// `None` when the reference is empty.
    pub wer: Option<f64>,
}

/// Scores in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub count: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    /// Pooled edits over pooled reference words; `None` if every reference is empty.
    pub wer: Option<f64>,
    pub samples: Vec<SampleScore>,
}

/// Scores `(id, hypothesis, reference)` triples.
pub fn evaluate<'a>(items: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> ScoreReport {
    let mut samples = Vec::new();
    let (mut edits, mut ref_words) = (0usize, 0usize);
    for (id, hyp, reference) in items {
        let (h, r) = (tokenize(hyp), tokenize(reference));
        let e = edit_distance(&h, &r);
        edits += e;
        ref_words += r.len();
        samples.push(SampleScore {
            id: id.to_string(),
            rouge1: rouge_n(&h, &r, 1).f1,
            rouge2: rouge_n(&h, &r, 2).f1,
            rouge_l: rouge_l(&h, &r).f1,
            meteor: meteor(&h, &r).percent(),
            wer: (!r.is_empty()).then(|| 100.0 * e as f64 / r.len() as f64),
        });
    }
    let n = samples.len();
    let mean = |f: fn(&SampleScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            samples.iter().map(f).sum::<f64>() / n as f64
        }
    };
    ScoreReport {
        count: n,
        rouge1: mean(|s| s.rouge1),
        rouge2: mean(|s| s.rouge2),
        rouge_l: mean(|s| s.rouge_l),
        meteor: mean(|s| s.meteor),
        wer: (ref_words > 0).then(|| 100.0 * edits as f64 / ref_words as f64),
        samples,
    }
}

impl ScoreReport {
    pub fn to_table(&self) -> String {
        let wer = self.wer.map_or("-".to_string(), |w| format!("{w:.2}"));
        format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n{:>8} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8}\n",
            "samples",
            "ROUGE-1",
            "ROUGE-2",
            "ROUGE-L",
            "METEOR",
            "WER",
            self.count,
            self.rouge1,
            self.rouge2,
            self.rouge_l,
            self.meteor,
            wer
        )
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "count={}\nrouge1={:.6}\nrouge2={:.6}\nrouge_l={:.6}\nmeteor={:.6}\n",
            self.count, self.rouge1, self.rouge2, self.rouge_l, self.meteor
        );
        if let Some(w) = self.wer {
            s.push_str(&format!("wer={w:.6}\n"));
        }
        s
    }
}

/// Reads `id<TAB>text` lines; the text may be empty.
pub fn read_id_text(path: &Path) -> Result<Vec<(String, String)>, MetricsError> {
    let text = fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let (id, body) = l.split_once('\t').ok_or_else(|| MetricsError::Format {
                path: path.display().to_string(),
                line: i + 1,
                detail: "expected id<TAB>text".into(),
            })?;
            Ok((id.to_string(), body.to_string()))
        })
        .collect()
}

/// Scores a hypothesis file against a reference file, in reference order.
pub fn evaluate_files(hypotheses: &Path, references: &Path) -> Result<ScoreReport, MetricsError> {
    let hyps = read_id_text(hypotheses)?;
    let refs = read_id_text(references)?;
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for (i, (id, text)) in hyps.iter().enumerate() {
        if by_id.insert(id, text).is_some() {
            return Err(MetricsError::Format {
                path: hypotheses.display().to_string(),
                line: i + 1,
                detail: format!("duplicate id {id}"),
            });
        }
    }
    let mut items = Vec::with_capacity(refs.len());
    for (id, reference) in &refs {
        let hyp = by_id
            .remove(id.as_str())
            .ok_or_else(|| MetricsError::MissingHypothesis(id.clone()))?;
        items.push((id.as_str(), hyp, reference.as_str()));
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(MetricsError::UnexpectedHypothesis(extra.to_string()));
    }
    Ok(evaluate(items))
}
