use std::fmt::Write;

use super::SystemId;
use crate::metrics::ScoreReport;

/// Published METEOR of the strongest baseline and the best transferred
/// system, kept for the ordering note only.
pub const PUBLISHED_METEOR: [(SystemId, f64); 2] = [(SystemId::B1, 33.0), (SystemId::P1, 34.4)];

/// Published ranking by METEOR, best first.
pub const PUBLISHED_ORDERING: [SystemId; 6] = [
    SystemId::P1,
    SystemId::P3,
    SystemId::B2,
    SystemId::B1,
    SystemId::P2,
    SystemId::C1,
];

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub label: String,
    pub system: Option<SystemId>,
    /// `None` if the system failed.
    pub scores: Option<[f64; 4]>,
    pub seconds: Option<f64>,
    pub error: Option<String>,
}

impl Row {
    pub fn scored(system: SystemId, r: &ScoreReport, seconds: f64) -> Self {
        Self {
            label: system.name().to_string(),
            system: Some(system),
            scores: Some([r.rouge1, r.rouge2, r.rouge_l, r.meteor]),
            seconds: Some(seconds),
            error: None,
        }
    }

    pub fn failed(system: SystemId, error: String) -> Self {
        Self {
            label: system.name().to_string(),
            system: Some(system),
            scores: None,
            seconds: None,
            error: Some(error),
        }
    }

    pub fn reference(label: &str, r: &ScoreReport) -> Self {
        Self {
            label: label.to_string(),
            system: None,
            scores: Some([r.rouge1, r.rouge2, r.rouge_l, r.meteor]),
            seconds: None,
            error: None,
        }
    }

    pub fn rouge1(&self) -> Option<f64> {
        self.scores.map(|s| s[0])
    }

    pub fn meteor(&self) -> Option<f64> {
        self.scores.map(|s| s[3])
    }
}

/// Scores of every system at one data fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultsTable {
    pub fraction: f64,
    pub config_digest: String,
    /// ASR word error rate on the eval split.
    pub asr_wer: Option<f64>,
    pub rows: Vec<Row>,
    pub untrained: Option<Row>,
    /// (artifact, sha256) of every checkpoint the table was built from.
    pub checkpoints: Vec<(String, String)>,
}

impl ResultsTable {
    pub fn row(&self, system: SystemId) -> Option<&Row> {
        self.rows.iter().find(|r| r.system == Some(system))
    }

    /// Completed systems ranked by METEOR, best first. Ties keep table order.
    pub fn ordering(&self) -> Vec<SystemId> {
        let mut scored: Vec<(SystemId, f64)> = self
            .rows
            .iter()
            .filter_map(|r| Some((r.system?, r.meteor()?)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.into_iter().map(|(s, _)| s).collect()
    }

    /// Aligned text table with runtimes and the ordering note.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "data fraction {}  config {}",
            self.fraction,
            &self.config_digest[..16.min(self.config_digest.len())]
        );
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>9}",
            "system", "ROUGE-1", "ROUGE-2", "ROUGE-L", "METEOR", "seconds"
        );
        for r in self.rows.iter().chain(&self.untrained) {
            match (&r.scores, &r.error) {
                (Some(v), _) => {
                    let secs = r.seconds.map_or("-".to_string(), |t| format!("{t:.1}"));
                    let _ = writeln!(
                        s,
                        "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>9}",
                        r.label, v[0], v[1], v[2], v[3], secs
                    );
                }
                (None, e) => {
                    let _ = writeln!(s, "{:<10} FAILED: {}", r.label, e.as_deref().unwrap_or("unknown"));
                }
            }
        }
        if let Some(w) = self.asr_wer {
            let _ = writeln!(s, "ASR WER {w:.2}");
        }
        let _ = writeln!(s);
        s.push_str(&self.ordering_note());
        s
    }

    /// Compares the METEOR ranking with the published one. Informational.
    pub fn ordering_note(&self) -> String {
        let names = |v: &[SystemId]| v.iter().map(|s| s.name()).collect::<Vec<_>>().join(" > ");
        let ours = self.ordering();
        let expected: Vec<SystemId> = PUBLISHED_ORDERING
            .iter()
            .copied()
            .filter(|s| ours.contains(s))
            .collect();
        let mut s = String::new();
        let _ = writeln!(s, "ordering by METEOR:   {}", names(&ours));
        let _ = writeln!(s, "published ordering:   {}", names(&expected));
        let refs: Vec<String> = PUBLISHED_METEOR.iter().map(|(id, m)| format!("{id} {m:.1}")).collect();
        let _ = writeln!(s, "published METEOR:     {}", refs.join(", "));
        let agree = ours == expected;
        let _ = writeln!(s, "ordering matches: {}", if agree { "yes" } else { "no" });
        s
    }

    /// Machine-readable `key=value` lines. Runtimes are left out so two runs
    /// with the same seed give identical files.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fraction={}", self.fraction);
        let _ = writeln!(s, "config_digest={}", self.config_digest);
        if let Some(w) = self.asr_wer {
            let _ = writeln!(s, "asr.wer={w:.6}");
        }
        for r in self.rows.iter().chain(&self.untrained) {
            match &r.scores {
                Some(v) => {
                    for (k, x) in ["rouge1", "rouge2", "rouge_l", "meteor"].iter().zip(v) {
                        let _ = writeln!(s, "{}.{k}={x:.6}", r.label);
                    }
                }
                None => {
                    let _ = writeln!(s, "{}.status=failed", r.label);
                }
            }
        }
        for (name, hash) in &self.checkpoints {
            let _ = writeln!(s, "checkpoint.{name}={hash}");
        }
        s
    }
}

/// METEOR per system across data fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub fractions: Vec<f64>,
    /// Per system, METEOR at each fraction (`None` where it failed).
    pub meteor: Vec<(SystemId, Vec<Option<f64>>)>,
}

impl SweepReport {
    pub fn new(tables: &[ResultsTable]) -> Self {
        let mut tables: Vec<&ResultsTable> = tables.iter().collect();
        tables.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
        let meteor = SystemId::ALL
            .iter()
            .map(|&s| (s, tables.iter().map(|t| t.row(s).and_then(Row::meteor)).collect()))
            .collect();
        Self {
            fractions: tables.iter().map(|t| t.fraction).collect(),
            meteor,
        }
    }

    /// Whether METEOR never decreases as the fraction grows; `None` if a
    /// score is missing.
    pub fn monotone(&self, system: SystemId) -> Option<bool> {
        let v: Option<Vec<f64>> = self
            .meteor
            .iter()
            .find(|(s, _)| *s == system)?
            .1
            .iter()
            .copied()
            .collect();
        Some(v?.windows(2).all(|w| w[1] >= w[0]))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "METEOR");
        for f in &self.fractions {
            let _ = write!(s, " {:>8}", format!("f={f}"));
        }
        let _ = writeln!(s, " {:>10}", "monotone");
        for (system, scores) in &self.meteor {
            let _ = write!(s, "{:<8}", system.name());
            for m in scores {
                let _ = write!(s, " {:>8}", m.map_or("-".to_string(), |x| format!("{x:.2}")));
            }
            let mono = match self.monotone(*system) {
                Some(true) => "yes",
                Some(false) => "no",
                None => "n/a",
            };
            let _ = writeln!(s, " {mono:>10}");
        }
        s
    }
}
