use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::results::{ResultsTable, Row, SweepReport};
use super::stages::{cascade_examples, decode_to_file, eval_examples, fresh_model, train_to_dir, write_references};
use super::{stage_for, ExperimentConfig, ExperimentPlan, Init, PipelineError, StageName, SystemId};
use crate::data::{generate_corpus, Corpus, Split, ViewKind};
use crate::metrics::{evaluate_files, ScoreReport};
use crate::model::TokenId;
use crate::transfer::{build_variant, transplant, Checkpoint, CheckpointStore};

/// A trained stage and where it was written.
#[derive(Clone, Debug)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub path: PathBuf,
    /// SHA-256 of the checkpoint file.
    pub hash: String,
}

#[derive(Clone, Debug)]
pub struct SystemOutcome {
    pub system: SystemId,
    pub report: ScoreReport,
    pub hypotheses: PathBuf,
    pub references: PathBuf,
    pub seconds: f64,
}

/// Runs plans over one corpus, training each stage at most once per data
/// fraction. Pre-training stages are shared across fractions.
pub struct Runner {
    config: ExperimentConfig,
    root: PathBuf,
    corpus: Corpus,
    shared: BTreeMap<StageName, Trained>,
    per_fraction: BTreeMap<String, BTreeMap<StageName, Trained>>,
    asr_eval: Option<Vec<(String, Vec<TokenId>)>>,
    progress: Box<dyn FnMut(&str)>,
}

pub fn fraction_label(fraction: f64) -> String {
    format!("fraction-{fraction}")
}

impl Runner {
    pub fn new(config: &ExperimentConfig, root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        config.validate()?;
        let config = config.reseeded();
        let corpus = generate_corpus(&config.corpus)?;
        Self::with_corpus(&config, corpus, root)
    }

    /// Uses an existing corpus instead of generating one from the config.
    pub fn with_corpus(
        config: &ExperimentConfig,
        corpus: Corpus,
        root: impl Into<PathBuf>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| PipelineError::io(&root, e))?;
        Ok(Self {
            config: config.reseeded(),
            root,
            corpus,
            shared: BTreeMap::new(),
            per_fraction: BTreeMap::new(),
            asr_eval: None,
            progress: Box::new(|_| {}),
        })
    }

    /// Receives one line per finished epoch and stage.
    pub fn on_progress(mut self, f: impl FnMut(&str) + 'static) -> Self {
        self.progress = Box::new(f);
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn fraction_dir(&self, fraction: f64) -> PathBuf {
        self.root.join(fraction_label(fraction))
    }

    pub fn plan(&self, system: SystemId, fraction: f64) -> ExperimentPlan {
        ExperimentPlan::new(&self.config, system, fraction, self.fraction_dir(fraction))
    }

    pub fn trained(&self, stage: StageName, fraction: f64) -> Option<&Trained> {
        if stage.uses_full_data() {
            self.shared.get(&stage)
        } else {
            self.per_fraction.get(&fraction_label(fraction))?.get(&stage)
        }
    }

    fn stage_dir(&self, stage: StageName, fraction: f64) -> PathBuf {
        if stage.uses_full_data() {
            self.root.clone()
        } else {
            self.fraction_dir(fraction)
        }
    }

    /// Trains `stage` (and anything it starts from) unless already done.
    pub fn ensure(&mut self, stage: StageName, fraction: f64) -> Result<&Trained, PipelineError> {
        if self.trained(stage, fraction).is_none() {
            for dep in stage.dependencies() {
                self.ensure(dep, fraction)?;
            }
            let trained = self.train(stage, fraction)?;
            if stage.uses_full_data() {
                self.shared.insert(stage, trained);
            } else {
                self.per_fraction
                    .entry(fraction_label(fraction))
                    .or_default()
                    .insert(stage, trained);
            }
        }
        Ok(self.trained(stage, fraction).expect("stage just trained"))
    }

    fn init_model(
        &self,
        stage: StageName,
        fraction: f64,
    ) -> Result<(crate::model::Seq2SeqModel, String), PipelineError> {
        let vocab = &self.corpus.vocab;
        Ok(match stage.init() {
            Init::FreshSpeech => (fresh_model(&self.config, vocab, true)?, "fresh".into()),
            Init::FreshText => (fresh_model(&self.config, vocab, false)?, "fresh".into()),
            Init::From(s) => {
                let t = self.trained(s, fraction).expect("dependency trained");
                (t.checkpoint.model.clone(), format!("{}:{}", s.artifact(), t.hash))
            }
            Init::Transplant(v) => {
                let mut store = CheckpointStore::new();
                let (e, d) = v.sources();
                let mut sources = Vec::new();
                for p in [e, d] {
                    let t = self.trained(stage_for(p), fraction).expect("dependency trained");
                    store.insert(t.checkpoint.clone());
                    sources.push(format!("{}:{}", stage_for(p).artifact(), t.hash));
                }
                let model = transplant(&build_variant(v, &store)?)?;
                (model, sources.join(","))
            }
        })
    }

    fn train(&mut self, stage: StageName, fraction: f64) -> Result<Trained, PipelineError> {
        let dir = self.stage_dir(stage, fraction);
        let (init, init_desc) = self.init_model(stage, fraction).map_err(|e| PipelineError::Stage {
            stage: stage.artifact(),
            log: dir.join(format!("{}.log.tsv", stage.artifact())).display().to_string(),
            source: Box::new(e),
        })?;
        let label = format!("[{} {}]", stage.artifact(), fraction_label(fraction));
        let progress = &mut self.progress;
        train_to_dir(
            &self.config,
            &self.corpus,
            stage,
            &init,
            &init_desc,
            fraction,
            &dir,
            &mut |line: &str| progress(&format!("{label} {line}")),
        )
    }

    /// ASR outputs for the eval split, decoded once and written to `asr.hyp`.
    fn asr_outputs(&mut self) -> Result<Vec<(String, Vec<TokenId>)>, PipelineError> {
        if let Some(out) = &self.asr_eval {
            return Ok(out.clone());
        }
        self.ensure(StageName::Asr, 1.0)?;
        let asr = &self.shared[&StageName::Asr].checkpoint.model;
        let examples = eval_examples(&self.corpus, ViewKind::Asr);
        let out = decode_to_file(asr, &examples, &self.config.beam, &self.root.join("asr.hyp"))?;
        write_references(&self.corpus, Split::Eval, &self.root.join("transcripts.txt"), true)?;
        self.asr_eval = Some(out.clone());
        Ok(out)
    }

    /// Word error rate of the ASR model on the eval split.
    pub fn asr_wer(&mut self) -> Result<Option<f64>, PipelineError> {
        self.asr_outputs()?;
        Ok(evaluate_files(&self.root.join("asr.hyp"), &self.root.join("transcripts.txt"))?.wer)
    }

    /// Trains what `system` needs, decodes the eval split, and scores it.
    pub fn run_system(&mut self, system: SystemId, fraction: f64) -> Result<SystemOutcome, PipelineError> {
        let start = Instant::now();
        let plan = self.plan(system, fraction);
        plan.validate()?;
        for s in &plan.stages {
            self.ensure(s.name, fraction)?;
        }
        let dir = self.fraction_dir(fraction);
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        let references = dir.join("refs.txt");
        write_references(&self.corpus, Split::Eval, &references, false)?;
        let hypotheses = dir.join(format!("{system}.hyp"));
        let summaries = eval_examples(&self.corpus, ViewKind::Ssum);
        if system == SystemId::C1 {
            let asr_out = self.asr_outputs()?;
            let inputs = cascade_examples(&asr_out, &summaries);
            let tsum = &self
                .trained(StageName::Tsum, fraction)
                .expect("planned")
                .checkpoint
                .model;
            decode_to_file(tsum, &inputs, &self.config.beam, &hypotheses)?;
        } else {
            let last = plan.stages.last().expect("plans are non-empty").name;
            let model = &self.trained(last, fraction).expect("planned").checkpoint.model;
            decode_to_file(model, &summaries, &self.config.beam, &hypotheses)?;
        }
        let report = evaluate_files(&hypotheses, &references)?;
        (self.progress)(&format!(
            "[{system} {}] ROUGE-1 {:.2} METEOR {:.2}",
            fraction_label(fraction),
            report.rouge1,
            report.meteor
        ));
        Ok(SystemOutcome {
            system,
            report,
            hypotheses,
            references,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Scores of a freshly initialized speech model.
    pub fn untrained_report(&mut self, fraction: f64) -> Result<ScoreReport, PipelineError> {
        let dir = self.fraction_dir(fraction);
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        let model = fresh_model(&self.config, &self.corpus.vocab, true)?;
        let references = dir.join("refs.txt");
        write_references(&self.corpus, Split::Eval, &references, false)?;
        let hypotheses = dir.join("untrained.hyp");
        decode_to_file(
            &model,
            &eval_examples(&self.corpus, ViewKind::Ssum),
            &self.config.beam,
            &hypotheses,
        )?;
        Ok(evaluate_files(&hypotheses, &references)?)
    }

    /// Every system at one data fraction. A failing system is recorded in
    /// its row and the remaining systems still run.
    pub fn run_table(&mut self, fraction: f64) -> Result<ResultsTable, PipelineError> {
        self.run_systems(fraction, &SystemId::ALL)
    }

    /// Like [`Runner::run_table`] restricted to `systems`.
    pub fn run_systems(&mut self, fraction: f64, systems: &[SystemId]) -> Result<ResultsTable, PipelineError> {
        let mut rows = Vec::new();
        for &system in systems {
            let row = match self.run_system(system, fraction) {
                Ok(o) => Row::scored(system, &o.report, o.seconds),
                Err(e) => {
                    (self.progress)(&format!("[{system}] failed: {e}"));
                    Row::failed(system, e.to_string())
                }
            };
            rows.push(row);
        }
        let untrained = if self.config.untrained_reference {
            Some(self.untrained_report(fraction)?)
        } else {
            None
        };
        let table = ResultsTable {
            fraction,
            config_digest: self.config.digest(),
            asr_wer: self.asr_wer()?,
            rows,
            untrained: untrained.as_ref().map(|r| Row::reference("untrained", r)),
            checkpoints: self.checkpoint_hashes(fraction),
        };
        let dir = self.fraction_dir(fraction);
        let (txt, kv) = (dir.join("results.txt"), dir.join("results.kv"));
        fs::write(&txt, table.to_text()).map_err(|e| PipelineError::io(&txt, e))?;
        fs::write(&kv, table.to_kv()).map_err(|e| PipelineError::io(&kv, e))?;
        Ok(table)
    }

    fn checkpoint_hashes(&self, fraction: f64) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .shared
            .iter()
            .map(|(s, t)| (s.artifact().to_string(), t.hash.clone()))
            .collect();
        if let Some(m) = self.per_fraction.get(&fraction_label(fraction)) {
            out.extend(m.iter().map(|(s, t)| (s.artifact().to_string(), t.hash.clone())));
        }
        out
    }

    /// One table per fraction plus `sweep.txt` reporting, per system,
    /// whether METEOR grows with the amount of data.
    pub fn run_sweep(
        &mut self,
        fractions: &[f64],
        systems: &[SystemId],
    ) -> Result<(Vec<ResultsTable>, SweepReport), PipelineError> {
        let mut tables = Vec::new();
        for &f in fractions {
            tables.push(self.run_systems(f, systems)?);
        }
        let report = SweepReport::new(&tables);
        let path = self.root.join("sweep.txt");
        fs::write(&path, report.to_text()).map_err(|e| PipelineError::io(&path, e))?;
        Ok((tables, report))
    }
}
