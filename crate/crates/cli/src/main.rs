use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use ssum_core::data::{generate_corpus, load_corpus, save_corpus, Corpus, Split, ViewKind};
use ssum_core::metrics::evaluate_files;
use ssum_core::model::EncoderConfig;
use ssum_core::pipeline::stages::{
    cascade_examples, decode_to_file, fresh_model, sha_file, split_examples, train_to_dir, write_references,
};
use ssum_core::pipeline::{ExperimentConfig, Runner, StageName, SystemId};
use ssum_core::transfer::{
    build_variant, load_checkpoint, save_checkpoint, transplant, Checkpoint, CheckpointStore, Provenance, Variant,
};

#[derive(Parser)]
#[command(
    name = "ssum",
    version,
    about = "Three-stage transfer learning for end-to-end speech summarization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults to the built-in toy config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DataArg {
    /// Corpus directory written by `gen-data`. Generated from the config if absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train the speech recognizer.
    PretrainAsr {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Pre-train the denoising text model.
    PretrainLm {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Fine-tune a checkpoint as one of the stages tsum, b1, b2, p1, p2, p3.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        stage: StageName,
        /// Starting checkpoint (for p1..p3, the output of `transplant`).
        #[arg(long)]
        init: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
    },
    /// Combine an encoder and a decoder checkpoint into a new model.
    Transplant {
        /// p1, p2 or p3.
        #[arg(long)]
        variant: String,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        decoder: PathBuf,
        /// Output checkpoint file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Beam-decode a split and write `id<TAB>text` lines.
    Decode {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Text summarizer fed with the output of `--checkpoint` (cascade).
        #[arg(long)]
        cascade: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        split: String,
        /// Also write the reference summaries (or transcripts with `--transcripts`).
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        transcripts: bool,
    },
    /// Score a hypothesis file against references.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Also write `key=value` scores here.
        #[arg(long)]
        kv: Option<PathBuf>,
    },
    /// Train, decode and score every system; one table per fraction.
    RunTable {
        #[command(flatten)]
        common: Common,
        /// Repeatable; several values also write `sweep.txt`.
        #[arg(long = "fraction")]
        fractions: Vec<f64>,
        /// Repeatable; defaults to all six systems.
        #[arg(long = "system")]
        systems: Vec<SystemId>,
        /// Write the effective config here and exit.
        #[arg(long)]
        dump_config: bool,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg.reseeded())
}

fn corpus(cfg: &ExperimentConfig, data: &DataArg) -> Result<Corpus> {
    Ok(match &data.data {
        Some(dir) => load_corpus(dir).with_context(|| format!("loading corpus from {}", dir.display()))?,
        None => generate_corpus(&cfg.corpus)?,
    })
}

fn progress(stage: StageName) -> impl FnMut(&str) {
    move |line| eprintln!("[{stage}] {line}")
}

fn train(common: &Common, data: &DataArg, stage: StageName, init: Option<&Path>, fraction: f64) -> Result<()> {
    let cfg = load_config(common)?;
    let corpus = corpus(&cfg, data)?;
    let (model, desc) = match init {
        None => (
            fresh_model(&cfg, &corpus.vocab, stage == StageName::Asr)?,
            "fresh".to_string(),
        ),
        Some(path) => {
            let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            let expected = stage.init_provenance();
            ensure!(
                expected == Some(ckpt.provenance),
                "stage {stage} starts from a {} checkpoint, {} is {}",
                expected.map_or("fresh".to_string(), |p| p.to_string()),
                path.display(),
                ckpt.provenance
            );
            (ckpt.model, format!("{}:{}", path.display(), sha_file(path)?))
        }
    };
    let trained = train_to_dir(
        &cfg,
        &corpus,
        stage,
        &model,
        &desc,
        fraction,
        &common.out,
        &mut progress(stage),
    )?;
    println!("{}\t{}", trained.path.display(), trained.hash);
    Ok(())
}

fn parse_variant(s: &str) -> Result<Variant> {
    Ok(match s.to_ascii_lowercase().replace('-', "").as_str() {
        "p1" => Variant::P1,
        "p2" => Variant::P2,
        "p3" => Variant::P3,
        _ => bail!("unknown variant {s:?} (expected p1, p2 or p3)"),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            let corpus = generate_corpus(&cfg.corpus)?;
            save_corpus(&corpus, &common.out)?;
            println!(
                "wrote {} train, {} valid, {} eval triplets to {}",
                corpus.train.len(),
                corpus.valid.len(),
                corpus.eval.len(),
                common.out.display()
            );
        }
        Command::PretrainAsr { common, data } => train(&common, &data, StageName::Asr, None, 1.0)?,
        Command::PretrainLm { common, data } => train(&common, &data, StageName::Lm, None, 1.0)?,
        Command::Finetune {
            common,
            data,
            stage,
            init,
            fraction,
        } => {
            ensure!(
                !stage.uses_full_data(),
                "{stage} is a pre-training stage; use pretrain-{stage}"
            );
            train(&common, &data, stage, Some(&init), fraction)?
        }
        Command::Transplant {
            variant,
            encoder,
            decoder,
            out,
        } => {
            let variant = parse_variant(&variant)?;
            let mut store = CheckpointStore::new();
            let mut hashes = Vec::new();
            for p in [&encoder, &decoder] {
                store.insert(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?);
                hashes.push(sha_file(p)?);
            }
            let model = transplant(&build_variant(variant, &store)?)?;
            let ckpt = Checkpoint::new(
                model,
                Provenance::Transferred,
                format!("transplant:{}", hashes.join(",")),
            );
            save_checkpoint(&ckpt, &out)?;
            println!("{}\t{}", out.display(), sha_file(&out)?);
        }
        Command::Decode {
            common,
            data,
            checkpoint,
            cascade,
            split,
            references,
            transcripts,
        } => {
            let cfg = load_config(&common)?;
            let corpus = corpus(&cfg, &data)?;
            let split = Split::parse(&split).with_context(|| format!("unknown split {split:?}"))?;
            let ckpt = load_checkpoint(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let speech = matches!(ckpt.model.config().encoder, EncoderConfig::Speech(_));
            let kind = if speech { ViewKind::Ssum } else { ViewKind::Tsum };
            let examples = split_examples(&corpus, split, kind);
            if let Some(parent) = common.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            match cascade {
                None => {
                    decode_to_file(&ckpt.model, &examples, &cfg.beam, &common.out)?;
                }
                Some(tsum) => {
                    ensure!(speech, "the first cascade model must take speech input");
                    let tsum = load_checkpoint(&tsum).with_context(|| format!("loading {}", tsum.display()))?;
                    let first = common.out.with_extension("asr.hyp");
                    let asr = decode_to_file(&ckpt.model, &examples, &cfg.beam, &first)?;
                    decode_to_file(&tsum.model, &cascade_examples(&asr, &examples), &cfg.beam, &common.out)?;
                }
            }
            if let Some(r) = references {
                write_references(&corpus, split, &r, transcripts)?;
            }
            println!("{}", common.out.display());
        }
        Command::Evaluate { hyp, reference, kv } => {
            let report = evaluate_files(&hyp, &reference)?;
            print!("{}", report.to_table());
            if let Some(kv) = kv {
                fs::write(&kv, report.to_kv()).with_context(|| format!("writing {}", kv.display()))?;
            }
        }
        Command::RunTable {
            common,
            fractions,
            systems,
            dump_config,
        } => {
            let cfg = load_config(&common)?;
            if dump_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let fractions = if fractions.is_empty() { vec![1.0] } else { fractions };
            let systems = if systems.is_empty() {
                SystemId::ALL.to_vec()
            } else {
                systems
            };
            let mut runner = Runner::new(&cfg, &common.out)?.on_progress(|l| eprintln!("{l}"));
            let (tables, sweep) = runner.run_sweep(&fractions, &systems)?;
            for t in &tables {
                println!("{}", t.to_text());
            }
            if tables.len() > 1 {
                print!("{}", sweep.to_text());
            }
            let failed: Vec<String> = tables
                .iter()
                .flat_map(|t| {
                    t.rows
                        .iter()
                        .filter(|r| r.error.is_some())
                        .map(move |r| format!("{} at {}", r.label, t.fraction))
                })
                .collect();
            ensure!(failed.is_empty(), "systems failed: {}", failed.join(", "));
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    run(Cli::parse())
}
