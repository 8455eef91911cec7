//! Acceptance suite. Each criterion runs in order and prints one line:
//! `criterion N PASS|FAIL (seconds): detail`. The test fails at the end if
//! any criterion failed, after all of them have been reported.
//!
//! Criterion 6 trains the full default table, so this target takes roughly
//! twenty minutes on one core.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::oracles::*;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssum_core::compute::Tensor;
use ssum_core::decoding::{beam_search, greedy_decode, BeamConfig, ModelScorer, StepScorer};
use ssum_core::metrics::{edit_distance, lcs_len, meteor, rouge_l, rouge_n, tokenize, wer};
use ssum_core::model::{Seq2SeqModel, SourceInput, TokenId};
use ssum_core::pipeline::stages::{fresh_model, stage_examples};
use ssum_core::pipeline::{ExperimentConfig, Runner, StageName, SystemId};
use ssum_core::training::{homogeneous_batches, label_smoothed_ce, mixed_batch_count};
use ssum_core::transfer::{
    build_variant, load_checkpoint, save_checkpoint, transplant, Checkpoint, CheckpointStore, Provenance,
    TransplantSource, TransplantSpec, Variant,
};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Every primitive and the full label-smoothed seq2seq loss, 20 seeds each,
/// central differences with step 1e-5 and relative tolerance 1e-4.
fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let checks = primitive_gradient_checks();
    for (name, f) in &checks {
        for seed in 0..20 {
            let r = f(seed);
            check(r <= 1.0, || {
                format!("{name} seed {seed}: error is {r:.2}x the tolerance")
            })?;
            worst = worst.max(r);
        }
    }
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let mut speech = Seq2SeqModel::new(tiny_speech_config(14), tiny_vocab(10), seed).unwrap();
        jitter(&mut speech, seed);
        let frames = r.gen_range(9..16);
        let x = random_tensor(&mut r, &[frames, 6]);
        let (tl, sl) = (r.gen_range(2..6), r.gen_range(2..7));
        let targets = random_targets(&mut r, tl, 14);
        let a = model_grad_check(&speech, SourceInput::Features(&x), &targets, 0.1);

        let mut text = Seq2SeqModel::new(tiny_text_config(14), tiny_vocab(10), seed).unwrap();
        jitter(&mut text, seed + 50);
        let src = random_targets(&mut r, sl, 14);
        let b = model_grad_check(&text, SourceInput::Tokens(&src), &targets, 0.1);
        check(a <= 1.0 && b <= 1.0, || {
            format!("model loss seed {seed}: speech {a:.2}, text {b:.2} x tolerance")
        })?;
        worst = worst.max(a).max(b);
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs <= 120.0, || format!("took {secs:.0} s, limit 120 s"))?;
    Ok(format!(
        "{} primitives and the speech and text model losses over 20 seeds, worst error {:.3}x tolerance",
        checks.len(),
        worst
    ))
}

/// Toy-size sources, the three transplant variants, self transplant and a
/// save/load round trip.
fn transplants() -> Outcome {
    let cfg = ExperimentConfig::default();
    let vocab = cfg.corpus.vocabulary().unwrap();
    let speech = |s| fresh_model(&ExperimentConfig { seed: s, ..cfg.clone() }.reseeded(), &vocab, true).unwrap();
    let text = |s| fresh_model(&ExperimentConfig { seed: s, ..cfg.clone() }.reseeded(), &vocab, false).unwrap();
    let mut store = CheckpointStore::new();
    store.insert(Checkpoint::new(speech(1), Provenance::Asr, "asr"));
    store.insert(Checkpoint::new(speech(2), Provenance::Ssum, "ssum"));
    store.insert(Checkpoint::new(text(3), Provenance::Lm, "lm"));
    store.insert(Checkpoint::new(text(4), Provenance::Tsum, "tsum"));

    let mut copied = 0;
    for v in [Variant::P1, Variant::P2, Variant::P3] {
        let (enc, dec) = v.sources();
        let m = transplant(&build_variant(v, &store).unwrap()).map_err(|e| e.to_string())?;
        let (es, ds) = (&store.get(enc).unwrap().model, &store.get(dec).unwrap().model);
        for (name, t) in m.params().iter() {
            let src = if name.starts_with("encoder.") { es } else { ds };
            let want = src
                .params()
                .by_name(name)
                .ok_or_else(|| format!("{v:?}: {name} has no source"))?;
            check(bits(t) == bits(want), || {
                format!("{v:?}: {name} differs from its source")
            })?;
            copied += 1;
        }
        check(
            m.params().len()
                == es.params().names().iter().filter(|n| n.starts_with("encoder.")).count()
                    + ds.params().names().iter().filter(|n| n.starts_with("decoder.")).count(),
            || format!("{v:?}: parameter count"),
        )?;
    }

    for ck in [
        store.get(Provenance::Ssum).unwrap(),
        store.get(Provenance::Tsum).unwrap(),
    ] {
        let src = TransplantSource {
            checkpoint: ck,
            expect: ck.provenance,
        };
        let m = transplant(&TransplantSpec {
            encoder: src,
            decoder: src,
            strict: true,
            target: None,
        })
        .map_err(|e| e.to_string())?;
        check(m == ck.model, || {
            format!("self transplant of {} changed the model", ck.provenance)
        })?;
    }

    let dir = tempfile::tempdir().unwrap();
    for ck in [store.get(Provenance::Asr).unwrap(), store.get(Provenance::Lm).unwrap()] {
        let path = dir.path().join(format!("{}.ckpt", ck.provenance));
        save_checkpoint(ck, &path).map_err(|e| e.to_string())?;
        let back = load_checkpoint(&path).map_err(|e| e.to_string())?;
        check(&back == ck, || {
            format!("{} checkpoint changed on reload", ck.provenance)
        })?;
        for ((n, a), (_, b)) in back.model.params().iter().zip(ck.model.params().iter()) {
            check(bits(a) == bits(b), || format!("{n} not bit-equal after reload"))?;
        }
    }
    Ok(format!(
        "P-1/P-2/P-3 copy {copied} tensors bit-exactly; self transplant and reload are identities"
    ))
}

/// Width 1 against greedy on 100 random models, then width 27 against the
/// exhaustive argmax on rigged scorers.
fn decoding() -> Outcome {
    let start = Instant::now();
    for seed in 0..100u64 {
        let mut r = rng(2000 + seed);
        let speech = seed % 2 == 0;
        let config = if speech {
            tiny_speech_config(14)
        } else {
            tiny_text_config(14)
        };
        let mut model = Seq2SeqModel::new(config, tiny_vocab(10), seed).unwrap();
        jitter(&mut model, seed);
        let (x, toks);
        let src = if speech {
            let frames = r.gen_range(8..20);
            x = random_tensor(&mut r, &[frames, 6]);
            SourceInput::Features(&x)
        } else {
            toks = random_targets(&mut r, 6, 14);
            SourceInput::Tokens(&toks)
        };
        let scorer = ModelScorer {
            model: &model,
            memory: model.encode(src).unwrap(),
        };
        for alpha in [0.0, 0.3] {
            let cfg = BeamConfig {
                width: 1,
                length_penalty: alpha,
                max_len: 10,
                end_detection: true,
            };
            let beam = beam_search(&scorer, &cfg).map_err(|e| e.to_string())?[0].output(scorer.eos());
            let greedy = greedy_decode(&scorer, 10).map_err(|e| e.to_string())?;
            check(beam == greedy, || {
                format!("model seed {seed} α {alpha}: beam {beam:?} greedy {greedy:?}")
            })?;
        }
    }
    let mut cases = 0;
    for vocab in [2, 3] {
        for seed in 0..40 {
            for levels in [None, Some(2)] {
                let s = Rigged { seed, vocab, levels };
                for alpha in [-0.7, 0.0, 0.3, 1.0] {
                    let want = oracle_best(&enumerate(&s, alpha, 3)).clone();
                    for end_detection in [false, true] {
                        let cfg = BeamConfig {
                            width: 27,
                            length_penalty: alpha,
                            max_len: 3,
                            end_detection,
                        };
                        let got = beam_search(&s, &cfg).map_err(|e| e.to_string())?.remove(0);
                        check(got == want, || {
                            format!("rigged vocab {vocab} seed {seed} α {alpha} end {end_detection}")
                        })?;
                        cases += 1;
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs <= 60.0, || format!("took {secs:.0} s, limit 60 s"))?;
    Ok(format!(
        "width 1 equals greedy on 100 models; width 27 equals the exhaustive argmax in {cases} rigged cases"
    ))
}

fn metrics() -> Outcome {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(3000);
    for i in 0..200 {
        let (h, rf) = (random_seq(&mut r, 15, 6), random_seq(&mut r, 15, 6));
        let l = lcs_oracle(&h, &rf);
        let got = rouge_l(&h, &rf).f1;
        check(
            lcs_len(&h, &rf) == l && (got - f1(l, h.len(), rf.len())).abs() < 1e-9,
            || format!("ROUGE-L pair {i}"),
        )?;
    }
    let mut wer_pairs = 0;
    while wer_pairs < 200 {
        let (h, rf) = (random_seq(&mut r, 15, 6), random_seq(&mut r, 15, 6));
        if rf.is_empty() {
            continue;
        }
        let d = edit_oracle(&h, &rf);
        let w = wer(&h, &rf).map_err(|e| e.to_string())?;
        check(
            edit_distance(&h, &rf) == d && w == 100.0 * d as f64 / rf.len() as f64,
            || format!("WER pair {wer_pairs}"),
        )?;
        wer_pairs += 1;
    }
    for i in 0..500 {
        let (h, rf) = (random_seq(&mut r, 7, 5), random_seq(&mut r, 7, 5));
        let (m, ch, score) = meteor_oracle(&h, &rf);
        let got = meteor(&h, &rf);
        check(
            got.matches == m && got.chunks == ch && (got.score - score).abs() < 1e-12,
            || format!("METEOR case {i}: {h:?} / {rf:?}"),
        )?;
    }
    let a = rouge_n(&tokenize("the cat sat"), &tokenize("the cat"), 1).f1;
    let b = rouge_n(&tokenize("the cat"), &tokenize("the cat sat"), 1).f1;
    let ten = tokenize("a b c d e f g h i j");
    let m = meteor(&ten, &ten).score;
    check(a == 80.0 && b == 80.0, || format!("ROUGE-1 hand value {a} / {b}"))?;
    check(m == 0.9995, || format!("METEOR hand value {m}"))?;
    let secs = start.elapsed().as_secs_f64();
    check(secs <= 60.0, || format!("took {secs:.0} s, limit 60 s"))?;
    Ok("200 ROUGE-L, 200 WER and 500 METEOR oracle cases agree; ROUGE-1 80.0 and METEOR 0.9995 exact".into())
}

fn loss() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in [4usize, 50, 500] {
        let uniform = Tensor::new(vec![2, k], vec![1.0 / k as f64; 2 * k]).unwrap();
        let l = label_smoothed_ce(&uniform, &[1, 3], 0.1).map_err(|e| e.to_string())?;
        let err = (l - (k as f64).ln()).abs();
        check(err <= 1e-12, || format!("K={k}: |loss − ln K| = {err:e}"))?;
        worst = worst.max(err);
    }

    let (k, eps, y) = (4usize, 0.1, 2);
    let smoothed: Vec<f64> = (0..k)
        .map(|c| {
            if c == y {
                1.0 - eps + eps / k as f64
            } else {
                eps / k as f64
            }
        })
        .collect();
    let ce =
        |q: &[f64]| label_smoothed_ce(&Tensor::new(vec![1, k], q.to_vec()).unwrap(), &[y as TokenId], eps).unwrap();
    let at_target = ce(&smoothed);
    let n = 50;
    for a in 0..=n {
        for b in 0..=n - a {
            for c in 0..=n - a - b {
                let q = [a, b, c, n - a - b - c].map(|x| x as f64 / n as f64);
                check(ce(&q) >= at_target - 1e-15, || {
                    format!("grid point {q:?} beats the smoothed target")
                })?;
            }
        }
    }
    // unconstrained descent over softmax logits lands on the smoothed target
    let mut z = vec![0.0f64; k];
    let softmax = |z: &[f64]| {
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    for _ in 0..20000 {
        let p = softmax(&z);
        for c in 0..k {
            z[c] -= 0.5 * (p[c] - smoothed[c]);
        }
    }
    let p = softmax(&z);
    let gap = p.iter().zip(&smoothed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(gap < 1e-9, || format!("descent minimizer is {gap:e} from y^LS"))?;
    Ok(format!("uniform loss within {worst:.1e} of ln K for K=4/50/500; minimizer over the K=4 simplex is y^LS (gap {gap:.1e})"))
}

struct Sweep {
    runner: Runner,
    table_seconds: f64,
}

/// Full default table at fraction 1.
fn end_to_end(out: &std::path::Path) -> (Outcome, Option<Sweep>) {
    let start = Instant::now();
    let mut runner = match Runner::new(&ExperimentConfig::default(), out) {
        Ok(r) => r.on_progress(|l| eprintln!("  {l}")),
        Err(e) => return (Err(e.to_string()), None),
    };
    let table = match runner.run_table(1.0) {
        Ok(t) => t,
        Err(e) => return (Err(e.to_string()), None),
    };
    let secs = start.elapsed().as_secs_f64();
    println!("{}", table.to_text());
    let outcome = (|| {
        check(runner.corpus().train.len() == 2000, || {
            "default corpus is not 2,000 triplets".into()
        })?;
        let untrained = table
            .untrained
            .as_ref()
            .and_then(|r| r.rouge1())
            .ok_or("no untrained reference row")?;
        let b1 = table.row(SystemId::B1).and_then(|r| r.rouge1()).ok_or("B-1 failed")?;
        check(b1 >= 80.0, || format!("B-1 ROUGE-1 {b1:.2} < 80"))?;
        for s in [SystemId::B1, SystemId::B2, SystemId::P1, SystemId::P2, SystemId::P3] {
            let r = table
                .row(s)
                .and_then(|r| r.rouge1())
                .ok_or_else(|| format!("{s} failed"))?;
            check(r - untrained >= 50.0, || {
                format!("{s} ROUGE-1 {r:.2} is not 50 above untrained {untrained:.2}")
            })?;
        }
        check(secs <= 1800.0, || format!("table took {secs:.0} s, limit 1800 s"))?;
        let margin = [SystemId::B1, SystemId::B2, SystemId::P1, SystemId::P2, SystemId::P3]
            .iter()
            .filter_map(|&s| table.row(s).and_then(|r| r.rouge1()))
            .fold(f64::INFINITY, f64::min)
            - untrained;
        Ok(format!(
            "B-1 ROUGE-1 {b1:.2}; smallest trained margin over untrained ({untrained:.2}) is {margin:.2}; table in {secs:.0} s"
        ))
    })();
    (
        outcome,
        Some(Sweep {
            runner,
            table_seconds: secs,
        }),
    )
}

fn reproducible() -> Outcome {
    let run = || -> Result<Vec<u8>, String> {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut runner = Runner::new(&ExperimentConfig::smoke(), tmp.path()).map_err(|e| e.to_string())?;
        runner.run_table(1.0).map_err(|e| e.to_string())?;
        fs::read(runner.fraction_dir(1.0).join("results.kv")).map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    check(a == b, || "results.kv differs between runs".into())?;
    Ok(format!(
        "two smoke-config table runs wrote identical results.kv ({} bytes)",
        a.len()
    ))
}

/// The first B-2 epoch's batches, drawn exactly as the trainer draws them,
/// plus 50 further shuffles.
fn homogeneity() -> Outcome {
    let cfg = ExperimentConfig::default().reseeded();
    let corpus = ssum_core::data::generate_corpus(&cfg.corpus).map_err(|e| e.to_string())?;
    let (train, _) = stage_examples(&cfg, &corpus, StageName::B2, 1.0).map_err(|e| e.to_string())?;
    let artificial = train.iter().filter(|e| e.artificial).count();
    check(artificial > 0 && artificial < train.len(), || {
        "B-2 data is not mixed".into()
    })?;
    let tc = StageName::B2.train_config(&cfg);
    let mut r = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut audited = 0;
    for round in 0..51 {
        let batches = homogeneous_batches(&train, tc.batch_size, &mut r);
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        check(seen == (0..train.len()).collect::<Vec<_>>(), || {
            format!("round {round}: batches do not cover the epoch")
        })?;
        let mixed = mixed_batch_count(&train, &batches);
        check(mixed == 0, || format!("round {round}: {mixed} mixed batches"))?;
        audited += batches.len();
    }
    Ok(format!(
        "{} real + {artificial} artificial examples; 0 mixed among {audited} audited batches",
        train.len() - artificial
    ))
}

fn sweep(s: &mut Sweep) -> Outcome {
    let start = Instant::now();
    let fractions = [0.25, 0.5, 1.0];
    let (tables, report) = s
        .runner
        .run_sweep(&fractions, &SystemId::ALL)
        .map_err(|e| e.to_string())?;
    check(tables.len() == 3, || format!("{} tables", tables.len()))?;
    for f in fractions {
        let dir = s.runner.fraction_dir(f);
        check(
            dir.join("results.txt").exists() && dir.join("results.kv").exists(),
            || format!("no table files at {f}"),
        )?;
    }
    print!("{}", report.to_text());
    let monotone: Vec<String> = SystemId::ALL
        .iter()
        .map(|&id| {
            format!(
                "{id} {}",
                match report.monotone(id) {
                    Some(true) => "yes",
                    Some(false) => "no",
                    None => "n/a",
                }
            )
        })
        .collect();
    Ok(format!(
        "three tables written in {:.0} s (after the {:.0} s full table); METEOR monotone in fraction: {}",
        start.elapsed().as_secs_f64(),
        s.table_seconds,
        monotone.join(", ")
    ))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default())
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n} {tag} ({secs:.1} s) {name}: {detail}");
    outcome.is_ok()
}

#[test]
fn acceptance() {
    let out = tempfile::tempdir().unwrap();
    let mut passed = vec![
        run(1, "gradient correctness", gradients),
        run(2, "transplant exactness", transplants),
        run(3, "decoding oracles", decoding),
        run(4, "metric oracles", metrics),
        run(5, "loss analytics", loss),
    ];
    let mut state = None;
    passed.push(run(6, "end-to-end toy pipeline", || {
        let (o, s) = end_to_end(out.path());
        state = s;
        o
    }));
    passed.push(run(7, "reproducibility", reproducible));
    passed.push(run(8, "batch homogeneity", homogeneity));
    passed.push(run(9, "fraction sweep", || match state.as_mut() {
        Some(s) => sweep(s),
        None => Err("no runner: criterion 6 could not start".into()),
    }));
    let failed: Vec<usize> = passed
        .iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
