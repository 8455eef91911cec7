mod common;

use common::*;
use ssum_core::compute::Tensor;
use ssum_core::model::{ModelError, Seq2SeqModel, SourceInput, Vocabulary};
use ssum_core::transfer::*;

const VOCAB: usize = 10;

fn vocab() -> Vocabulary {
    tiny_vocab(VOCAB - 4)
}

fn speech(seed: u64) -> Seq2SeqModel {
    Seq2SeqModel::new(tiny_speech_config(VOCAB), vocab(), seed).unwrap()
}

fn text(seed: u64) -> Seq2SeqModel {
    Seq2SeqModel::new(tiny_text_config(VOCAB), vocab(), seed).unwrap()
}

fn store() -> CheckpointStore {
    let mut s = CheckpointStore::new();
    s.insert(Checkpoint::new(speech(1), Provenance::Asr, "a"));
    s.insert(Checkpoint::new(speech(2), Provenance::Ssum, "b"));
    s.insert(Checkpoint::new(text(3), Provenance::Lm, "c"));
    s.insert(Checkpoint::new(text(4), Provenance::Tsum, "d"));
    s
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Splits a checkpoint file into (magic line, header JSON, payload) without the library.
fn split_file(bytes: &[u8]) -> (String, serde_json::Value, Vec<u8>) {
    let nl1 = bytes.iter().position(|&b| b == b'\n').unwrap();
    let rest = &bytes[nl1 + 1..];
    let nl2 = rest.iter().position(|&b| b == b'\n').unwrap();
    let line = std::str::from_utf8(&rest[..nl2]).unwrap();
    let len: usize = line.split(' ').next().unwrap().parse().unwrap();
    let header = &rest[nl2 + 1..nl2 + 1 + len];
    (
        String::from_utf8(bytes[..nl1].to_vec()).unwrap(),
        serde_json::from_slice(header).unwrap(),
        rest[nl2 + 1 + len..].to_vec(),
    )
}

fn join_file(magic: &str, header: &serde_json::Value, payload: &[u8]) -> Vec<u8> {
    use sha2::{Digest, Sha256};
    let h = serde_json::to_vec(header).unwrap();
    let mut out = format!("{magic}\n{} {}\n", h.len(), hex::encode(Sha256::digest(&h))).into_bytes();
    out.extend_from_slice(&h);
    out.extend_from_slice(payload);
    out
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for ck in [
        Checkpoint::new(speech(7), Provenance::Ssum, "x"),
        Checkpoint::new(text(8), Provenance::Lm, ""),
    ] {
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.provenance, ck.provenance);
        assert_eq!(back.log_digest, ck.log_digest);
        assert_eq!(back.model.config(), ck.model.config());
        assert_eq!(back.model.vocab().content_hash(), ck.model.vocab().content_hash());
        for ((n1, t1), (n2, t2)) in ck.model.params().iter().zip(back.model.params().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert_eq!(bits(t1), bits(t2), "{n1}");
        }
        assert_eq!(std::fs::read(&path).unwrap(), ck.to_bytes());
    }
}

#[test]
fn corrupted_bytes_are_rejected() {
    let bytes = Checkpoint::new(speech(1), Provenance::Asr, "").to_bytes();
    let (magic, header, payload) = split_file(&bytes);
    let header_start = bytes.len() - payload.len() - serde_json::to_vec(&header).unwrap().len();

    let mut bad = bytes.clone();
    bad[bytes.len() - 3] ^= 0x01;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(TransferError::Checksum(_))));

    let mut bad = bytes.clone();
    bad[header_start + 5] ^= 0x20;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(TransferError::Checksum(w)) if w == "header"));

    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 8]),
        Err(TransferError::Truncated(_))
    ));
    assert!(matches!(
        Checkpoint::from_bytes(b"garbage"),
        Err(TransferError::BadMagic)
    ));
    let mut other = magic.replace(" 1", " 99").into_bytes();
    other.extend_from_slice(&bytes[magic.len()..]);
    assert!(matches!(
        Checkpoint::from_bytes(&other),
        Err(TransferError::Version { found: 99, expected: 1 })
    ));
}

#[test]
fn corrupted_file_on_disk_yields_no_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&Checkpoint::new(text(2), Provenance::Tsum, ""), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n / 2 + n / 4] ^= 0x80;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(TransferError::Checksum(_))));
}

#[test]
fn config_disagreeing_with_tensors_names_the_parameter() {
    let bytes = Checkpoint::new(text(1), Provenance::Lm, "").to_bytes();
    let (magic, mut header, payload) = split_file(&bytes);
    header["config"]["decoder"]["ff_dim"] = serde_json::json!(13);
    match Checkpoint::from_bytes(&join_file(&magic, &header, &payload)) {
        Err(TransferError::Model(ModelError::ParameterShape { name, .. })) => {
            assert!(name.starts_with("decoder.layers.0.ff"), "{name}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn self_transplant_is_identity() {
    for ck in [
        Checkpoint::new(speech(3), Provenance::Ssum, ""),
        Checkpoint::new(text(3), Provenance::Tsum, ""),
    ] {
        let src = TransplantSource {
            checkpoint: &ck,
            expect: ck.provenance,
        };
        let m = transplant(&TransplantSpec {
            encoder: src,
            decoder: src,
            strict: true,
            target: None,
        })
        .unwrap();
        assert_eq!(m, ck.model);
    }
}

#[test]
fn variants_copy_sources_bit_exactly() {
    let store = store();
    let before: Vec<String> = [Provenance::Asr, Provenance::Ssum, Provenance::Lm, Provenance::Tsum]
        .iter()
        .map(|&p| store.get(p).unwrap().content_hash())
        .collect();
    for (variant, enc, dec) in [
        (Variant::P1, Provenance::Ssum, Provenance::Tsum),
        (Variant::P2, Provenance::Asr, Provenance::Tsum),
        (Variant::P3, Provenance::Ssum, Provenance::Lm),
    ] {
        let spec = build_variant(variant, &store).unwrap();
        assert_eq!(spec.encoder.checkpoint.provenance, enc);
        assert_eq!(spec.decoder.checkpoint.provenance, dec);
        let m = transplant(&spec).unwrap();
        let (es, ds) = (&store.get(enc).unwrap().model, &store.get(dec).unwrap().model);
        let mut encoder_count = 0;
        for (name, t) in m.params().iter() {
            let source = if name.starts_with("encoder.") {
                encoder_count += 1;
                es
            } else {
                assert!(name.starts_with("decoder."), "{name}");
                ds
            };
            assert_eq!(
                bits(t),
                bits(source.params().by_name(name).unwrap()),
                "{variant:?} {name}"
            );
        }
        let source_encoder = es.params().names().iter().filter(|n| n.starts_with("encoder.")).count();
        assert_eq!(encoder_count, source_encoder);
        assert_eq!(m.config().encoder, es.config().encoder);
        assert_eq!(m.config().decoder, ds.config().decoder);
    }
    let after: Vec<String> = [Provenance::Asr, Provenance::Ssum, Provenance::Lm, Provenance::Tsum]
        .iter()
        .map(|&p| store.get(p).unwrap().content_hash())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn transplanted_forward_matches_hand_assembly() {
    let store = store();
    let m = transplant(&build_variant(Variant::P1, &store).unwrap()).unwrap();
    let (es, ds) = (
        &store.get(Provenance::Ssum).unwrap().model,
        &store.get(Provenance::Tsum).unwrap().model,
    );
    let mut named: Vec<(&str, Tensor)> = Vec::new();
    for (n, t) in es.params().iter() {
        if n.starts_with("encoder.") {
            named.push((n, t.clone()));
        }
    }
    for (n, t) in ds.params().iter() {
        if n.starts_with("decoder.") {
            named.push((n, t.clone()));
        }
    }
    let mut cfg = es.config().clone();
    cfg.decoder = ds.config().decoder.clone();
    let hand = Seq2SeqModel::from_named(cfg, vocab(), named).unwrap();
    let mut r = rng(4);
    for _ in 0..5 {
        let x = random_tensor(&mut r, &[16, 6]);
        let y = random_targets(&mut r, 5, VOCAB);
        let a = m.forward_teacher_forced(SourceInput::Features(&x), &y).unwrap();
        let b = hand.forward_teacher_forced(SourceInput::Features(&x), &y).unwrap();
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn missing_source_is_an_error() {
    let mut s = CheckpointStore::new();
    s.insert(Checkpoint::new(speech(2), Provenance::Ssum, ""));
    s.insert(Checkpoint::new(text(3), Provenance::Lm, ""));
    assert!(matches!(
        build_variant(Variant::P1, &s),
        Err(TransferError::MissingCheckpoint(Provenance::Tsum))
    ));
    assert!(matches!(
        build_variant(Variant::P2, &s),
        Err(TransferError::MissingCheckpoint(Provenance::Asr))
    ));
    assert!(build_variant(Variant::P3, &s).is_ok());
}

#[test]
fn strict_provenance_and_vocabulary_checks() {
    let asr = Checkpoint::new(speech(1), Provenance::Asr, "");
    let tsum = Checkpoint::new(text(2), Provenance::Tsum, "");
    let spec = TransplantSpec {
        encoder: TransplantSource {
            checkpoint: &asr,
            expect: Provenance::Ssum,
        },
        decoder: TransplantSource {
            checkpoint: &tsum,
            expect: Provenance::Tsum,
        },
        strict: true,
        target: None,
    };
    assert!(matches!(
        transplant(&spec),
        Err(TransferError::Provenance {
            role: "encoder",
            expected: Provenance::Ssum,
            found: Provenance::Asr
        })
    ));
    assert!(transplant(&TransplantSpec {
        strict: false,
        ..spec.clone()
    })
    .is_ok());

    let other_vocab = Vocabulary::new((0..VOCAB - 4).map(|i| format!("v{i}"))).unwrap();
    let foreign = Checkpoint::new(
        Seq2SeqModel::new(tiny_text_config(VOCAB), other_vocab, 2).unwrap(),
        Provenance::Tsum,
        "",
    );
    let spec = TransplantSpec {
        decoder: TransplantSource {
            checkpoint: &foreign,
            expect: Provenance::Tsum,
        },
        strict: false,
        ..spec
    };
    assert!(matches!(
        transplant(&spec),
        Err(TransferError::VocabularyMismatch { .. })
    ));
}

#[test]
fn position_table_size_must_match() {
    let store = store();
    let mut spec = build_variant(Variant::P1, &store).unwrap();
    let mut target = tiny_speech_config(VOCAB);
    target.decoder.max_len += 4;
    spec.target = Some(target);
    match transplant(&spec) {
        Err(TransferError::Model(ModelError::ParameterShape { name, .. })) => assert_eq!(name, "decoder.pos"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn width_mismatch_is_a_hard_error() {
    let mut cfg = tiny_text_config(VOCAB);
    if let ssum_core::model::EncoderConfig::Text(e) = &mut cfg.encoder {
        e.dim = 4;
    }
    cfg.decoder.dim = 4;
    let lm = Checkpoint::new(Seq2SeqModel::new(cfg, vocab(), 1).unwrap(), Provenance::Lm, "");
    let ssum = Checkpoint::new(speech(2), Provenance::Ssum, "");
    let spec = TransplantSpec {
        encoder: TransplantSource {
            checkpoint: &ssum,
            expect: Provenance::Ssum,
        },
        decoder: TransplantSource {
            checkpoint: &lm,
            expect: Provenance::Lm,
        },
        strict: true,
        target: None,
    };
    assert!(matches!(
        transplant(&spec),
        Err(TransferError::Model(ModelError::InvalidConfig(_)))
    ));
}
