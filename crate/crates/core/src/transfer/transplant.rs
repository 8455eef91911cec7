use std::collections::BTreeMap;

use super::{Checkpoint, Provenance, TransferError};
use crate::model::{ModelConfig, Seq2SeqModel};

#[derive(Clone, Copy, Debug)]
pub struct TransplantSource<'a> {
    pub checkpoint: &'a Checkpoint,
    pub expect: Provenance,
}

/// Encoder from one checkpoint, decoder from another.
#[derive(Clone, Debug)]
pub struct TransplantSpec<'a> {
    pub encoder: TransplantSource<'a>,
    pub decoder: TransplantSource<'a>,
    /// Reject sources whose provenance differs from the expectation.
    pub strict: bool,
    /// Architecture of the result; defaults to the encoder source's encoder
    /// and the decoder source's decoder. Every copied tensor must fit it exactly.
    pub target: Option<ModelConfig>,
}

fn check_provenance(role: &'static str, src: &TransplantSource, strict: bool) -> Result<(), TransferError> {
    if strict && src.checkpoint.provenance != src.expect {
        return Err(TransferError::Provenance {
            role,
            expected: src.expect,
            found: src.checkpoint.provenance,
        });
    }
    Ok(())
}

/// New model whose `encoder.*` tensors are copies of the encoder source's
/// and whose `decoder.*` tensors (embedding, positions, blocks, output
/// projection) are copies of the decoder source's. Sources are untouched.
pub fn transplant(spec: &TransplantSpec) -> Result<Seq2SeqModel, TransferError> {
    check_provenance("encoder", &spec.encoder, spec.strict)?;
    check_provenance("decoder", &spec.decoder, spec.strict)?;
    let enc = &spec.encoder.checkpoint.model;
    let dec = &spec.decoder.checkpoint.model;
    let (enc_hash, dec_hash) = (enc.vocab().content_hash(), dec.vocab().content_hash());
    if enc_hash != dec_hash {
        return Err(TransferError::VocabularyMismatch {
            encoder: enc_hash,
            decoder: dec_hash,
        });
    }
    let target = spec.target.clone().unwrap_or_else(|| ModelConfig {
        encoder: enc.config().encoder.clone(),
        decoder: dec.config().decoder.clone(),
        vocab_size: dec.config().vocab_size,
    });
    let named = enc
        .params()
        .iter()
        .filter(|(n, _)| n.starts_with("encoder."))
        .chain(dec.params().iter().filter(|(n, _)| n.starts_with("decoder.")))
        .map(|(n, t)| (n, t.clone()));
    Ok(Seq2SeqModel::from_named(target, dec.vocab().clone(), named)?)
}

/// The three transplant recipes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    /// SSum encoder + TSum decoder.
    P1,
    /// ASR encoder + TSum decoder.
    P2,
    /// SSum encoder + LM decoder.
    P3,
}

impl Variant {
    /// (encoder provenance, decoder provenance)
    pub fn sources(self) -> (Provenance, Provenance) {
        match self {
            Variant::P1 => (Provenance::Ssum, Provenance::Tsum),
            Variant::P2 => (Provenance::Asr, Provenance::Tsum),
            Variant::P3 => (Provenance::Ssum, Provenance::Lm),
        }
    }
}

/// Checkpoints available for transplantation, one per provenance.
#[derive(Clone, Debug, Default)]
pub struct CheckpointStore {
    entries: BTreeMap<Provenance, Checkpoint>,
}

impl CheckpointStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Files the checkpoint under its own provenance, replacing any previous one.
    pub fn insert(&mut self, checkpoint: Checkpoint) {
        self.entries.insert(checkpoint.provenance, checkpoint);
    }

    pub fn get(&self, provenance: Provenance) -> Option<&Checkpoint> {
        self.entries.get(&provenance)
    }
}

pub fn build_variant(variant: Variant, store: &CheckpointStore) -> Result<TransplantSpec<'_>, TransferError> {
    let (e, d) = variant.sources();
    let source = |p| {
        store
            .get(p)
            .map(|checkpoint| TransplantSource { checkpoint, expect: p })
            .ok_or(TransferError::MissingCheckpoint(p))
    };
    Ok(TransplantSpec {
        encoder: source(e)?,
        decoder: source(d)?,
        strict: true,
        target: None,
    })
}
