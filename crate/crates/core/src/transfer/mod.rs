//! Checkpoint persistence and encoder/decoder transplantation.

mod checkpoint;
mod transplant;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use transplant::{build_variant, transplant, CheckpointStore, TransplantSource, TransplantSpec, Variant};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;

/// Which training stage produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Asr,
    Lm,
    Ssum,
    Tsum,
    Transferred,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Asr => "asr",
            Provenance::Lm => "lm",
            Provenance::Ssum => "ssum",
            Provenance::Tsum => "tsum",
            Provenance::Transferred => "transferred",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("embedded vocabulary does not match its recorded hash")]
    VocabularyHash,
    #[error("vocabularies differ: encoder source {encoder}, decoder source {decoder}")]
    VocabularyMismatch { encoder: String, decoder: String },
    #[error("{role} source has provenance {found}, expected {expected}")]
    Provenance {
        role: &'static str,
        expected: Provenance,
        found: Provenance,
    },
    #[error("no {0} checkpoint available")]
    MissingCheckpoint(Provenance),
    #[error(transparent)]
    Model(#[from] ModelError),
}
