//! Deterministic synthetic corpus of (features, transcription, summary) triplets.
//!
//! Each word of the vocabulary owns a fixed `[m, F]` feature template; an
//! utterance is the concatenation of its words' templates plus Gaussian
//! noise. The summary is a pure function of the transcription: its keywords
//! in order, wrapped in a fixed written-style frame.

mod corpus;
mod io;
mod views;

pub use corpus::{
    external_pairs, generate_corpus, match_templates, summary_rule, Corpus, CorpusConfig, Split, TextPair, Triplet,
    Voice, FRAME_PREFIX, KEYWORDS, PLAIN_WORDS, PUBLISHED_SPLITS,
};
pub use io::{load_corpus, read_features, save_corpus, write_features};
pub use views::{subset, synth_augment, view, LmNoise, ViewKind};

use thiserror::Error;

use crate::compute::Tensor;
use crate::model::{ModelError, SourceInput, TokenId};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("fraction {fraction} of {len} samples selects nothing")]
    EmptySubset { fraction: f64, len: usize },
    #[error("fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
}

/// Encoder input of one training pair.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Features(Tensor),
    Tokens(Vec<TokenId>),
}

impl Source {
    pub fn as_input(&self) -> SourceInput<'_> {
        match self {
            Source::Features(t) => SourceInput::Features(t),
            Source::Tokens(t) => SourceInput::Tokens(t),
        }
    }

    pub fn is_features(&self) -> bool {
        matches!(self, Source::Features(_))
    }
}

/// One supervised pair. `target` ends with `<eos>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub source: Source,
    pub target: Vec<TokenId>,
    /// Rendered with the synthetic voice rather than taken from the corpus.
    pub artificial: bool,
}
