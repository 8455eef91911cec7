//! File layout:
//!
//! ```text
//! SSUMCKPT <version>\n
//! <header bytes> <header sha256 hex>\n
//! <header: JSON>
//! <payload: f64 little-endian, tensors back to back>
//! ```
//!
//! The header records config, vocabulary and its hash, provenance, the
//! training-log digest, and each tensor's name, shape, payload offset and
//! sha256.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Provenance, TransferError};
use crate::compute::Tensor;
use crate::model::{ModelConfig, Seq2SeqModel, Vocabulary};

pub const MAGIC: &str = "SSUMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Seq2SeqModel,
    pub provenance: Provenance,
    /// SHA-256 of the training log that produced the parameters; empty if none.
    pub log_digest: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocab: Vocabulary,
    vocab_hash: String,
    provenance: Provenance,
    log_digest: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
    sha256: String,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn tensor_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn new(model: Seq2SeqModel, provenance: Provenance, log_digest: impl Into<String>) -> Self {
        Self {
            model,
            provenance,
            log_digest: log_digest.into(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        for (name, t) in self.model.params().iter() {
            let bytes = tensor_bytes(t);
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset: payload.len(),
                sha256: sha_hex(&bytes),
            });
            payload.extend_from_slice(&bytes);
        }
        let header = Header {
            version: FORMAT_VERSION,
            config: self.model.config().clone(),
            vocab: self.model.vocab().clone(),
            vocab_hash: self.model.vocab().content_hash(),
            provenance: self.provenance,
            log_digest: self.log_digest.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\n{} {}\n", header.len(), sha_hex(&header)).into_bytes();
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    /// SHA-256 of the serialized form.
    pub fn content_hash(&self) -> String {
        sha_hex(&self.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TransferError> {
        let (magic_line, rest) = split_line(bytes).ok_or(TransferError::BadMagic)?;
        let magic_line = std::str::from_utf8(magic_line).map_err(|_| TransferError::BadMagic)?;
        let version = magic_line
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or(TransferError::BadMagic)?;
        if version != FORMAT_VERSION {
            return Err(TransferError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (len_line, rest) = split_line(rest).ok_or_else(|| TransferError::Truncated("no header line".into()))?;
        let len_line = std::str::from_utf8(len_line).map_err(|_| TransferError::Header("header line".into()))?;
        let (len, sha) = len_line
            .split_once(' ')
            .and_then(|(l, s)| Some((l.parse::<usize>().ok()?, s)))
            .ok_or_else(|| TransferError::Header(format!("bad header line {len_line:?}")))?;
        if rest.len() < len {
            return Err(TransferError::Truncated(format!(
                "header needs {len} bytes, {} left",
                rest.len()
            )));
        }
        let (header_bytes, payload) = rest.split_at(len);
        if sha_hex(header_bytes) != sha {
            return Err(TransferError::Checksum("header".into()));
        }
        let header: Header = serde_json::from_slice(header_bytes).map_err(|e| TransferError::Header(e.to_string()))?;
        if header.vocab.content_hash() != header.vocab_hash {
            return Err(TransferError::VocabularyHash);
        }
        let mut named = Vec::with_capacity(header.tensors.len());
        let mut expected_len = 0;
        for entry in &header.tensors {
            let count: usize = entry.shape.iter().product();
            let end = entry.offset + 8 * count;
            let bytes = payload
                .get(entry.offset..end)
                .ok_or_else(|| TransferError::Truncated(format!("payload ends before {}", entry.name)))?;
            if sha_hex(bytes) != entry.sha256 {
                return Err(TransferError::Checksum(entry.name.clone()));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(entry.shape.clone(), data)
                .map_err(|e| TransferError::Header(format!("{}: {e}", entry.name)))?;
            named.push((entry.name.as_str(), t));
            expected_len = expected_len.max(end);
        }
        if payload.len() != expected_len {
            return Err(TransferError::Truncated(format!(
                "payload has {} bytes, header describes {expected_len}",
                payload.len()
            )));
        }
        let model = Seq2SeqModel::from_named(header.config, header.vocab, named)?;
        Ok(Self {
            model,
            provenance: header.provenance,
            log_digest: header.log_digest,
        })
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TransferError + '_ {
    move |source| TransferError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes to a sibling temp file and renames it into place.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), TransferError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&checkpoint.to_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path)(e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TransferError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Checkpoint::from_bytes(&bytes)
}
