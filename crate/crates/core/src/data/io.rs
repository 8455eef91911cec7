//! On-disk corpus layout:
//!
//! ```text
//! config.json          generator config
//! manifest.tsv         id <TAB> split <TAB> flags
//! transcripts.tsv      id <TAB> space-separated tokens
//! summaries.tsv        id <TAB> space-separated tokens
//! features/<id>.bin    u32 LE frames, u32 LE dim, then frames·dim f32 LE row-major
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Corpus, CorpusConfig, DataError, Split, Triplet};
use crate::compute::Tensor;
use crate::model::{TokenId, Vocabulary};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> DataError {
    DataError::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

pub fn write_features(path: &Path, features: &Tensor) -> Result<(), DataError> {
    let (t, f) = (features.rows(), features.cols());
    let mut buf = Vec::with_capacity(8 + 4 * t * f);
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(f as u32).to_le_bytes());
    for &v in features.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_features(path: &Path) -> Result<Tensor, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 8 {
        return Err(format_err(path, "missing header"));
    }
    let t = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * t * f {
        return Err(format_err(
            path,
            format!("expected {} payload bytes, found {}", 4 * t * f, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(vec![t, f], data).map_err(|e| format_err(path, e.to_string()))
}

fn token_line(vocab: &Vocabulary, id: &str, tokens: &[TokenId]) -> String {
    let words: Vec<&str> = tokens.iter().map(|&t| vocab.token(t).unwrap_or("<unk>")).collect();
    format!("{id}\t{}\n", words.join(" "))
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir.join("features")).map_err(io_err(dir))?;
    let cfg_path = dir.join("config.json");
    let json = serde_json::to_string_pretty(&corpus.config).expect("config serializes");
    fs::write(&cfg_path, json).map_err(io_err(&cfg_path))?;
    let (mut manifest, mut transcripts, mut summaries) = (String::new(), String::new(), String::new());
    for split in Split::ALL {
        for t in corpus.split(split) {
            manifest.push_str(&format!("{}\t{}\treal\n", t.id, split.name()));
            transcripts.push_str(&token_line(&corpus.vocab, &t.id, &t.transcription));
            summaries.push_str(&token_line(&corpus.vocab, &t.id, &t.summary));
            write_features(&dir.join("features").join(format!("{}.bin", t.id)), &t.features)?;
        }
    }
    for (name, body) in [
        ("manifest.tsv", manifest),
        ("transcripts.tsv", transcripts),
        ("summaries.tsv", summaries),
    ] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io_err(&p))?;
    }
    Ok(())
}

fn read_token_file(path: &Path, vocab: &Vocabulary) -> Result<HashMap<String, Vec<TokenId>>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let (id, words) = line
            .split_once('\t')
            .ok_or_else(|| format_err(path, format!("line {}: missing tab", n + 1)))?;
        let tokens = vocab
            .encode(words)
            .map_err(|e| format_err(path, format!("line {}: {e}", n + 1)))?;
        out.insert(id.to_string(), tokens);
    }
    Ok(out)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus, DataError> {
    let cfg_path = dir.join("config.json");
    let cfg_text = fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
    let config: CorpusConfig = serde_json::from_str(&cfg_text).map_err(|e| format_err(&cfg_path, e.to_string()))?;
    let vocab = config.vocabulary()?;
    let mut transcripts = read_token_file(&dir.join("transcripts.tsv"), &vocab)?;
    let mut summaries = read_token_file(&dir.join("summaries.tsv"), &vocab)?;
    let manifest_path = dir.join("manifest.tsv");
    let manifest = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut corpus = Corpus {
        config,
        vocab,
        train: Vec::new(),
        valid: Vec::new(),
        eval: Vec::new(),
    };
    for (n, line) in manifest.lines().enumerate() {
        let mut cols = line.split('\t');
        let (Some(id), Some(split)) = (cols.next(), cols.next()) else {
            return Err(format_err(
                &manifest_path,
                format!("line {}: expected id and split", n + 1),
            ));
        };
        let split = Split::parse(split)
            .ok_or_else(|| format_err(&manifest_path, format!("line {}: unknown split {split}", n + 1)))?;
        let missing = |what: &str| format_err(&manifest_path, format!("{id} has no {what}"));
        let triplet = Triplet {
            id: id.to_string(),
            split,
            features: read_features(&dir.join("features").join(format!("{id}.bin")))?,
            transcription: transcripts.remove(id).ok_or_else(|| missing("transcription"))?,
            summary: summaries.remove(id).ok_or_else(|| missing("summary"))?,
        };
        match split {
            Split::Train => corpus.train.push(triplet),
            Split::Valid => corpus.valid.push(triplet),
            Split::Eval => corpus.eval.push(triplet),
        }
    }
    Ok(corpus)
}
