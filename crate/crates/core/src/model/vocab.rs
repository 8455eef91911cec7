use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const SOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const MASK: TokenId = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<mask>"];

/// Word-level vocabulary. Ids 0..4 are always the reserved tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from content words; the reserved tokens are prepended.
    pub fn new<I, S>(words: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(Into::into))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds from a full token list, reserved tokens included.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, ModelError> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s) {
            return Err(ModelError::MissingSpecialTokens);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(ModelError::InvalidToken(t.clone()));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(ModelError::DuplicateToken(t.clone()));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// Hex SHA-256 of the newline-terminated token list.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Whitespace-separated words to ids.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, ModelError> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| ModelError::UnknownToken(w.to_string())))
            .collect()
    }

    /// Ids to text, dropping reserved tokens.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| !Self::is_special(id))
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = ModelError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new(["a", "b"]).unwrap();
        assert_eq!(v.id("<sos>"), Some(SOS));
        assert_eq!(v.id("<eos>"), Some(EOS));
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<mask>"), Some(MASK));
        assert_eq!(v.id("b"), Some(5));
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn duplicate_is_rejected() {
        assert!(matches!(
            Vocabulary::new(["a", "a"]),
            Err(ModelError::DuplicateToken(_))
        ));
    }

    #[test]
    fn encode_decode() {
        let v = Vocabulary::new(["hello", "world"]).unwrap();
        let ids = v.encode("hello world hello").unwrap();
        assert_eq!(ids, vec![4, 5, 4]);
        let mut with_specials = vec![SOS];
        with_specials.extend(&ids);
        with_specials.push(EOS);
        assert_eq!(v.decode(&with_specials), "hello world hello");
        assert!(v.encode("nope").is_err());
    }

    #[test]
    fn hash_survives_serialization() {
        let v = Vocabulary::new(["x", "y", "z"]).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.content_hash(), v.content_hash());
        assert_ne!(
            Vocabulary::new(["x", "z", "y"]).unwrap().content_hash(),
            v.content_hash()
        );
    }
}
