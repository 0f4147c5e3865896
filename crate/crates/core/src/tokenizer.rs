//! Whitespace/punctuation tokenizer over a closed vocabulary.

use std::collections::HashMap;
use std::fs;
use std::ops::Deref;
use std::path::Path;

use crate::corpus::CorpusSample;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const NUM_SPECIALS: usize = 4;
const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>"];
const PUNCT: [char; 4] = ['.', ',', '!', '?'];

/// Splits text on whitespace and peels `.,!?` off into separate tokens.
pub fn tokenize(text: &str, casefold: bool) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chunk = if casefold {
            chunk.to_lowercase()
        } else {
            chunk.to_owned()
        };
        let mut word = String::new();
        for ch in chunk.chars() {
            if PUNCT.contains(&ch) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            } else {
                word.push(ch);
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Closed vocabulary. Ids `0..4` are PAD, BOS, EOS, UNK; ordinary tokens follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    casefold: bool,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>, casefold: bool) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary token {t:?}")));
            }
            let id = (i + NUM_SPECIALS) as TokenId;
            if index.insert(t.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        if tokens.is_empty() {
            return Err(Error::Empty("vocabulary"));
        }
        Ok(Vocab {
            tokens,
            index,
            casefold,
        })
    }

    /// Total size including the special ids.
    pub fn len(&self) -> usize {
        self.tokens.len() + NUM_SPECIALS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn casefold(&self) -> bool {
        self.casefold
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token_of(&self, id: TokenId) -> Option<&str> {
        let i = id as usize;
        if i < NUM_SPECIALS {
            Some(SPECIAL_NAMES[i])
        } else {
            self.tokens.get(i - NUM_SPECIALS).map(String::as_str)
        }
    }

    /// Ordinary tokens in id order (specials excluded).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence(
            tokenize(text, self.casefold)
                .iter()
                .map(|t| self.id_of(t).unwrap_or(UNK))
                .collect(),
        )
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&id| {
                self.token_of(id).ok_or(Error::TokenOutOfRange {
                    id,
                    size: self.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    /// Vocabulary file: one ordinary token per line, line `k` holds id `k + 4`.
    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, casefold: bool) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_owned).collect(), casefold)
    }
}

/// Builds a vocabulary from both fields of every sample. The `max_size - 4`
/// most frequent tokens are kept; equal counts are ordered lexicographically.
pub fn build_vocab(corpus: &[CorpusSample], max_size: usize, casefold: bool) -> Result<Vocab> {
    build_vocab_from_texts(
        corpus
            .iter()
            .flat_map(|s| [s.bullet_points.as_str(), s.paragraph.as_str()]),
        max_size,
        casefold,
    )
}

pub fn build_vocab_from_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    max_size: usize,
    casefold: bool,
) -> Result<Vocab> {
    if max_size < NUM_SPECIALS + 1 {
        return Err(Error::Config(format!(
            "max vocabulary size must be at least {}",
            NUM_SPECIALS + 1
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for tok in tokenize(text, casefold) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_SPECIALS);
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t).collect(), casefold)
}

/// Token ids of one text, each below the vocabulary size it was encoded with.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, vocab_size: usize) -> Result<Self> {
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                size: vocab_size,
            });
        }
        Ok(TokenSequence(ids))
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSequence(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(p: &str) -> CorpusSample {
        CorpusSample {
            bullet_points: "*".into(),
            paragraph: p.into(),
        }
    }

    #[test]
    fn frequency_and_ties() {
        let v = build_vocab(&[sample("a a b")], 10, false).unwrap();
        // "*" from the outline, then a (2), then b.
        assert_eq!(v.tokens(), ["a", "*", "b"]);
        assert_eq!(v.len(), 7);
        let v = build_vocab(&[sample("y x")], 10, false).unwrap();
        assert!(v.id_of("x").unwrap() < v.id_of("y").unwrap());
        assert_eq!(build_vocab(&[sample("a a b")], 10, false).unwrap(), build_vocab(&[sample("a a b")], 10, false).unwrap());
    }

    #[test]
    fn truncates_and_rejects() {
        let v = build_vocab(&[sample("a a a b b c")], 5, false).unwrap();
        assert_eq!(v.tokens(), ["a"]);
        assert!(build_vocab(&[], 10, false).is_err());
        assert!(build_vocab(&[sample("a")], 4, false).is_err());
    }

    #[test]
    fn encode_decode() {
        let v = Vocab::from_tokens(vec!["a".into(), "b".into(), ".".into()], false).unwrap();
        let seq = v.encode("a b");
        assert_eq!(&*seq, &[4, 5]);
        assert_eq!(v.decode(&seq).unwrap(), "a b");
        assert_eq!(&*v.encode("a zzz"), &[4, UNK]);
        assert!(v.encode("").is_empty());
        assert_eq!(&*v.encode("b."), &[5, 6]);
        assert!(matches!(v.decode(&[99]), Err(Error::TokenOutOfRange { .. })));
    }

    #[test]
    fn punctuation_and_casefold() {
        assert_eq!(tokenize("Hi, there! ok?", false), ["Hi", ",", "there", "!", "ok", "?"]);
        assert_eq!(tokenize("ABC.", true), ["abc", "."]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = build_vocab(&[sample("q r s . q")], 50, false).unwrap();
        let p = dir.path().join("v.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p, false).unwrap(), v);
        let text = std::fs::read_to_string(&p).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(v.id_of(first), Some(4));
    }

    proptest! {
        #[test]
        fn decode_encode_identity(words in prop::collection::vec(0usize..6, 0..20)) {
            let names = ["a", "b", "c", ".", "dd", "!"];
            let v = Vocab::from_tokens(names.iter().map(|s| s.to_string()).collect(), false).unwrap();
            let text = words.iter().map(|&i| names[i]).collect::<Vec<_>>().join(" ");
            let seq = v.encode(&text);
            prop_assert!(seq.iter().all(|&id| id as usize >= NUM_SPECIALS));
            prop_assert_eq!(v.decode(&seq).unwrap(), text);
        }
    }
}
