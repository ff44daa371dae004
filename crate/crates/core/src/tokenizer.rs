//! Word-level tokenization, vocabularies and the translation prompt.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{hex, ParallelPair, Utterance};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Task prefix prepended to every source sentence.
pub const PROMPT: &str = "translate English to Tamarian:";

const PUNCTUATION: [char; 8] = ['.', ',', '!', '?', ';', ':', '\'', '"'];

/// Lowercases, splits punctuation into standalone tokens and collapses
/// whitespace.
pub fn normalize(text: &str) -> String {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars().flat_map(char::to_lowercase) {
        if PUNCTUATION.contains(&c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn prompt_tokens() -> Vec<String> {
    tokenize(PROMPT)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub side: Side,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Token ↔ id tables. Ids 0–3 are always PAD, BOS, EOS, UNK; corpus tokens
/// follow, ordered by descending frequency and then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    specials: Vec<String>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds from corpus tokens in id order (specials excluded).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = HashMap::new();
        for t in tokens {
            if SPECIAL_TOKENS.contains(&t.as_str()) || t.is_empty() {
                return Err(Error::validation(format!("reserved or empty token {t:?}")));
            }
            if token_to_id.insert(t.clone(), id_to_token.len()).is_some() {
                return Err(Error::validation(format!("duplicate token {t:?}")));
            }
            id_to_token.push(t);
        }
        Ok(Self {
            id_to_token,
            token_to_id,
        })
    }

    /// Total size including the four specials.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of a corpus token; specials and unknown tokens give `None`.
    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    fn lookup(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    /// Source: prompt tokens then sentence tokens, unframed. Target: BOS,
    /// tokens, EOS. Unknown tokens become UNK.
    pub fn encode(&self, text: &str, side: Side) -> TokenSequence {
        let words = tokenize(text);
        let ids = match side {
            Side::Source => prompt_tokens()
                .iter()
                .chain(&words)
                .map(|t| self.lookup(t))
                .collect(),
            Side::Target => std::iter::once(BOS)
                .chain(words.iter().map(|t| self.lookup(t)))
                .chain(std::iter::once(EOS))
                .collect(),
        };
        TokenSequence { ids, side }
    }

    /// Drops specials and joins the rest with single spaces.
    pub fn decode(&self, seq: &TokenSequence) -> Result<String> {
        self.decode_ids(&seq.ids)
    }

    pub fn decode_ids(&self, ids: &[usize]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or_else(|| {
                Error::validation(format!("token id {id} not in vocabulary of {}", self.len()))
            })?;
            if id >= SPECIAL_TOKENS.len() {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    pub fn to_json(&self) -> String {
        let file = VocabularyFile {
            specials: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            tokens: self.id_to_token[SPECIAL_TOKENS.len()..].to_vec(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("vocabulary serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(s)?;
        if file.specials != SPECIAL_TOKENS {
            return Err(Error::validation(format!(
                "vocabulary specials {:?} do not match {:?}",
                file.specials, SPECIAL_TOKENS
            )));
        }
        Self::from_tokens(file.tokens)
    }

    /// SHA-256 of the id-ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.id_to_token {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex(&h.finalize())
    }
}

/// Vocabulary over the English sentences, the target surfaces and the prompt.
///
/// Target tokens are counted once per pair that uses the utterance, and
/// in-corpus utterances without pairs count once. Prompt tokens are counted
/// once per pair and always kept. Tokens seen fewer than `min_freq` times
/// are left out and encode as UNK.
pub fn build_vocab(
    pairs: &[ParallelPair],
    dict: &[Utterance],
    min_freq: usize,
) -> Result<Vocabulary> {
    if min_freq == 0 {
        return Err(Error::validation("min_freq must be at least 1"));
    }
    if pairs.is_empty() {
        return Err(Error::validation(
            "cannot build a vocabulary from an empty corpus",
        ));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut bump = |t: &str, n: usize| *counts.entry(t.to_string()).or_default() += n;

    let surfaces: HashMap<&str, Vec<String>> = dict
        .iter()
        .filter(|u| u.in_corpus)
        .map(|u| (u.id.as_str(), tokenize(&u.surface)))
        .collect();
    let mut uses: HashMap<&str, usize> = HashMap::new();
    for p in pairs {
        for t in tokenize(&p.english) {
            bump(&t, 1);
        }
        *uses.entry(p.utterance_id.as_str()).or_default() += 1;
    }
    for (id, toks) in &surfaces {
        let n = uses.get(id).copied().unwrap_or(1);
        for t in toks {
            bump(t, n);
        }
    }
    let prompt = prompt_tokens();
    for t in &prompt {
        bump(t, pairs.len());
    }

    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, n)| *n >= min_freq || prompt.contains(t))
        .filter(|(t, _)| !SPECIAL_TOKENS.contains(&t.as_str()))
        .collect();
    // BTreeMap iteration is lexicographic and the sort is stable.
    kept.sort_by(|a, b| b.1.cmp(&a.1));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t).collect())
}
