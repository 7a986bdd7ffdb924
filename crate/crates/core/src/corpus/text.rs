use std::collections::HashMap;

use super::raw::RawDataset;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const NUM_ID: u32 = 2;
pub const PAD_TOKEN: &str = "<PAD>";
pub const UNK_TOKEN: &str = "<UNK>";
pub const NUM_TOKEN: &str = "<NUM>";

const SPECIALS: [&str; 3] = [PAD_TOKEN, UNK_TOKEN, NUM_TOKEN];

/// Lowercased tokens of `title` followed by `abstract_text`.
///
/// Splits on whitespace and trims non-alphanumeric characters from both ends
/// of every piece. A token made only of digits becomes `<NUM>`; mixed tokens
/// such as `2-stage` are kept. Stop words are retained.
pub fn tokenize(title: &str, abstract_text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for piece in title.split_whitespace().chain(abstract_text.split_whitespace()) {
        let trimmed = piece.trim_matches(|c: char| !c.is_alphanumeric());
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.chars().all(|c| c.is_ascii_digit()) {
            tokens.push(NUM_TOKEN.to_string());
        } else {
            tokens.push(trimmed.to_lowercase());
        }
    }
    tokens
}

/// Token ↔ id mapping. Ids 0, 1, 2 are reserved for `<PAD>`, `<UNK>` and
/// `<NUM>`; ordinary tokens follow in descending frequency, ties broken
/// lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= SPECIALS.len()
    }

    /// Id of `token`, falling back to `<UNK>`.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..3] != SPECIALS {
            return Err(Error::Malformed {
                path: "vocab.txt".into(),
                line: 1,
                message: "vocabulary must start with <PAD>, <UNK>, <NUM>".into(),
            });
        }
        Ok(Self::from_tokens(tokens))
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn fingerprint(&self) -> String {
        crate::sha256_hex(self.to_text().as_bytes())
    }
}

/// Builds a vocabulary of every token occurring at least `min_count` times.
pub fn build_vocabulary<'a, I>(token_lists: I, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for list in token_lists {
        for token in list {
            if SPECIALS.contains(&token.as_str()) {
                continue;
            }
            *counts.entry(token.as_str()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens)
}

/// Token-id sequences of every item, each truncated to `max_length`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocumentCorpus {
    pub vocabulary: Vocabulary,
    pub sequences: Vec<Vec<u32>>,
    pub max_length: usize,
}

impl DocumentCorpus {
    pub fn sequence(&self, item: usize) -> &[u32] {
        &self.sequences[item]
    }

    pub fn n_items(&self) -> usize {
        self.sequences.len()
    }

    /// Serializes the sequences as `u32` length followed by the ids, all
    /// little-endian.
    pub fn sequences_to_bytes(&self) -> Vec<u8> {
        let total: usize = self.sequences.iter().map(|s| 4 + 4 * s.len()).sum();
        let mut out = Vec::with_capacity(total);
        for seq in &self.sequences {
            out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
            for &id in seq {
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
        out
    }

    pub fn sequences_from_bytes(bytes: &[u8]) -> Result<Vec<Vec<u32>>> {
        let malformed = |message: &str| Error::Malformed {
            path: "sequences.bin".into(),
            line: 0,
            message: message.to_string(),
        };
        let mut words = bytes.chunks_exact(4);
        if !words.remainder().is_empty() {
            return Err(malformed("length is not a multiple of 4"));
        }
        let mut sequences = Vec::new();
        while let Some(len) = words.next() {
            let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
            let mut seq = Vec::with_capacity(len);
            for _ in 0..len {
                let w = words.next().ok_or_else(|| malformed("truncated sequence"))?;
                seq.push(u32::from_le_bytes(w.try_into().unwrap()));
            }
            sequences.push(seq);
        }
        Ok(sequences)
    }
}

/// Tokenizes and encodes every item, truncating to the first `max_length`
/// tokens. Fails listing the ids of items whose text yields no token.
pub fn encode_corpus(
    raw: &RawDataset,
    vocabulary: &Vocabulary,
    max_length: usize,
) -> Result<DocumentCorpus> {
    if max_length == 0 {
        return Err(Error::Config("max_length must be positive".into()));
    }
    let mut sequences = Vec::with_capacity(raw.items.len());
    let mut empty = Vec::new();
    for item in &raw.items {
        let tokens = tokenize(&item.title, &item.abstract_text);
        if tokens.is_empty() {
            empty.push(item.id.clone());
            continue;
        }
        let mut ids = vocabulary.encode(&tokens);
        ids.truncate(max_length);
        sequences.push(ids);
    }
    if !empty.is_empty() {
        return Err(Error::EmptyDocuments(empty));
    }
    Ok(DocumentCorpus {
        vocabulary: vocabulary.clone(),
        sequences,
        max_length,
    })
}

/// Removes items whose text tokenizes to nothing, remapping every pair list.
/// Returns the filtered dataset and the ids of dropped items.
pub fn drop_empty_items(raw: &RawDataset) -> (RawDataset, Vec<String>) {
    let mut remap = vec![None; raw.items.len()];
    let mut items = Vec::with_capacity(raw.items.len());
    let mut dropped = Vec::new();
    for (old, item) in raw.items.iter().enumerate() {
        if tokenize(&item.title, &item.abstract_text).is_empty() {
            dropped.push(item.id.clone());
        } else {
            remap[old] = Some(items.len());
            items.push(item.clone());
        }
    }
    let interactions = raw
        .interactions
        .iter()
        .filter_map(|&(u, j)| remap[j].map(|j| (u, j)))
        .collect();
    let tags = raw
        .tags
        .iter()
        .filter_map(|&(j, l)| remap[j].map(|j| (j, l)))
        .collect();
    let citations = raw
        .citations
        .iter()
        .filter_map(|&(a, b)| Some((remap[a]?, remap[b]?)))
        .collect();
    let filtered = RawDataset {
        items,
        n_users: raw.n_users,
        interactions,
        tag_vocab: raw.tag_vocab.clone(),
        tags,
        citations,
        duplicates_removed: raw.duplicates_removed,
    };
    (filtered, dropped)
}
