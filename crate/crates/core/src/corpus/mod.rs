//! Ingestion of CiteULike-style article collections.
//!
//! The pipeline runs raw files → [`RawDataset`] → tokenized [`DocumentCorpus`]
//! with its [`Vocabulary`] → binary [`InteractionMatrix`] (users × items) and
//! [`TagMatrix`] (items × tags), with tf-idf keywords standing in for the tags
//! of articles nobody tagged. [`Corpus`] bundles all of it and round-trips
//! through an on-disk archive directory.

mod archive;
mod raw;
mod tags;
mod text;

pub use archive::{Corpus, CorpusManifest, ItemInfo, PreprocessOptions};
pub use raw::{parse_raw, FormatManifest, ListOrientation, RawDataset, RawItem};
pub use tags::{backfill_tags, stop_words, TagMatrix};
pub use text::{
    build_vocabulary, drop_empty_items, encode_corpus, tokenize, DocumentCorpus, Vocabulary,
    NUM_ID, NUM_TOKEN, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN,
};

use crate::error::{Error, Result};

/// Sparse binary user × item matrix; `positives[u]` holds the sorted item
/// indices user `u` interacted with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    positives: Vec<Vec<usize>>,
}

impl InteractionMatrix {
    pub fn from_pairs(
        n_users: usize,
        n_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut positives = vec![Vec::new(); n_users];
        for (user, item) in pairs {
            if user >= n_users {
                return Err(Error::IndexOutOfRange {
                    kind: "user",
                    index: user,
                    len: n_users,
                });
            }
            if item >= n_items {
                return Err(Error::IndexOutOfRange {
                    kind: "item",
                    index: item,
                    len: n_items,
                });
            }
            positives[user].push(item);
        }
        for row in &mut positives {
            row.sort_unstable();
            row.dedup();
        }
        Ok(InteractionMatrix {
            n_users,
            n_items,
            positives,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn positives(&self, user: usize) -> &[usize] {
        &self.positives[user]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.positives
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.positives[user].binary_search(&item).is_ok()
    }

    pub fn n_interactions(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    /// Fraction of the user × item matrix holding a one.
    pub fn density(&self) -> f64 {
        if self.n_users == 0 || self.n_items == 0 {
            return 0.0;
        }
        self.n_interactions() as f64 / (self.n_users as f64 * self.n_items as f64)
    }

    /// Number of users who liked each item.
    pub fn item_like_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_items];
        for row in &self.positives {
            for &item in row {
                counts[item] += 1;
            }
        }
        counts
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.positives
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&j| (u, j)))
    }
}
