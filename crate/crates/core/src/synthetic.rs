//! Generated corpora with a known topic structure.
//!
//! Every item belongs to one topic. Its document mixes words from that
//! topic's private vocabulary with shared filler words, its tags come from
//! the topic's private tags, and every user likes items of a single topic.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionMatrix, RawDataset, RawItem, TagMatrix, NUM_TOKEN, PAD_TOKEN, UNK_TOKEN};
use crate::error::Result;
use crate::math::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicalSpec {
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub filler_words: usize,
    pub items_per_topic: usize,
    pub users_per_topic: usize,
    /// Probability that a user likes a given item of their topic.
    pub like_fraction: f64,
    pub tags_per_topic: usize,
    pub tags_per_item: usize,
    pub doc_len: usize,
    /// Probability that a document token is a topic word.
    pub topic_share: f64,
    /// Filler tokens appended after the document proper.
    pub distractor_len: usize,
}

impl TopicalSpec {
    /// 5 topics of 60 items, 10 users each, 200-token documents, 150 tags.
    pub fn topical() -> Self {
        TopicalSpec {
            n_topics: 5,
            words_per_topic: 20,
            filler_words: 100,
            items_per_topic: 60,
            users_per_topic: 10,
            like_fraction: 0.5,
            tags_per_topic: 30,
            tags_per_item: 3,
            doc_len: 200,
            topic_share: 0.2,
            distractor_len: 0,
        }
    }

    /// The topical corpus with 200 extra filler tokens per document.
    pub fn topical_long() -> Self {
        TopicalSpec {
            distractor_len: 200,
            ..Self::topical()
        }
    }

    /// 20 users, 50 items, 30-token documents, 10 tags.
    pub fn small() -> Self {
        TopicalSpec {
            n_topics: 5,
            words_per_topic: 20,
            filler_words: 40,
            items_per_topic: 10,
            users_per_topic: 4,
            like_fraction: 0.5,
            tags_per_topic: 2,
            tags_per_item: 1,
            doc_len: 30,
            topic_share: 0.3,
            distractor_len: 0,
        }
    }

    pub fn n_items(&self) -> usize {
        self.n_topics * self.items_per_topic
    }

    pub fn n_users(&self) -> usize {
        self.n_topics * self.users_per_topic
    }

    pub fn n_tags(&self) -> usize {
        self.n_topics * self.tags_per_topic
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    /// Token strings by id; ids 0..3 are the special tokens.
    pub words: Vec<String>,
    pub sequences: Vec<Vec<u32>>,
    pub interactions: InteractionMatrix,
    pub tags: TagMatrix,
    pub item_topics: Vec<usize>,
    pub user_topics: Vec<usize>,
}

const FIRST_WORD: u32 = 3;

impl SyntheticData {
    pub fn generate(spec: &TopicalSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // separate stream so padding leaves everything else unchanged
        let mut pad_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        let mut words: Vec<String> = [PAD_TOKEN, UNK_TOKEN, NUM_TOKEN].iter().map(|s| s.to_string()).collect();
        for t in 0..spec.n_topics {
            words.extend((0..spec.words_per_topic).map(|w| format!("topic{t}word{w}")));
        }
        let filler_start = words.len() as u32;
        words.extend((0..spec.filler_words).map(|w| format!("filler{w}")));
        let topic_word = |t: usize, w: usize| FIRST_WORD + (t * spec.words_per_topic + w) as u32;

        let item_topics: Vec<usize> = (0..spec.n_items()).map(|j| j / spec.items_per_topic).collect();
        let mut sequences = Vec::with_capacity(spec.n_items());
        for &topic in &item_topics {
            let mut seq = Vec::with_capacity(spec.doc_len + spec.distractor_len);
            for _ in 0..spec.doc_len {
                if rng.random::<f64>() < spec.topic_share {
                    seq.push(topic_word(topic, rng.random_range(0..spec.words_per_topic)));
                } else {
                    seq.push(filler_start + rng.random_range(0..spec.filler_words) as u32);
                }
            }
            for _ in 0..spec.distractor_len {
                seq.push(filler_start + pad_rng.random_range(0..spec.filler_words) as u32);
            }
            sequences.push(seq);
        }

        let user_topics: Vec<usize> = (0..spec.n_users()).map(|u| u % spec.n_topics).collect();
        let mut pairs = Vec::new();
        for (user, &topic) in user_topics.iter().enumerate() {
            let items: Vec<usize> = (0..spec.items_per_topic).map(|k| topic * spec.items_per_topic + k).collect();
            let mut liked: Vec<usize> = items.iter().copied().filter(|_| rng.random::<f64>() < spec.like_fraction).collect();
            if liked.is_empty() {
                liked.push(items[rng.random_range(0..items.len())]);
            }
            pairs.extend(liked.into_iter().map(|j| (user, j)));
        }
        let interactions = InteractionMatrix::from_pairs(spec.n_users(), spec.n_items(), pairs)?;

        let tag_vocab: Vec<String> = (0..spec.n_tags())
            .map(|l| format!("topic{}tag{}", l / spec.tags_per_topic, l % spec.tags_per_topic))
            .collect();
        let positives: Vec<Vec<usize>> = item_topics
            .iter()
            .map(|&t| {
                sample(&mut rng, spec.tags_per_topic, spec.tags_per_item)
                    .into_iter()
                    .map(|k| t * spec.tags_per_topic + k)
                    .collect()
            })
            .collect();
        let tags = TagMatrix::new(tag_vocab, positives, vec![false; spec.n_items()])?;

        Ok(SyntheticData {
            words,
            sequences,
            interactions,
            tags,
            item_topics,
            user_topics,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    /// Text form of the data: the first ten tokens become the title.
    pub fn to_raw(&self) -> RawDataset {
        let items = self
            .sequences
            .iter()
            .enumerate()
            .map(|(j, seq)| {
                let text: Vec<&str> = seq.iter().map(|&id| self.words[id as usize].as_str()).collect();
                let split = text.len().min(10);
                RawItem {
                    id: format!("item{j}"),
                    title: text[..split].join(" "),
                    abstract_text: text[split..].join(" "),
                }
            })
            .collect();
        RawDataset {
            items,
            n_users: self.interactions.n_users(),
            interactions: self.interactions.pairs().collect(),
            tag_vocab: self.tags.tag_vocab().to_vec(),
            tags: self.tags.pairs().collect(),
            citations: Vec::new(),
            duplicates_removed: 0,
        }
    }
}
