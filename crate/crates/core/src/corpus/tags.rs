use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use super::raw::RawDataset;
use super::text::{DocumentCorpus, NUM_ID};
use crate::error::{Error, Result};

static STOP_WORDS_TEXT: &str = include_str!("../../data/stopwords_en.txt");

/// The bundled English stop-word list.
pub fn stop_words() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| STOP_WORDS_TEXT.lines().filter(|l| !l.is_empty()).collect())
}

/// Sparse binary item × tag matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagMatrix {
    tag_vocab: Vec<String>,
    positives: Vec<Vec<usize>>,
    backfilled: Vec<bool>,
}

impl TagMatrix {
    pub fn new(tag_vocab: Vec<String>, positives: Vec<Vec<usize>>, backfilled: Vec<bool>) -> Result<Self> {
        if positives.len() != backfilled.len() {
            return Err(Error::Shape(format!(
                "{} tag rows but {} backfill flags",
                positives.len(),
                backfilled.len()
            )));
        }
        let mut positives = positives;
        for row in &mut positives {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last >= tag_vocab.len() {
                    return Err(Error::IndexOutOfRange {
                        kind: "tag",
                        index: last,
                        len: tag_vocab.len(),
                    });
                }
            }
        }
        Ok(TagMatrix {
            tag_vocab,
            positives,
            backfilled,
        })
    }

    pub fn n_items(&self) -> usize {
        self.positives.len()
    }

    pub fn n_tags(&self) -> usize {
        self.tag_vocab.len()
    }

    pub fn tag_vocab(&self) -> &[String] {
        &self.tag_vocab
    }

    pub fn tags_of(&self, item: usize) -> &[usize] {
        &self.positives[item]
    }

    pub fn contains(&self, item: usize, tag: usize) -> bool {
        self.positives[item].binary_search(&tag).is_ok()
    }

    pub fn is_backfilled(&self, item: usize) -> bool {
        self.backfilled[item]
    }

    pub fn n_backfilled(&self) -> usize {
        self.backfilled.iter().filter(|&&b| b).count()
    }

    pub fn n_assignments(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.positives
            .iter()
            .enumerate()
            .flat_map(|(j, row)| row.iter().map(move |&l| (j, l)))
    }
}

/// Builds the tag matrix, giving every untagged item its `k` highest tf-idf
/// tokens as tags.
///
/// tf is the raw count of a token in the item's sequence; idf is
/// `ln(N / df)` over the `N` sequences of the corpus. Special tokens and stop
/// words are never proposed. Ties rank lexicographically.
pub fn backfill_tags(raw: &RawDataset, corpus: &DocumentCorpus, k: usize) -> Result<TagMatrix> {
    let n_items = corpus.n_items();
    if raw.items.len() != n_items {
        return Err(Error::Shape(format!(
            "raw dataset has {} items, corpus {}",
            raw.items.len(),
            n_items
        )));
    }
    let mut positives = vec![Vec::new(); n_items];
    for &(item, tag) in &raw.tags {
        positives[item].push(tag);
    }
    let mut tag_vocab = raw.tag_vocab.clone();
    let mut tag_index: HashMap<String, usize> = tag_vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    let mut backfilled = vec![false; n_items];

    let vocab = &corpus.vocabulary;
    let stops = stop_words();
    let eligible = |id: u32| id > NUM_ID && !stops.contains(vocab.token(id).unwrap_or(""));

    let mut df: HashMap<u32, usize> = HashMap::new();
    for seq in &corpus.sequences {
        let distinct: HashSet<u32> = seq.iter().copied().collect();
        for id in distinct {
            *df.entry(id).or_insert(0) += 1;
        }
    }
    let n_docs = n_items as f64;

    let mut untaggable = Vec::new();
    for item in 0..n_items {
        if !positives[item].is_empty() {
            continue;
        }
        let mut tf: BTreeMap<u32, usize> = BTreeMap::new();
        for &id in corpus.sequence(item) {
            if eligible(id) {
                *tf.entry(id).or_insert(0) += 1;
            }
        }
        if tf.is_empty() {
            untaggable.push(raw.items[item].id.clone());
            continue;
        }
        let mut scored: Vec<(f64, &str)> = tf
            .iter()
            .map(|(&id, &count)| {
                let idf = (n_docs / df[&id] as f64).ln();
                (count as f64 * idf, vocab.token(id).unwrap())
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        for (_, token) in scored.into_iter().take(k) {
            let next = tag_vocab.len();
            let tag = *tag_index.entry(token.to_string()).or_insert(next);
            if tag == next {
                tag_vocab.push(token.to_string());
            }
            positives[item].push(tag);
        }
        backfilled[item] = true;
    }
    if !untaggable.is_empty() {
        return Err(Error::Untaggable(untaggable));
    }
    TagMatrix::new(tag_vocab, positives, backfilled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::raw::RawItem;
    use crate::corpus::text::{build_vocabulary, encode_corpus, tokenize};

    fn toy(texts: &[&str], tags: Vec<(usize, usize)>, tag_vocab: &[&str]) -> (RawDataset, DocumentCorpus) {
        let raw = RawDataset {
            items: texts
                .iter()
                .enumerate()
                .map(|(i, t)| RawItem {
                    id: format!("item{i}"),
                    title: String::new(),
                    abstract_text: t.to_string(),
                })
                .collect(),
            tags,
            tag_vocab: tag_vocab.iter().map(|s| s.to_string()).collect(),
            ..RawDataset::default()
        };
        let lists: Vec<Vec<String>> = texts.iter().map(|t| tokenize("", t)).collect();
        let vocab = build_vocabulary(lists.iter().map(Vec::as_slice), 1);
        let corpus = encode_corpus(&raw, &vocab, 400).unwrap();
        (raw, corpus)
    }

    #[test]
    fn three_document_example_picks_graph() {
        let (raw, corpus) = toy(
            &["graph graph theory", "graph learning", "theory theory proofs"],
            vec![(1, 0), (2, 0)],
            &["ml"],
        );
        let tags = backfill_tags(&raw, &corpus, 1).unwrap();
        assert_eq!(tags.tag_vocab()[tags.tags_of(0)[0]], "graph");
        assert!(tags.is_backfilled(0));
        assert!(!tags.is_backfilled(1));
        assert_eq!(tags.n_tags(), 2);
    }

    #[test]
    fn tagged_items_are_untouched() {
        let (raw, corpus) = toy(&["priors and posteriors"], vec![(0, 0)], &["bayesian"]);
        let tags = backfill_tags(&raw, &corpus, 5).unwrap();
        assert_eq!(tags.tags_of(0), &[0]);
        assert!(!tags.is_backfilled(0));
        assert_eq!(tags.tag_vocab(), &["bayesian".to_string()]);
    }

    #[test]
    fn stop_words_and_specials_are_never_tags() {
        let (raw, corpus) = toy(&["the the the 42 quantum", "a b"], vec![(1, 0)], &["x"]);
        let tags = backfill_tags(&raw, &corpus, 5).unwrap();
        let names: Vec<&str> = tags.tags_of(0).iter().map(|&l| tags.tag_vocab()[l].as_str()).collect();
        assert_eq!(names, vec!["quantum"]);
    }

    #[test]
    fn fewer_than_k_eligible_tokens_takes_all() {
        let (raw, corpus) = toy(&["alpha beta", "gamma"], vec![(1, 0)], &["x"]);
        let tags = backfill_tags(&raw, &corpus, 5).unwrap();
        assert_eq!(tags.tags_of(0).len(), 2);
    }

    #[test]
    fn item_without_eligible_tokens_is_an_error() {
        let (raw, corpus) = toy(&["the of and", "gamma"], vec![(1, 0)], &["x"]);
        match backfill_tags(&raw, &corpus, 5) {
            Err(Error::Untaggable(ids)) => assert_eq!(ids, vec!["item0".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stop_word_list_is_loaded() {
        assert_eq!(stop_words().len(), 179);
        assert!(stop_words().contains("the"));
    }
}
