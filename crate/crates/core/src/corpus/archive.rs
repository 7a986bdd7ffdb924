use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::raw::RawDataset;
use super::tags::{backfill_tags, TagMatrix};
use super::text::{build_vocabulary, drop_empty_items, encode_corpus, tokenize, DocumentCorpus, Vocabulary};
use super::InteractionMatrix;
use crate::error::{Error, Result};

const VOCAB_FILE: &str = "vocab.txt";
const SEQUENCES_FILE: &str = "sequences.bin";
const INTERACTIONS_FILE: &str = "interactions.csv";
const TAGS_FILE: &str = "tags.csv";
const TAG_VOCAB_FILE: &str = "tag_vocab.txt";
const ITEMS_FILE: &str = "items.csv";
const CITATIONS_FILE: &str = "citations.csv";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessOptions {
    pub max_length: usize,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default = "default_backfill_k")]
    pub backfill_k: usize,
}

fn default_min_count() -> usize {
    5
}

fn default_backfill_k() -> usize {
    5
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            max_length: 200,
            min_count: default_min_count(),
            backfill_k: default_backfill_k(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub density: f64,
    pub duplicates_removed: usize,
    pub n_tags: usize,
    pub n_tag_assignments: usize,
    pub n_backfilled_items: usize,
    pub n_citations: usize,
    pub vocabulary_size: usize,
    pub vocabulary_hash: String,
    pub mean_sequence_length: f64,
    pub dropped_items: Vec<String>,
    pub options: PreprocessOptions,
    pub numeric_rule: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemInfo {
    pub id: String,
    pub title: String,
}

/// Everything the model needs: documents, interactions and tags.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub documents: DocumentCorpus,
    pub interactions: InteractionMatrix,
    pub tags: TagMatrix,
    pub items: Vec<ItemInfo>,
    pub citations: Vec<(usize, usize)>,
    pub manifest: CorpusManifest,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Corpus {
    /// Runs the full preprocessing pipeline over a raw dataset.
    pub fn preprocess(raw: &RawDataset, options: &PreprocessOptions) -> Result<Self> {
        let (raw, dropped) = drop_empty_items(raw);
        if !dropped.is_empty() {
            log::warn!("dropped {} items with empty text: {:?}", dropped.len(), dropped);
        }
        let token_lists: Vec<Vec<String>> = raw
            .items
            .iter()
            .map(|it| tokenize(&it.title, &it.abstract_text))
            .collect();
        let vocabulary = build_vocabulary(token_lists.iter().map(Vec::as_slice), options.min_count);
        let documents = encode_corpus(&raw, &vocabulary, options.max_length)?;
        let tags = backfill_tags(&raw, &documents, options.backfill_k)?;
        let interactions =
            InteractionMatrix::from_pairs(raw.n_users, raw.items.len(), raw.interactions.iter().copied())?;
        let items = raw
            .items
            .iter()
            .map(|it| ItemInfo {
                id: it.id.clone(),
                title: it.title.clone(),
            })
            .collect();
        let manifest = CorpusManifest::describe(
            &documents,
            &interactions,
            &tags,
            raw.citations.len(),
            raw.duplicates_removed,
            dropped,
            options.clone(),
        );
        Ok(Corpus {
            documents,
            interactions,
            tags,
            items,
            citations: raw.citations.clone(),
            manifest,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.documents.vocabulary
    }

    pub fn n_users(&self) -> usize {
        self.interactions.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.documents.n_items()
    }

    pub fn n_tags(&self) -> usize {
        self.tags.n_tags()
    }

    /// Writes the archive directory; output bytes depend only on the corpus.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join(VOCAB_FILE), self.vocabulary().to_text().as_bytes())?;
        write_file(&dir.join(SEQUENCES_FILE), &self.documents.sequences_to_bytes())?;

        let mut w = csv::Writer::from_path(dir.join(INTERACTIONS_FILE))?;
        w.write_record(["user", "item"])?;
        for (u, j) in self.interactions.pairs() {
            w.write_record([u.to_string(), j.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir.join(INTERACTIONS_FILE), e))?;

        let mut w = csv::Writer::from_path(dir.join(TAGS_FILE))?;
        w.write_record(["item", "tag", "backfilled"])?;
        for (j, l) in self.tags.pairs() {
            w.write_record([
                j.to_string(),
                l.to_string(),
                u8::from(self.tags.is_backfilled(j)).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir.join(TAGS_FILE), e))?;

        let mut tag_vocab = String::new();
        for t in self.tags.tag_vocab() {
            tag_vocab.push_str(t);
            tag_vocab.push('\n');
        }
        write_file(&dir.join(TAG_VOCAB_FILE), tag_vocab.as_bytes())?;

        let mut w = csv::Writer::from_path(dir.join(ITEMS_FILE))?;
        w.write_record(["index", "id", "title"])?;
        for (j, info) in self.items.iter().enumerate() {
            w.write_record([j.to_string(), info.id.clone(), info.title.clone()])?;
        }
        w.flush().map_err(|e| Error::io(dir.join(ITEMS_FILE), e))?;

        let mut w = csv::Writer::from_path(dir.join(CITATIONS_FILE))?;
        w.write_record(["citing", "cited"])?;
        for (a, b) in &self.citations {
            w.write_record([a.to_string(), b.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir.join(CITATIONS_FILE), e))?;

        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CorpusManifest = serde_json::from_str(&read_string(&dir.join(MANIFEST_FILE))?)?;
        let vocabulary = Vocabulary::from_text(&read_string(&dir.join(VOCAB_FILE))?)?;
        let sequences = DocumentCorpus::sequences_from_bytes(&read_file(&dir.join(SEQUENCES_FILE))?)?;
        let n_items = sequences.len();
        if n_items != manifest.n_items {
            return Err(Error::Shape(format!(
                "manifest lists {} items, sequences.bin holds {}",
                manifest.n_items, n_items
            )));
        }
        if vocabulary.fingerprint() != manifest.vocabulary_hash {
            return Err(Error::VocabularyMismatch {
                checkpoint: manifest.vocabulary_hash.clone(),
                corpus: vocabulary.fingerprint(),
            });
        }
        if let Some(&bad) = sequences.iter().flatten().find(|&&id| id as usize >= vocabulary.len()) {
            return Err(Error::IndexOutOfRange {
                kind: "token",
                index: bad as usize,
                len: vocabulary.len(),
            });
        }

        let mut pairs = Vec::new();
        let mut r = csv::Reader::from_path(dir.join(INTERACTIONS_FILE))?;
        for rec in r.deserialize() {
            let (u, j): (usize, usize) = rec?;
            pairs.push((u, j));
        }
        let interactions = InteractionMatrix::from_pairs(manifest.n_users, n_items, pairs)?;

        let tag_vocab: Vec<String> = read_string(&dir.join(TAG_VOCAB_FILE))?
            .lines()
            .map(str::to_string)
            .collect();
        let mut positives = vec![Vec::new(); n_items];
        let mut backfilled = vec![false; n_items];
        let mut r = csv::Reader::from_path(dir.join(TAGS_FILE))?;
        for rec in r.deserialize() {
            let (j, l, b): (usize, usize, u8) = rec?;
            if j >= n_items {
                return Err(Error::IndexOutOfRange {
                    kind: "item",
                    index: j,
                    len: n_items,
                });
            }
            positives[j].push(l);
            backfilled[j] = b != 0;
        }
        let tags = TagMatrix::new(tag_vocab, positives, backfilled)?;

        let mut items = Vec::with_capacity(n_items);
        let mut r = csv::Reader::from_path(dir.join(ITEMS_FILE))?;
        for rec in r.deserialize() {
            let (_, id, title): (usize, String, String) = rec?;
            items.push(ItemInfo { id, title });
        }

        let mut citations = Vec::new();
        let mut r = csv::Reader::from_path(dir.join(CITATIONS_FILE))?;
        for rec in r.deserialize() {
            citations.push(rec?);
        }

        Ok(Corpus {
            documents: DocumentCorpus {
                vocabulary,
                sequences,
                max_length: manifest.options.max_length,
            },
            interactions,
            tags,
            items,
            citations,
            manifest,
        })
    }
}

impl CorpusManifest {
    pub fn describe(
        documents: &DocumentCorpus,
        interactions: &InteractionMatrix,
        tags: &TagMatrix,
        n_citations: usize,
        duplicates_removed: usize,
        dropped_items: Vec<String>,
        options: PreprocessOptions,
    ) -> Self {
        let total_tokens: usize = documents.sequences.iter().map(Vec::len).sum();
        CorpusManifest {
            format_version: 1,
            n_users: interactions.n_users(),
            n_items: documents.n_items(),
            n_interactions: interactions.n_interactions(),
            density: interactions.density(),
            duplicates_removed,
            n_tags: tags.n_tags(),
            n_tag_assignments: tags.n_assignments(),
            n_backfilled_items: tags.n_backfilled(),
            n_citations,
            vocabulary_size: documents.vocabulary.len(),
            vocabulary_hash: documents.vocabulary.fingerprint(),
            mean_sequence_length: if documents.n_items() == 0 {
                0.0
            } else {
                total_tokens as f64 / documents.n_items() as f64
            },
            dropped_items,
            options,
            numeric_rule: "all-digit tokens -> <NUM>".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::raw::RawItem;

    fn raw() -> RawDataset {
        let texts = [
            "graph neural networks for graph data",
            "bayesian priors for graph models",
            "",
            "deep networks learn 100 features",
        ];
        RawDataset {
            items: texts
                .iter()
                .enumerate()
                .map(|(i, t)| RawItem {
                    id: format!("a{i}"),
                    title: format!("Paper {i}"),
                    abstract_text: t.to_string(),
                })
                .collect(),
            n_users: 2,
            interactions: vec![(0, 0), (0, 2), (1, 1), (1, 3)],
            tag_vocab: vec!["graphs".into()],
            tags: vec![(0, 0)],
            citations: vec![(1, 0)],
            duplicates_removed: 0,
        }
    }

    #[test]
    fn preprocess_save_load_round_trip() {
        let options = PreprocessOptions {
            max_length: 4,
            min_count: 1,
            backfill_k: 2,
        };
        let corpus = Corpus::preprocess(&raw(), &options).unwrap();
        assert_eq!(corpus.n_items(), 4);
        assert_eq!(corpus.interactions.n_interactions(), 4);
        assert!(corpus.documents.sequences.iter().all(|s| !s.is_empty() && s.len() <= 4));
        assert!((0..corpus.n_items()).all(|j| !corpus.tags.tags_of(j).is_empty()));
        assert!(corpus.manifest.dropped_items.is_empty());

        let tmp = tempfile::tempdir().unwrap();
        corpus.save(tmp.path()).unwrap();
        let back = Corpus::load(tmp.path()).unwrap();
        assert_eq!(back, corpus);

        let again = tempfile::tempdir().unwrap();
        Corpus::preprocess(&raw(), &options).unwrap().save(again.path()).unwrap();
        for name in [VOCAB_FILE, SEQUENCES_FILE, INTERACTIONS_FILE, TAGS_FILE, MANIFEST_FILE] {
            assert_eq!(
                fs::read(tmp.path().join(name)).unwrap(),
                fs::read(again.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn empty_items_are_dropped_with_manifest_entry() {
        let mut raw = raw();
        raw.items[2].title.clear();
        let corpus = Corpus::preprocess(&raw, &PreprocessOptions { min_count: 1, ..Default::default() }).unwrap();
        assert_eq!(corpus.n_items(), 3);
        assert_eq!(corpus.manifest.dropped_items, vec!["a2".to_string()]);
        assert_eq!(corpus.interactions.positives(0), &[0]);
        assert_eq!(corpus.interactions.positives(1), &[1, 2]);
    }
}
