use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawItem {
    pub id: String,
    pub title: String,
    pub abstract_text: String,
}

/// Articles, user libraries, tags and citations as read from disk.
///
/// Items are addressed by their row position in the item file. Interaction
/// pairs are `(user, item)` and deduplicated; tag pairs are `(item, tag)` with
/// `tag` indexing `tag_vocab`. Citations are kept for completeness only.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawDataset {
    pub items: Vec<RawItem>,
    pub n_users: usize,
    pub interactions: Vec<(usize, usize)>,
    pub tag_vocab: Vec<String>,
    pub tags: Vec<(usize, usize)>,
    pub citations: Vec<(usize, usize)>,
    pub duplicates_removed: usize,
}

impl RawDataset {
    /// Sorts and deduplicates the pair lists, recording how many duplicate
    /// interactions were removed.
    pub fn normalize(&mut self) {
        let before = self.interactions.len();
        self.interactions.sort_unstable();
        self.interactions.dedup();
        self.duplicates_removed += before - self.interactions.len();
        self.tags.sort_unstable();
        self.tags.dedup();
        self.citations.sort_unstable();
        self.citations.dedup();
    }

    pub fn summary(&self) -> String {
        format!(
            "{} users, {} items, {} interactions ({} duplicates removed), {} tags, {} tag assignments, {} citations",
            self.n_users,
            self.items.len(),
            self.interactions.len(),
            self.duplicates_removed,
            self.tag_vocab.len(),
            self.tags.len(),
            self.citations.len()
        )
    }
}

impl RawDataset {
    /// Writes the dataset in the default layout read by
    /// [`FormatManifest::default`].
    pub fn write_default(&self, dir: &Path) -> Result<()> {
        let m = FormatManifest::default();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        let lists = |rows: usize, pairs: &[(usize, usize)]| {
            let mut out = vec![Vec::new(); rows];
            for &(a, b) in pairs {
                out[a].push(b.to_string());
            }
            out.iter().map(|r| r.join(" ") + "\n").collect::<String>()
        };

        let items_path = dir.join(&m.items_file);
        let mut w = csv::Writer::from_path(&items_path).map_err(Error::Csv)?;
        w.write_record(["id", "title", "abstract"]).map_err(Error::Csv)?;
        for item in &self.items {
            w.write_record([&item.id, &item.title, &item.abstract_text]).map_err(Error::Csv)?;
        }
        w.flush().map_err(|e| Error::io(&items_path, e))?;

        write(&m.users_file, lists(self.n_users, &self.interactions))?;
        write(&m.tags_file, lists(self.items.len(), &self.tags))?;
        write(&m.tag_vocab_file, self.tag_vocab.iter().map(|t| format!("{t}\n")).collect())?;
        write(m.citations_file.as_deref().expect("default has citations"), lists(self.items.len(), &self.citations))
    }
}

/// Which entity each line of a list file describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListOrientation {
    /// Line `j` lists the tags of item `j`.
    ItemToTags,
    /// Line `l` lists the items carrying tag `l`.
    TagToItems,
}

/// File names and column mappings of a raw distribution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatManifest {
    pub users_file: String,
    pub items_file: String,
    pub tags_file: String,
    pub tag_vocab_file: String,
    #[serde(default)]
    pub citations_file: Option<String>,
    /// List lines start with the number of entries that follow.
    pub count_prefixed: bool,
    pub tag_orientation: ListOrientation,
    pub csv_header: bool,
    pub id_column: usize,
    pub title_column: usize,
    pub abstract_column: usize,
    /// When set, the id column is numeric and equals row index + base.
    #[serde(default)]
    pub id_base: Option<usize>,
}

impl Default for FormatManifest {
    fn default() -> Self {
        FormatManifest {
            users_file: "users.dat".into(),
            items_file: "raw-data.csv".into(),
            tags_file: "tags.dat".into(),
            tag_vocab_file: "tag-vocab.txt".into(),
            citations_file: Some("citations.dat".into()),
            count_prefixed: false,
            tag_orientation: ListOrientation::ItemToTags,
            csv_header: true,
            id_column: 0,
            title_column: 1,
            abstract_column: 2,
            id_base: None,
        }
    }
}

impl FormatManifest {
    /// Layout of the public CiteULike-a release.
    pub fn citeulike_a() -> Self {
        FormatManifest {
            users_file: "users.dat".into(),
            items_file: "raw-data.csv".into(),
            tags_file: "item-tag.dat".into(),
            tag_vocab_file: "tags.dat".into(),
            citations_file: Some("citations.dat".into()),
            count_prefixed: true,
            tag_orientation: ListOrientation::ItemToTags,
            csv_header: true,
            id_column: 0,
            title_column: 3,
            abstract_column: 4,
            id_base: Some(1),
        }
    }

    /// Layout of the CiteULike-t release, with its raw text already
    /// converted to an `id,title,abstract` CSV.
    pub fn citeulike_t() -> Self {
        FormatManifest {
            users_file: "users.dat".into(),
            items_file: "raw-data.csv".into(),
            tags_file: "tag-item.dat".into(),
            tag_vocab_file: "tags.dat".into(),
            citations_file: Some("citations.dat".into()),
            count_prefixed: true,
            tag_orientation: ListOrientation::TagToItems,
            csv_header: true,
            id_column: 0,
            title_column: 1,
            abstract_column: 2,
            id_base: None,
        }
    }

    /// Resolves a preset name or a path to a JSON manifest.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "default" | "generic" => Ok(Self::default()),
            "citeulike-a" => Ok(Self::citeulike_a()),
            "citeulike-t" => Ok(Self::citeulike_t()),
            path => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses a whitespace-separated index list file, one list per line.
fn parse_lists(path: &Path, text: &str, count_prefixed: bool) -> Result<Vec<Vec<usize>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut values = Vec::new();
        for field in line.split_whitespace() {
            let value = field.parse::<usize>().map_err(|_| Error::Malformed {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected a non-negative integer, found {field:?}"),
            })?;
            values.push(value);
        }
        if count_prefixed && !values.is_empty() {
            let count = values.remove(0);
            if count != values.len() {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("count prefix {count} but {} entries", values.len()),
                });
            }
        }
        rows.push(values);
    }
    Ok(rows)
}

fn parse_items(path: &Path, manifest: &FormatManifest) -> Result<Vec<RawItem>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(manifest.csv_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::Csv(e),
        })?;
    let needed = manifest
        .id_column
        .max(manifest.title_column)
        .max(manifest.abstract_column);
    let mut items = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 1 + usize::from(manifest.csv_header);
        let record = record.map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if record.len() <= needed {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!("expected at least {} columns, found {}", needed + 1, record.len()),
            });
        }
        let id = record[manifest.id_column].trim().to_string();
        if let Some(base) = manifest.id_base {
            let numeric = id.parse::<usize>().map_err(|_| Error::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!("non-numeric item id {id:?}"),
            })?;
            if numeric != row + base {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line,
                    message: format!("item id {numeric} out of sequence (expected {})", row + base),
                });
            }
        }
        items.push(RawItem {
            id,
            title: record[manifest.title_column].to_string(),
            abstract_text: record[manifest.abstract_column].to_string(),
        });
    }
    Ok(items)
}

fn check_ref(path: &Path, kind: &'static str, id: usize, len: usize) -> Result<()> {
    if id >= len {
        return Err(Error::DanglingReference {
            path: path.to_path_buf(),
            kind,
            id: id.to_string(),
        });
    }
    Ok(())
}

/// Reads a raw distribution from `dir` according to `manifest`.
pub fn parse_raw(dir: &Path, manifest: &FormatManifest) -> Result<RawDataset> {
    let join = |name: &str| -> PathBuf { dir.join(name) };

    let items_path = join(&manifest.items_file);
    let items = parse_items(&items_path, manifest)?;
    let n_items = items.len();

    let users_path = join(&manifest.users_file);
    let libraries = parse_lists(&users_path, &read_text(&users_path)?, manifest.count_prefixed)?;
    let mut interactions = Vec::new();
    for (user, library) in libraries.iter().enumerate() {
        for &item in library {
            check_ref(&users_path, "item", item, n_items)?;
            interactions.push((user, item));
        }
    }

    let vocab_path = join(&manifest.tag_vocab_file);
    let tag_vocab: Vec<String> = read_text(&vocab_path)?
        .lines()
        .map(|l| l.trim().to_string())
        .collect();

    let tags_path = join(&manifest.tags_file);
    let tag_rows = parse_lists(&tags_path, &read_text(&tags_path)?, manifest.count_prefixed)?;
    let mut tags = Vec::new();
    for (row, values) in tag_rows.iter().enumerate() {
        for &value in values {
            let (item, tag) = match manifest.tag_orientation {
                ListOrientation::ItemToTags => (row, value),
                ListOrientation::TagToItems => (value, row),
            };
            check_ref(&tags_path, "item", item, n_items)?;
            check_ref(&tags_path, "tag", tag, tag_vocab.len())?;
            tags.push((item, tag));
        }
    }

    let mut citations = Vec::new();
    if let Some(name) = &manifest.citations_file {
        let path = join(name);
        if path.exists() {
            let rows = parse_lists(&path, &read_text(&path)?, manifest.count_prefixed)?;
            for (citing, cited) in rows.iter().enumerate() {
                check_ref(&path, "item", citing, n_items)?;
                for &target in cited {
                    check_ref(&path, "item", target, n_items)?;
                    citations.push((citing, target));
                }
            }
        }
    }

    let mut raw = RawDataset {
        items,
        n_users: libraries.len(),
        interactions,
        tag_vocab,
        tags,
        citations,
        duplicates_removed: 0,
    };
    raw.normalize();
    log::info!("parsed {}: {}", dir.display(), raw.summary());
    Ok(raw)
}
