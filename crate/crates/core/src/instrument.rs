//! Instrument categories and file-name labelling.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::bms::{Chart, SampleId};

/// Number of instrument categories.
pub const CATEGORY_COUNT: usize = 27;

const DEFAULT_TAXONOMY: &str = include_str!("../data/taxonomy.txt");
const DEFAULT_DICTIONARY: &str = include_str!("../data/instrument_dictionary.txt");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy needs exactly {CATEGORY_COUNT} categories, found {0}")]
    WrongCount(usize),
    #[error("category `{0}` is listed twice")]
    Duplicate(String),
    #[error("line {line}: unknown category `{category}`")]
    UnknownCategory { line: usize, category: String },
    #[error("line {0}: expected `synonym = category`")]
    Malformed(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstrumentLabel {
    pub index: usize,
    pub name: String,
}

/// The ordered list of categories.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Taxonomy {
    names: Vec<String>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::parse(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

impl Taxonomy {
    /// One category per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let names: Vec<String> = content_lines(text).map(|(_, l)| l.to_lowercase()).collect();
        if names.len() != CATEGORY_COUNT {
            return Err(TaxonomyError::WrongCount(names.len()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(TaxonomyError::Duplicate(n.clone()));
            }
        }
        Ok(Taxonomy { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let name = name.to_lowercase();
        self.names.iter().position(|n| *n == name)
    }

    pub fn label(&self, index: usize) -> InstrumentLabel {
        InstrumentLabel {
            index,
            name: self.names[index].clone(),
        }
    }

    pub fn label_named(&self, name: &str) -> Option<InstrumentLabel> {
        self.index_of(name).map(|i| self.label(i))
    }
}

/// Lowercase synonym to category map.
#[derive(Clone, Debug)]
pub struct Dictionary {
    taxonomy: Taxonomy,
    synonyms: BTreeMap<String, usize>,
}

impl Default for Dictionary {
    fn default() -> Self {
        Dictionary::parse(DEFAULT_DICTIONARY, Taxonomy::default()).expect("bundled dictionary is valid")
    }
}

impl Dictionary {
    /// Parses `synonym = category` lines (a tab works in place of `=`).
    /// Each category name is implicitly a synonym of itself.
    pub fn parse(text: &str, taxonomy: Taxonomy) -> Result<Self, TaxonomyError> {
        let mut synonyms: BTreeMap<String, usize> = taxonomy
            .names()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        for (line, l) in content_lines(text) {
            let (key, category) = l
                .split_once('=')
                .or_else(|| l.split_once('\t'))
                .ok_or(TaxonomyError::Malformed(line))?;
            let (key, category) = (key.trim().to_lowercase(), category.trim());
            if key.is_empty() {
                return Err(TaxonomyError::Malformed(line));
            }
            let index = taxonomy
                .index_of(category)
                .ok_or_else(|| TaxonomyError::UnknownCategory {
                    line,
                    category: category.to_string(),
                })?;
            synonyms.insert(key, index);
        }
        Ok(Dictionary { taxonomy, synonyms })
    }

    pub fn load(path: &Path, taxonomy: Taxonomy) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, taxonomy)
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }
}

/// Labels a sample by the longest dictionary synonym found in its file stem.
///
/// Ties between equally long synonyms go to the one that appears first in the
/// stem. Returns `None` when nothing matches.
pub fn label_from_filename(name: &str, dictionary: &Dictionary) -> Option<InstrumentLabel> {
    let file = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let stem = match file.rfind('.') {
        Some(i) if i > 0 => &file[..i],
        _ => file,
    };
    let stem = stem.to_lowercase();
    let mut best: Option<(usize, usize, usize)> = None; // (len, position, category)
    for (synonym, &category) in &dictionary.synonyms {
        if let Some(pos) = stem.find(synonym.as_str()) {
            let candidate = (synonym.len(), pos, category);
            best = match best {
                Some(b) if b.0 > candidate.0 || (b.0 == candidate.0 && b.1 <= candidate.1) => Some(b),
                _ => Some(candidate),
            };
        }
    }
    best.map(|(_, _, category)| dictionary.taxonomy.label(category))
}

/// Instrument of every sample in `chart`.
///
/// `manifest` maps sample file names to categories (looked up exactly, then
/// case-insensitively by base name). Samples missing from it are labelled from
/// their file name, and fall back to the last category ("other") when nothing
/// matches.
pub fn label_chart_samples(
    chart: &Chart,
    manifest: &BTreeMap<String, InstrumentLabel>,
    dictionary: &Dictionary,
) -> BTreeMap<SampleId, InstrumentLabel> {
    let base = |s: &str| s.rsplit(['/', '\\']).next().unwrap_or(s).to_lowercase();
    let by_base: BTreeMap<String, &InstrumentLabel> = manifest.iter().map(|(k, v)| (base(k), v)).collect();
    let fallback = dictionary.taxonomy.label(CATEGORY_COUNT - 1);
    chart
        .sample_table()
        .iter()
        .map(|(&id, file)| {
            let label = manifest
                .get(file)
                .or_else(|| by_base.get(&base(file)).copied())
                .cloned()
                .or_else(|| label_from_filename(file, dictionary))
                .unwrap_or_else(|| fallback.clone());
            (id, label)
        })
        .collect()
}
