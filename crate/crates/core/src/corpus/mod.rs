//! Multilingual multi-domain corpora: ingestion, exact dedup, per-source
//! splits, tokenization and synthetic generation.
//!
//! A corpus is a list of [`Source`]s, each identified by a
//! `(language, domain)` [`SourceKey`]. Every step here is a pure function of
//! its inputs and seed; sources are processed independently (and in parallel
//! where it pays off).

mod dedup;
mod manifest;
mod split;
pub mod synthetic;
mod tokenize;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use dedup::{dedup_cross_source, dedup_exact, dedup_report, DedupReport, DedupRow};
pub use manifest::{ingest_manifest, read_documents, write_corpus, Manifest, ManifestEntry};
pub use split::{split, SplitSpec};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use tokenize::{tokenize, AlphabetTokenizer, ByteTokenizer, Tokenizer, TokenizerSpec};

/// Identifies one `(language, domain)` slice of the corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceKey {
    pub language: String,
    pub domain: String,
}

impl SourceKey {
    pub fn new(language: impl Into<String>, domain: impl Into<String>) -> Result<Self> {
        let key = SourceKey {
            language: language.into(),
            domain: domain.into(),
        };
        validate_name("language", &key.language)?;
        validate_name("domain", &key.domain)?;
        Ok(key)
    }
}

/// Names end up in file names and delimited headers.
pub(crate) fn validate_name(what: &str, name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "{what} name {name:?} must be non-empty and use only [A-Za-z0-9._-]"
        )))
    }
}

impl fmt::Display for SourceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.language, self.domain)
    }
}

impl FromStr for SourceKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (language, domain) = s.split_once('/').ok_or_else(|| {
            Error::Input(format!(
                "source key {s:?} is not of the form language/domain"
            ))
        })?;
        SourceKey::new(language, domain)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: Vec<u8>,
    /// Empty until the corpus is tokenized.
    pub token_ids: Vec<u32>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<Vec<u8>>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            token_ids: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    key: SourceKey,
    documents: Vec<Document>,
    token_count: u64,
}

impl Source {
    /// Builds a source, checking id uniqueness and deriving `token_count`.
    pub fn new(key: SourceKey, documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Input(format!(
                    "duplicate document id {:?} in source {key}",
                    doc.id
                )));
            }
        }
        let token_count = documents.iter().map(|d| d.token_ids.len() as u64).sum();
        Ok(Source {
            key,
            documents,
            token_count,
        })
    }

    /// Internal constructor for document lists already known to have unique ids.
    pub(crate) fn from_parts(key: SourceKey, documents: Vec<Document>) -> Self {
        let token_count = documents.iter().map(|d| d.token_ids.len() as u64).sum();
        Source {
            key,
            documents,
            token_count,
        }
    }

    pub fn key(&self) -> &SourceKey {
        &self.key
    }

    pub fn language(&self) -> &str {
        &self.key.language
    }

    pub fn domain(&self) -> &str {
        &self.key.domain
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    pub fn is_tokenized(&self) -> bool {
        self.documents.iter().all(|d| !d.token_ids.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    sources: Vec<Source>,
}

impl Corpus {
    pub fn new(sources: Vec<Source>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &sources {
            if !seen.insert(s.key()) {
                return Err(Error::Manifest(format!("duplicate source {}", s.key())));
            }
        }
        Ok(Corpus { sources })
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn source(&self, key: &SourceKey) -> Option<&Source> {
        self.sources.iter().find(|s| s.key() == key)
    }

    pub fn keys(&self) -> Vec<SourceKey> {
        self.sources.iter().map(|s| s.key().clone()).collect()
    }

    pub fn languages(&self) -> BTreeSet<String> {
        self.sources
            .iter()
            .map(|s| s.language().to_string())
            .collect()
    }

    /// Total number of sources.
    pub fn k(&self) -> usize {
        self.sources.len()
    }

    pub fn document_count(&self) -> usize {
        self.sources.iter().map(Source::len).sum()
    }

    pub fn token_count(&self) -> u64 {
        self.sources.iter().map(Source::token_count).sum()
    }

    pub fn is_tokenized(&self) -> bool {
        self.sources.iter().all(Source::is_tokenized)
    }

    /// Largest token id present, if any.
    pub fn max_token_id(&self) -> Option<u32> {
        self.sources
            .iter()
            .flat_map(|s| s.documents.iter())
            .flat_map(|d| d.token_ids.iter().copied())
            .max()
    }
}
