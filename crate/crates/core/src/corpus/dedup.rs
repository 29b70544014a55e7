use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{Corpus, Document, Source, SourceKey};

type Digest256 = [u8; 32];

/// Tracks kept documents by content hash, confirming every hash hit with a
/// full byte comparison.
#[derive(Default)]
struct SeenTexts<'a> {
    by_hash: HashMap<Digest256, Vec<&'a [u8]>>,
}

impl<'a> SeenTexts<'a> {
    /// Returns `true` if `text` was not seen before, recording it.
    fn insert(&mut self, text: &'a [u8]) -> bool {
        let digest: Digest256 = Sha256::digest(text).into();
        let bucket = self.by_hash.entry(digest).or_default();
        if bucket.contains(&text) {
            false
        } else {
            bucket.push(text);
            true
        }
    }
}

/// Keeps the first occurrence of each byte-identical document text.
pub fn dedup_exact(source: &Source) -> (Source, usize) {
    let mut seen = SeenTexts::default();
    let kept: Vec<Document> = source
        .documents()
        .iter()
        .filter(|d| seen.insert(&d.text))
        .cloned()
        .collect();
    let removed = source.len() - kept.len();
    (Source::from_parts(source.key().clone(), kept), removed)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupRow {
    pub key: SourceKey,
    pub kept: usize,
    pub removed: usize,
}

/// Per-source dedup summary; renders as a tab-separated table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DedupReport {
    pub rows: Vec<DedupRow>,
}

impl DedupReport {
    pub fn total_removed(&self) -> usize {
        self.rows.iter().map(|r| r.removed).sum()
    }
}

impl fmt::Display for DedupReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "source\tkept\tremoved")?;
        for row in &self.rows {
            writeln!(f, "{}\t{}\t{}", row.key, row.kept, row.removed)?;
        }
        Ok(())
    }
}

/// Per-source dedup of a whole corpus.
pub fn dedup_report(corpus: &Corpus) -> (Corpus, DedupReport) {
    let results: Vec<(Source, usize)> = corpus.sources().par_iter().map(dedup_exact).collect();
    let rows = results
        .iter()
        .map(|(s, removed)| DedupRow {
            key: s.key().clone(),
            kept: s.len(),
            removed: *removed,
        })
        .collect();
    let sources = results.into_iter().map(|(s, _)| s).collect();
    (Corpus { sources }, DedupReport { rows })
}

/// Dedup across all sources of the same language: a document is dropped if
/// an identical text appeared earlier in the same source or in an earlier
/// source (manifest order) of its language.
pub fn dedup_cross_source(corpus: &Corpus) -> (Corpus, DedupReport) {
    let mut per_language: HashMap<&str, SeenTexts<'_>> = HashMap::new();
    let mut sources = Vec::with_capacity(corpus.k());
    let mut rows = Vec::with_capacity(corpus.k());
    for source in corpus.sources() {
        let seen = per_language.entry(source.language()).or_default();
        let kept: Vec<Document> = source
            .documents()
            .iter()
            .filter(|d| seen.insert(&d.text))
            .cloned()
            .collect();
        rows.push(DedupRow {
            key: source.key().clone(),
            kept: kept.len(),
            removed: source.len() - kept.len(),
        });
        sources.push(Source::from_parts(source.key().clone(), kept));
    }
    (Corpus { sources }, DedupReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(lang: &str, texts: &[&str]) -> Source {
        let key = SourceKey::new(lang, "web").unwrap();
        let docs = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), *t))
            .collect();
        Source::new(key, docs).unwrap()
    }

    fn texts(s: &Source) -> Vec<&[u8]> {
        s.documents().iter().map(|d| d.text.as_slice()).collect()
    }

    #[test]
    fn drops_later_copies() {
        let (out, removed) = dedup_exact(&source("en", &["A", "B", "A"]));
        assert_eq!(texts(&out), vec![b"A".as_slice(), b"B"]);
        assert_eq!(removed, 1);
        assert_eq!(out.documents()[1].id, "d1");
    }

    #[test]
    fn distinct_docs_untouched() {
        let s = source("en", &["A", "B", "C"]);
        let (out, removed) = dedup_exact(&s);
        assert_eq!(out, s);
        assert_eq!(removed, 0);
    }

    #[test]
    fn empty_source() {
        let s = source("en", &[]);
        let (out, removed) = dedup_exact(&s);
        assert_eq!(out, s);
        assert_eq!(removed, 0);
    }

    #[test]
    fn no_normalization() {
        let (_, removed) = dedup_exact(&source("en", &["Hello", "hello", "Hello ", "Hello"]));
        assert_eq!(removed, 1);
    }

    #[test]
    fn cross_source_is_per_language() {
        let mut a = source("en", &["A", "B"]);
        a.key.domain = "wiki".into();
        let b = source("en", &["B", "C"]);
        let c = source("es", &["A"]);
        let corpus = Corpus::new(vec![a, b, c]).unwrap();
        let (out, report) = dedup_cross_source(&corpus);
        assert_eq!(texts(&out.sources()[1]), vec![b"C".as_slice()]);
        assert_eq!(out.sources()[2].len(), 1);
        assert_eq!(report.total_removed(), 1);

        let (_, per_source) = dedup_report(&corpus);
        assert_eq!(per_source.total_removed(), 0);
    }

    #[test]
    fn report_format() {
        let corpus = Corpus::new(vec![source("en", &["A", "A", "B"])]).unwrap();
        let (_, report) = dedup_report(&corpus);
        assert_eq!(report.to_string(), "source\tkept\tremoved\nen/web\t2\t1\n");
    }

    proptest::proptest! {
        #[test]
        fn idempotent(docs in proptest::collection::vec("[ab]{0,3}", 0..30)) {
            let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
            let s = source("en", &refs);
            let (once, _) = dedup_exact(&s);
            let (twice, removed) = dedup_exact(&once);
            proptest::prop_assert_eq!(&once, &twice);
            proptest::prop_assert_eq!(removed, 0);
            let mut unique: Vec<&str> = refs.clone();
            unique.sort();
            unique.dedup();
            proptest::prop_assert_eq!(once.len(), unique.len());
        }
    }
}
