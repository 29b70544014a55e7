use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, Document, Source, SourceKey};
use crate::error::{Error, Result};

/// One source record of a manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub language: String,
    pub domain: String,
    /// Line-delimited document file, relative to the manifest's directory.
    pub path: PathBuf,
    /// Accepted for compatibility with weighted manifests; not used by ingestion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

/// TOML manifest:
///
/// ```toml
/// [[source]]
/// language = "en"
/// domain = "wiki"
/// path = "en_wiki.txt"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "source", default)]
    pub sources: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: Manifest =
            toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.base_dir = base_dir.into();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.sources {
            let key = SourceKey::new(&entry.language, &entry.domain)
                .map_err(|e| Error::Manifest(e.to_string()))?;
            if !seen.insert(key.clone()) {
                return Err(Error::Manifest(format!("duplicate source {key}")));
            }
        }
        Ok(())
    }
}

/// Reads a line-delimited document file. Blank lines are skipped and a
/// trailing `\r` is stripped; ids are `language/domain#line` (1-based).
pub fn read_documents(key: &SourceKey, path: &Path) -> Result<Vec<Document>> {
    let bytes = fs::read(path).map_err(|e| Error::Ingestion {
        source_name: key.to_string(),
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(parse_documents(key, &bytes))
}

pub(crate) fn parse_documents(key: &SourceKey, bytes: &[u8]) -> Vec<Document> {
    bytes
        .split(|&b| b == b'\n')
        .enumerate()
        .filter_map(|(i, line)| {
            let line = line.strip_suffix(b"\r").unwrap_or(line);
            if line.iter().all(u8::is_ascii_whitespace) {
                None
            } else {
                Some(Document::new(format!("{key}#{}", i + 1), line))
            }
        })
        .collect()
}

/// Loads every source listed in the manifest, preserving file order.
pub fn ingest_manifest(manifest: &Manifest) -> Result<Corpus> {
    manifest.validate()?;
    let sources = manifest
        .sources
        .iter()
        .map(|entry| {
            let key = SourceKey::new(&entry.language, &entry.domain)?;
            let docs = read_documents(&key, &manifest.resolve(entry))?;
            Ok(Source::from_parts(key, docs))
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(sources)
}

/// Writes each source to `<dir>/<language>_<domain>.txt`, one document per
/// line, plus `<dir>/manifest.toml` listing them. Returns the manifest.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(corpus.k());
    for source in corpus.sources() {
        let file = format!("{}_{}.txt", source.language(), source.domain());
        let mut bytes = Vec::new();
        for doc in source.documents() {
            if doc.text.contains(&b'\n') {
                return Err(Error::Input(format!(
                    "document {} contains a newline and cannot be written line-delimited",
                    doc.id
                )));
            }
            bytes.extend_from_slice(&doc.text);
            bytes.push(b'\n');
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            language: source.language().to_string(),
            domain: source.domain().to_string(),
            path: file.into(),
            weight: None,
        });
    }
    let manifest = Manifest {
        sources: entries,
        base_dir: dir.to_path_buf(),
    };
    manifest.write(dir.join("manifest.toml"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let key = SourceKey::new("eu", "wiki").unwrap();
        let docs = vec![Document::new("x", "first"), Document::new("y", "second")];
        let corpus = Corpus::new(vec![Source::new(key, docs).unwrap()]).unwrap();
        write_corpus(&corpus, dir.path()).unwrap();
        let back = ingest_manifest(&Manifest::from_path(dir.path().join("manifest.toml")).unwrap())
            .unwrap();
        let texts: Vec<_> = back.sources()[0]
            .documents()
            .iter()
            .map(|d| d.text.clone())
            .collect();
        assert_eq!(texts, vec![b"first".to_vec(), b"second".to_vec()]);
    }

    fn write_manifest(dir: &Path, sources: &[(&str, &str, &str)]) -> PathBuf {
        let mut text = String::new();
        for (lang, domain, file) in sources {
            text.push_str(&format!(
                "[[source]]\nlanguage = \"{lang}\"\ndomain = \"{domain}\"\npath = \"{file}\"\n\n"
            ));
        }
        let path = dir.join("manifest.toml");
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn ingests_two_sources() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "one\ntwo\n\nthree\n").unwrap();
        fs::write(dir.path().join("b.txt"), "x\r\ny\nz").unwrap();
        let path = write_manifest(
            dir.path(),
            &[("en", "wiki", "a.txt"), ("es", "wiki", "b.txt")],
        );
        let corpus = ingest_manifest(&Manifest::from_path(path).unwrap()).unwrap();
        assert_eq!(corpus.k(), 2);
        assert_eq!(corpus.document_count(), 6);
        let a = &corpus.sources()[0];
        let texts: Vec<_> = a.documents().iter().map(|d| d.text.as_slice()).collect();
        assert_eq!(texts, vec![b"one".as_slice(), b"two", b"three"]);
        assert_eq!(a.documents()[2].id, "en/wiki#4");
        assert_eq!(corpus.sources()[1].documents()[0].text, b"x");
    }

    #[test]
    fn missing_file_names_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &[("gl", "oscar", "nope.txt")]);
        let err = ingest_manifest(&Manifest::from_path(path).unwrap()).unwrap_err();
        match err {
            Error::Ingestion { source_name, .. } => assert_eq!(source_name, "gl/oscar"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_pair_is_manifest_error() {
        let text = "[[source]]\nlanguage='en'\ndomain='wiki'\npath='a'\n[[source]]\nlanguage='en'\ndomain='wiki'\npath='b'\n";
        assert!(matches!(
            Manifest::parse(text, "."),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn six_by_two_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for lang in ["en", "es", "ca", "gl", "eu", "pt"] {
            for domain in ["oscar", "wiki"] {
                let file = format!("{lang}_{domain}.txt");
                fs::write(dir.path().join(&file), "doc\n").unwrap();
                entries.push((lang, domain, file));
            }
        }
        let refs: Vec<_> = entries
            .iter()
            .map(|(l, d, f)| (*l, *d, f.as_str()))
            .collect();
        let path = write_manifest(dir.path(), &refs);
        let corpus = ingest_manifest(&Manifest::from_path(path).unwrap()).unwrap();
        assert_eq!(corpus.k(), 12);
        assert_eq!(corpus.languages().len(), 6);
    }

    #[test]
    fn weight_hints_are_accepted() {
        let text = "[[source]]\nlanguage='en'\ndomain='wiki'\npath='a'\nweight=0.3\n";
        let m = Manifest::parse(text, ".").unwrap();
        assert_eq!(m.sources[0].weight, Some(0.3));
    }
}
