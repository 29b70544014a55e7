//! Synthetic corpora from first-order Markov generators.
//!
//! Generators are named transition tables. A source draws its documents from
//! a mixture of generators plus optional uniform noise, so sources that share
//! a generator carry a known transfer structure. Tables depend only on the
//! generator's own seed; document draws depend on the corpus seed and the
//! source key.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tokenize::ALPHABET;
use super::{Corpus, Document, Source, SourceKey};
use crate::error::{Error, Result};
use crate::seed::{categorical, derived_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeneratorSpec {
    /// Every next token equally likely.
    Uniform,
    /// Row-wise softmax of `sharpness`-scaled standard normal logits.
    Bigram {
        seed: u64,
        #[serde(default = "default_sharpness")]
        sharpness: f64,
    },
}

fn default_sharpness() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixComponent {
    pub generator: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSource {
    pub language: String,
    pub domain: String,
    pub documents: usize,
    pub doc_length: usize,
    /// Shorthand for a single-component mixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mix: Vec<MixComponent>,
    /// Weight of a uniform-noise component mixed into the table.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub vocab_size: usize,
    #[serde(default)]
    pub generators: BTreeMap<String, GeneratorSpec>,
    #[serde(rename = "source")]
    pub sources: Vec<SyntheticSource>,
}

/// Row-stochastic `V x V` matrix; row = current token.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    vocab_size: usize,
    probs: Vec<f64>,
}

impl TransitionTable {
    pub fn uniform(vocab_size: usize) -> Self {
        TransitionTable {
            vocab_size,
            probs: vec![1.0 / vocab_size as f64; vocab_size * vocab_size],
        }
    }

    pub fn random_bigram(vocab_size: usize, seed: u64, sharpness: f64) -> Self {
        let mut rng = derived_rng(seed, "bigram-table");
        let mut probs = Vec::with_capacity(vocab_size * vocab_size);
        for _ in 0..vocab_size {
            let logits: Vec<f64> = (0..vocab_size)
                .map(|_| sharpness * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            probs.extend(exps.iter().map(|e| e / total));
        }
        TransitionTable { vocab_size, probs }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.probs[context * self.vocab_size..(context + 1) * self.vocab_size]
    }

    /// Convex combination `sum_i w_i T_i` with weights summing to one.
    fn mixture(parts: &[(f64, &TransitionTable)]) -> Self {
        let vocab_size = parts[0].1.vocab_size;
        let mut probs = vec![0.0; vocab_size * vocab_size];
        for (w, table) in parts {
            for (p, q) in probs.iter_mut().zip(&table.probs) {
                *p += w * q;
            }
        }
        TransitionTable { vocab_size, probs }
    }
}

impl SyntheticConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: SyntheticConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SyntheticConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.vocab_size > ALPHABET.len() {
            return Err(Error::Config(format!(
                "vocab_size must be in 1..={}, got {}",
                ALPHABET.len(),
                self.vocab_size
            )));
        }
        if self.sources.is_empty() {
            return Err(Error::Config("synthetic config lists no sources".into()));
        }
        for spec in self.generators.values() {
            if let GeneratorSpec::Bigram { sharpness, .. } = spec {
                if !sharpness.is_finite() || *sharpness < 0.0 {
                    return Err(Error::Config(format!("invalid sharpness {sharpness}")));
                }
            }
        }
        for src in &self.sources {
            let key = SourceKey::new(&src.language, &src.domain)
                .map_err(|e| Error::Config(e.to_string()))?;
            if src.documents == 0 || src.doc_length == 0 {
                return Err(Error::Config(format!(
                    "source {key} needs a positive document count and length"
                )));
            }
            if !(0.0..=1.0).contains(&src.noise) {
                return Err(Error::Config(format!(
                    "source {key}: noise must lie in [0, 1]"
                )));
            }
            let components = self.components(src);
            if components.is_empty() && src.noise == 0.0 {
                return Err(Error::Config(format!("source {key} has no generator")));
            }
            for c in &components {
                if !self.generators.contains_key(&c.generator) {
                    return Err(Error::Config(format!(
                        "source {key} references unknown generator {:?}",
                        c.generator
                    )));
                }
                if !c.weight.is_finite() || c.weight <= 0.0 {
                    return Err(Error::Config(format!(
                        "source {key}: mixture weights must be positive"
                    )));
                }
            }
        }
        Ok(())
    }

    fn components(&self, src: &SyntheticSource) -> Vec<MixComponent> {
        let mut out = src.mix.clone();
        if let Some(name) = &src.generator {
            out.push(MixComponent {
                generator: name.clone(),
                weight: 1.0,
            });
        }
        out
    }

    fn generator_table(&self, name: &str) -> TransitionTable {
        match self.generators[name] {
            GeneratorSpec::Uniform => TransitionTable::uniform(self.vocab_size),
            GeneratorSpec::Bigram { seed, sharpness } => {
                TransitionTable::random_bigram(self.vocab_size, seed, sharpness)
            }
        }
    }

    /// The effective transition table documents of `src` are drawn from.
    pub fn source_table(&self, src: &SyntheticSource) -> TransitionTable {
        let components = self.components(src);
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let tables: Vec<(f64, TransitionTable)> = components
            .iter()
            .map(|c| {
                (
                    (1.0 - src.noise) * c.weight / total,
                    self.generator_table(&c.generator),
                )
            })
            .collect();
        let uniform = TransitionTable::uniform(self.vocab_size);
        let mut parts: Vec<(f64, &TransitionTable)> = tables.iter().map(|(w, t)| (*w, t)).collect();
        if src.noise > 0.0 || parts.is_empty() {
            parts.push((if parts.is_empty() { 1.0 } else { src.noise }, &uniform));
        }
        TransitionTable::mixture(&parts)
    }
}

/// Draws every source's documents; the first token of a document is uniform.
/// Texts use the synthetic alphabet, so the result is already tokenized and
/// can be written out and re-read with the matching alphabet tokenizer.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let v = config.vocab_size;
    let mut sources = Vec::with_capacity(config.sources.len());
    for src in &config.sources {
        let key = SourceKey::new(&src.language, &src.domain)?;
        let table = config.source_table(src);
        let mut rng = derived_rng(seed, &format!("synthetic/{key}"));
        let docs = (0..src.documents)
            .map(|i| {
                let mut ids = Vec::with_capacity(src.doc_length);
                let mut current = rng.random_range(0..v);
                ids.push(current as u32);
                for _ in 1..src.doc_length {
                    current = categorical(&mut rng, table.row(current));
                    ids.push(current as u32);
                }
                let text: Vec<u8> = ids.iter().map(|&t| ALPHABET[t as usize]).collect();
                Document {
                    id: format!("{key}#{}", i + 1),
                    text,
                    token_ids: ids,
                }
            })
            .collect();
        sources.push(Source::from_parts(key, docs));
    }
    Corpus::new(sources)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> SyntheticConfig {
        SyntheticConfig::parse(text).unwrap()
    }

    const SHARED: &str = r#"
        vocab_size = 8
        [generators.shared]
        kind = "bigram"
        seed = 11
        [[source]]
        language = "aa"
        domain = "web"
        documents = 400
        doc_length = 100
        generator = "shared"
        [[source]]
        language = "bb"
        domain = "web"
        documents = 400
        doc_length = 100
        generator = "shared"
    "#;

    fn bigram_freqs(source: &Source, v: usize) -> Vec<f64> {
        let mut counts = vec![0.0; v * v];
        let mut total = 0.0;
        for doc in source.documents() {
            for w in doc.token_ids.windows(2) {
                counts[w[0] as usize * v + w[1] as usize] += 1.0;
                total += 1.0;
            }
        }
        counts.iter().map(|c| c / total).collect()
    }

    #[test]
    fn shared_generator_gives_matching_bigram_statistics() {
        let cfg = config(SHARED);
        let corpus = generate_synthetic(&cfg, 5).unwrap();
        let a = bigram_freqs(&corpus.sources()[0], 8);
        let b = bigram_freqs(&corpus.sources()[1], 8);
        let tv: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.03, "total variation {tv}");
        assert_ne!(
            corpus.sources()[0].documents()[0].text,
            corpus.sources()[1].documents()[0].text
        );
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = config(SHARED);
        assert_eq!(
            generate_synthetic(&cfg, 9).unwrap(),
            generate_synthetic(&cfg, 9).unwrap()
        );
        assert_ne!(
            generate_synthetic(&cfg, 9).unwrap(),
            generate_synthetic(&cfg, 10).unwrap()
        );
    }

    /// Chi-square statistic against the uniform distribution, compared to a
    /// Wilson-Hilferty approximation of the 0.999 quantile.
    #[test]
    fn uniform_generator_is_uniform() {
        let v = 16;
        let cfg = config(&format!(
            "vocab_size = {v}\n[generators.u]\nkind = 'uniform'\n[[source]]\nlanguage='xx'\ndomain='noise'\ndocuments=100\ndoc_length=1000\ngenerator='u'\n"
        ));
        let corpus = generate_synthetic(&cfg, 1).unwrap();
        let mut counts = vec![0.0f64; v];
        for doc in corpus.sources()[0].documents() {
            for &t in &doc.token_ids {
                counts[t as usize] += 1.0;
            }
        }
        let n: f64 = counts.iter().sum();
        assert_eq!(n, 100_000.0);
        let expected = n / v as f64;
        for c in &counts {
            assert!((c - expected).abs() / expected < 0.05);
        }
        let chi2: f64 = counts
            .iter()
            .map(|c| (c - expected).powi(2) / expected)
            .sum();
        let df = (v - 1) as f64;
        let z = 3.090; // 0.999 normal quantile
        let crit = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
    }

    #[test]
    fn rejects_bad_configs() {
        let base = "vocab_size = 4\n[generators.u]\nkind='uniform'\n[[source]]\nlanguage='a'\ndomain='b'\n";
        assert!(
            SyntheticConfig::parse(&format!("{base}documents=0\ndoc_length=3\ngenerator='u'"))
                .is_err()
        );
        assert!(
            SyntheticConfig::parse(&format!("{base}documents=3\ndoc_length=0\ngenerator='u'"))
                .is_err()
        );
        assert!(
            SyntheticConfig::parse(&format!("{base}documents=3\ndoc_length=3\ngenerator='v'"))
                .is_err()
        );
        assert!(SyntheticConfig::parse(&format!("{base}documents=3\ndoc_length=3")).is_err());
        assert!(
            SyntheticConfig::parse(&format!("{base}documents=3\ndoc_length=3\nnoise=1.0")).is_ok()
        );
    }

    #[test]
    fn tables_are_row_stochastic() {
        let t = TransitionTable::random_bigram(10, 3, 2.0);
        for c in 0..10 {
            let s: f64 = t.row(c).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let cfg = config(SHARED);
        let mut src = cfg.sources[0].clone();
        src.noise = 0.5;
        let mixed = cfg.source_table(&src);
        let pure = cfg.source_table(&cfg.sources[0]);
        for (m, p) in mixed.row(0).iter().zip(pure.row(0)) {
            assert!((m - (0.5 * p + 0.5 / 8.0)).abs() < 1e-12);
        }
    }
}
