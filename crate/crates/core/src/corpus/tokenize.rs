use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Corpus, Source};
use crate::error::{Error, Result};

/// Deterministic byte-sequence encoder.
pub trait Tokenizer: Sync {
    fn vocab_size(&self) -> usize;
    fn encode(&self, text: &[u8]) -> std::result::Result<Vec<u32>, String>;
}

/// One token per byte, vocabulary 256.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl Tokenizer for ByteTokenizer {
    fn vocab_size(&self) -> usize {
        256
    }

    fn encode(&self, text: &[u8]) -> std::result::Result<Vec<u32>, String> {
        Ok(text.iter().map(|&b| u32::from(b)).collect())
    }
}

/// Printable alphabet used by synthetic corpora: token `i` is `ALPHABET[i]`.
pub const ALPHABET: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

/// Maps each byte of a fixed alphabet to its position; other bytes are errors.
#[derive(Debug, Clone)]
pub struct AlphabetTokenizer {
    alphabet: Vec<u8>,
    lookup: [Option<u32>; 256],
}

impl AlphabetTokenizer {
    pub fn new(alphabet: &[u8]) -> Result<Self> {
        let mut lookup = [None; 256];
        for (i, &b) in alphabet.iter().enumerate() {
            if lookup[b as usize].replace(i as u32).is_some() {
                return Err(Error::Config(format!("alphabet repeats byte {b:#04x}")));
            }
        }
        if alphabet.is_empty() {
            return Err(Error::Config("alphabet must be non-empty".into()));
        }
        Ok(AlphabetTokenizer {
            alphabet: alphabet.to_vec(),
            lookup,
        })
    }

    /// First `vocab_size` characters of [`ALPHABET`].
    pub fn synthetic(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 || vocab_size > ALPHABET.len() {
            return Err(Error::Config(format!(
                "synthetic vocabulary must be in 1..={}, got {vocab_size}",
                ALPHABET.len()
            )));
        }
        AlphabetTokenizer::new(&ALPHABET[..vocab_size])
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<u8> {
        ids.iter().map(|&i| self.alphabet[i as usize]).collect()
    }
}

impl Tokenizer for AlphabetTokenizer {
    fn vocab_size(&self) -> usize {
        self.alphabet.len()
    }

    fn encode(&self, text: &[u8]) -> std::result::Result<Vec<u32>, String> {
        text.iter()
            .map(|&b| {
                self.lookup[b as usize]
                    .ok_or_else(|| format!("byte {b:#04x} is outside the alphabet"))
            })
            .collect()
    }
}

/// Tokenizer selection as it appears in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TokenizerSpec {
    #[default]
    Byte,
    Alphabet {
        vocab_size: usize,
    },
}

impl TokenizerSpec {
    pub fn build(&self) -> Result<Box<dyn Tokenizer>> {
        Ok(match *self {
            TokenizerSpec::Byte => Box::new(ByteTokenizer),
            TokenizerSpec::Alphabet { vocab_size } => {
                Box::new(AlphabetTokenizer::synthetic(vocab_size)?)
            }
        })
    }
}

fn tokenize_source(source: &Source, tokenizer: &dyn Tokenizer) -> Result<Source> {
    let mut docs = source.documents().to_vec();
    for doc in &mut docs {
        let ids = tokenizer
            .encode(&doc.text)
            .map_err(|message| Error::Tokenize {
                doc_id: doc.id.clone(),
                message,
            })?;
        if ids.is_empty() {
            return Err(Error::Tokenize {
                doc_id: doc.id.clone(),
                message: "document produced no tokens".into(),
            });
        }
        doc.token_ids = ids;
    }
    let out = Source::from_parts(source.key().clone(), docs);
    debug_assert_eq!(
        out.token_count(),
        out.documents()
            .iter()
            .map(|d| d.token_ids.len() as u64)
            .sum::<u64>()
    );
    Ok(out)
}

/// Encodes every document; sources are processed in parallel.
pub fn tokenize(corpus: &Corpus, tokenizer: &dyn Tokenizer) -> Result<Corpus> {
    let sources = corpus
        .sources()
        .par_iter()
        .map(|s| tokenize_source(s, tokenizer))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { sources })
}
