use rand::seq::SliceRandom;

use super::{Corpus, Document, Source};
use crate::error::{Error, Result};
use crate::seed::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(valid_fraction: f64, test_fraction: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            valid_fraction,
            test_fraction,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let in_range = |f: f64| (0.0..1.0).contains(&f);
        if !in_range(self.valid_fraction) || !in_range(self.test_fraction) {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1), got valid={} test={}",
                self.valid_fraction, self.test_fraction
            )));
        }
        if self.valid_fraction + self.test_fraction >= 1.0 {
            return Err(Error::Config(format!(
                "valid + test fraction must be < 1, got {}",
                self.valid_fraction + self.test_fraction
            )));
        }
        Ok(())
    }
}

fn held_out(n: usize, fraction: f64) -> usize {
    if fraction == 0.0 {
        0
    } else {
        ((n as f64 * fraction).floor() as usize).max(1)
    }
}

/// Shuffles each source with its own seed-derived stream, then carves off
/// validation and test documents. Every source appears in all three parts.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus, Corpus)> {
    spec.validate()?;
    let mut train = Vec::with_capacity(corpus.k());
    let mut valid = Vec::with_capacity(corpus.k());
    let mut test = Vec::with_capacity(corpus.k());
    for source in corpus.sources() {
        let n = source.len();
        let n_valid = held_out(n, spec.valid_fraction);
        let n_test = held_out(n, spec.test_fraction);
        if n_valid + n_test >= n && n_valid + n_test > 0 {
            return Err(Error::Split {
                source_name: source.key().to_string(),
                message: format!(
                    "{n} documents cannot provide {n_valid} validation + {n_test} test documents and a non-empty train set"
                ),
            });
        }
        let mut docs: Vec<Document> = source.documents().to_vec();
        let mut rng = derived_rng(spec.seed, &format!("split/{}", source.key()));
        docs.shuffle(&mut rng);
        let mut test_docs = docs.split_off(n_valid);
        let train_docs = test_docs.split_off(n_test);
        valid.push(Source::from_parts(source.key().clone(), docs));
        test.push(Source::from_parts(source.key().clone(), test_docs));
        train.push(Source::from_parts(source.key().clone(), train_docs));
    }
    Ok((
        Corpus { sources: train },
        Corpus { sources: valid },
        Corpus { sources: test },
    ))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::corpus::SourceKey;

    fn corpus(n: usize) -> Corpus {
        let key = SourceKey::new("en", "wiki").unwrap();
        let docs = (0..n)
            .map(|i| Document::new(format!("d{i}"), format!("t{i}")))
            .collect();
        Corpus::new(vec![Source::new(key, docs).unwrap()]).unwrap()
    }

    fn sizes(parts: &(Corpus, Corpus, Corpus)) -> (usize, usize, usize) {
        (
            parts.0.document_count(),
            parts.1.document_count(),
            parts.2.document_count(),
        )
    }

    #[test]
    fn one_percent_each() {
        let parts = split(&corpus(100), &SplitSpec::new(0.01, 0.01, 3).unwrap()).unwrap();
        assert_eq!(sizes(&parts), (98, 1, 1));
    }

    #[test]
    fn ten_percent_each() {
        let parts = split(&corpus(200), &SplitSpec::new(0.1, 0.1, 3).unwrap()).unwrap();
        assert_eq!(sizes(&parts), (160, 20, 20));
    }

    #[test]
    fn zero_fractions_keep_everything() {
        let c = corpus(10);
        let (train, valid, test) = split(&c, &SplitSpec::new(0.0, 0.0, 9).unwrap()).unwrap();
        assert_eq!(train.document_count(), 10);
        assert_eq!(valid.k(), 1);
        assert!(valid.sources()[0].is_empty());
        assert!(test.sources()[0].is_empty());
    }

    #[test]
    fn tiny_source_rejected() {
        let err = split(&corpus(2), &SplitSpec::new(0.01, 0.01, 0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Split { ref source_name, .. } if source_name == "en/wiki"));
        assert!(split(&corpus(3), &SplitSpec::new(0.01, 0.01, 0).unwrap()).is_ok());
    }

    #[test]
    fn fractions_validated() {
        assert!(SplitSpec::new(0.6, 0.4, 0).is_err());
        assert!(SplitSpec::new(-0.1, 0.0, 0).is_err());
        assert!(SplitSpec::new(1.0, 0.0, 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let c = corpus(50);
        let spec = SplitSpec::new(0.1, 0.1, 42).unwrap();
        assert_eq!(split(&c, &spec).unwrap(), split(&c, &spec).unwrap());
        let other = split(&c, &SplitSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(split(&c, &spec).unwrap().0, other.0);
    }

    proptest::proptest! {
        #[test]
        fn partition(n in 3usize..200, fv in 0.0f64..0.3, ft in 0.0f64..0.3, seed in 0u64..1000) {
            let c = corpus(n);
            let spec = SplitSpec::new(fv, ft, seed).unwrap();
            if let Ok((train, valid, test)) = split(&c, &spec) {
                let ids = |c: &Corpus| -> HashSet<String> {
                    c.sources()[0].documents().iter().map(|d| d.id.clone()).collect()
                };
                let (a, b, t) = (ids(&train), ids(&valid), ids(&test));
                proptest::prop_assert_eq!(a.len() + b.len() + t.len(), n);
                proptest::prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&t) && b.is_disjoint(&t));
            }
        }
    }
}
