//! Cross-lingual data-mixture reweighting.
//!
//! A small bigram proxy model is trained under a bi-level scheme: the inner
//! step updates model parameters on an alpha-weighted loss, the outer step
//! moves the per-source sampling weights alpha by exponentiated gradient
//! alignment and projects them onto the simplex with a per-source floor.
//! The resulting weights are smoothed, aggregated per language and turned
//! into token-budget plans.

pub mod corpus;
pub mod error;
pub mod optimizer;
pub mod proxy;
pub mod rescale;
pub mod seed;
pub mod simplex;
pub mod text;
pub mod weights;

pub use corpus::{Corpus, Document, Source, SourceKey};
pub use error::{Error, Result};
pub use simplex::WeightVector;
