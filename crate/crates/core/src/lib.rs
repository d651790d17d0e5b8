//! Vocabulary-level bijection keys ("alien languages") for API-boundary privacy.
//!
//! The crate is organised around the data flow of a deployment:
//!
//! * [`vocab`] loads the target vocabulary and provides a deterministic
//!   greedy longest-match tokenizer for self-contained use.
//! * [`embeddings`] stores token vectors, synthesizes proxy vectors from
//!   subpieces and answers exact top-k cosine queries.
//! * [`bijection`] builds, scores, serializes and diagnoses keys.
//! * [`translator`] converts between plaintext and alien form and emits
//!   alienized fine-tuning corpora.
//! * [`attacks`] implements the observer-side recovery attacks and the
//!   BLEU / ROUGE-L scorers.
//! * [`report`] aggregates diagnostics into versioned summaries.
//!
//! Data-parallel inner loops (kNN blocks, bucket builds, attack fan-out,
//! dataset records) go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod attacks;
pub mod bijection;
pub mod embeddings;
pub mod error;
pub mod par;
pub mod report;
pub mod seed;
pub mod synth;
pub mod text;
pub mod translator;
pub mod vocab;

pub use bijection::{BijectionKey, BuildConfig, EditMode};
pub use embeddings::EmbeddingStore;
pub use error::{Error, Result};
pub use translator::{AlienDocument, Translator};
pub use vocab::{Fingerprint, TokenId, TokenSequence, Vocabulary};
