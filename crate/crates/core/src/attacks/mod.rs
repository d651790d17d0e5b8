//! Observer-side recovery attacks and text-similarity scoring.
//!
//! Every attack is split into an inference step, which sees only what the
//! observer would see, and a scoring step, which consults a [`GroundTruth`].
//! Inference functions never take a key, so the ground truth cannot leak into
//! an attacker's guesses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bijection::BijectionKey;
use crate::vocab::TokenId;

mod frequency;
mod ngram;
mod nn;
pub mod probe;
mod scoring;

pub use frequency::{frequency_attack, frequency_hypotheses, rank_by_frequency};
pub use ngram::{ngram_attack, ngram_inference, AlignedPair, NgramInference};
pub use nn::{nn_hypotheses, nn_mapping_attack};
pub use probe::{llm_inverse_probe, ChatBackend, ChatMessage, EndpointConfig, HttpChat, ProbeItem};
pub use scoring::{bleu, rouge_l, sentence_bleu};

/// Per-attack recovery statistics. All rates are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack_name: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    /// Fraction of evaluated token mappings inferred correctly.
    pub token_recovery: Option<f64>,
    /// Fraction of mappings unseen in leaked pairs that were inferred
    /// correctly; `None` when nothing was unseen.
    pub bijection_recovery: Option<f64>,
    /// Fraction of the attacker's explicit hypotheses that were correct.
    pub head_recovery: Option<f64>,
    pub bleu: Option<f64>,
    pub rouge_l: Option<f64>,
    pub evaluated_count: usize,
}

impl AttackReport {
    pub(crate) fn new(name: &str) -> Self {
        AttackReport {
            attack_name: name.to_owned(),
            parameters: BTreeMap::new(),
            token_recovery: None,
            bijection_recovery: None,
            head_recovery: None,
            bleu: None,
            rouge_l: None,
            evaluated_count: 0,
        }
    }

    pub(crate) fn param(mut self, name: &str, value: impl Into<serde_json::Value>) -> Self {
        self.parameters.insert(name.to_owned(), value.into());
        self
    }
}

/// Scoring-side view of the true mapping.
pub trait GroundTruth: Sync {
    /// The plaintext ID behind an alien ID.
    fn plaintext_of(&self, alien: TokenId) -> TokenId;
    /// Whether `id` is in the alienization mask.
    fn is_permuted(&self, id: TokenId) -> bool;
    /// The mask, ascending.
    fn permuted_ids(&self) -> Vec<TokenId>;
}

impl GroundTruth for BijectionKey {
    fn plaintext_of(&self, alien: TokenId) -> TokenId {
        self.map_id(alien)
    }

    fn is_permuted(&self, id: TokenId) -> bool {
        self.is_masked(id)
    }

    fn permuted_ids(&self) -> Vec<TokenId> {
        self.mask().collect()
    }
}

/// Ground truth supplied as callbacks.
pub struct CallbackTruth<F, G> {
    pub plaintext_of: F,
    pub mask: Vec<TokenId>,
    pub is_permuted: G,
}

impl<F, G> GroundTruth for CallbackTruth<F, G>
where
    F: Fn(TokenId) -> TokenId + Sync,
    G: Fn(TokenId) -> bool + Sync,
{
    fn plaintext_of(&self, alien: TokenId) -> TokenId {
        (self.plaintext_of)(alien)
    }

    fn is_permuted(&self, id: TokenId) -> bool {
        (self.is_permuted)(id)
    }

    fn permuted_ids(&self) -> Vec<TokenId> {
        self.mask.clone()
    }
}

pub(crate) fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}
