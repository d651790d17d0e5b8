//! Weight-based mapping: guess each alien token's partner as its nearest
//! neighbor in embedding space.

use super::{ratio, AttackReport, GroundTruth};
use crate::embeddings::{EmbeddingStore, NeighborIndex};
use crate::error::Result;
use crate::vocab::TokenId;

const QUERY_BLOCK: usize = 64;

/// Top-1 cosine neighbor of every candidate among the other candidates.
pub fn nn_hypotheses(store: &EmbeddingStore, candidates: &[TokenId]) -> Result<Vec<(TokenId, Option<TokenId>)>> {
    let mut ids = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let index = NeighborIndex::new(store, &ids)?;
    if ids.len() < 2 {
        return Ok(ids.into_iter().map(|id| (id, None)).collect());
    }
    let nbrs = index.all_members(1, QUERY_BLOCK)?;
    Ok(ids.into_iter().zip(nbrs).map(|(id, n)| (id, n.first().map(|n| n.id))).collect())
}

pub fn nn_mapping_attack(store: &EmbeddingStore, truth: &dyn GroundTruth) -> Result<AttackReport> {
    let mask = truth.permuted_ids();
    let guesses = nn_hypotheses(store, &mask)?;
    let hits = guesses
        .iter()
        .filter(|(id, g)| *g == Some(truth.plaintext_of(*id)))
        .count();
    let mut report = AttackReport::new("nn").param("top", 1);
    report.token_recovery = Some(ratio(hits, mask.len()).unwrap_or(0.0));
    report.evaluated_count = mask.len();
    Ok(report)
}
