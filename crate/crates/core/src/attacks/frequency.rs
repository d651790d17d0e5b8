//! Rank-matching frequency analysis over token IDs.

use std::collections::HashMap;

use super::{ratio, AttackReport, GroundTruth};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, TokenSequence};

/// Distinct IDs ordered by count descending, ties by ascending ID.
pub fn rank_by_frequency(corpus: &[TokenSequence]) -> Vec<(TokenId, usize)> {
    let mut counts: HashMap<TokenId, usize> = HashMap::new();
    for id in corpus.iter().flat_map(|s| s.iter()) {
        *counts.entry(*id).or_default() += 1;
    }
    let mut ranked: Vec<(TokenId, usize)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Hypothesize that the r-th most frequent alien token is the r-th most
/// frequent reference token, for the first `top_m` ranks.
pub fn frequency_hypotheses(
    alien: &[TokenSequence],
    reference: &[TokenSequence],
    top_m: usize,
) -> Result<Vec<(TokenId, TokenId)>> {
    let a = rank_by_frequency(alien);
    let r = rank_by_frequency(reference);
    if a.is_empty() || r.is_empty() {
        return Err(Error::argument("frequency attack needs two non-empty corpora"));
    }
    Ok(a.iter().zip(&r).take(top_m).map(|(x, y)| (x.0, y.0)).collect())
}

/// Frequency matching scored against the true mapping. `token_recovery`
/// counts correct hypotheses on permuted tokens over the whole mask;
/// `head_recovery` is the hit rate among the hypotheses themselves.
pub fn frequency_attack(
    alien: &[TokenSequence],
    reference: &[TokenSequence],
    truth: &dyn GroundTruth,
    top_m: usize,
) -> Result<AttackReport> {
    let hyps = frequency_hypotheses(alien, reference, top_m)?;
    let correct: Vec<bool> = hyps.iter().map(|&(a, p)| truth.plaintext_of(a) == p).collect();
    let permuted_hits = hyps
        .iter()
        .zip(&correct)
        .filter(|((a, _), ok)| **ok && truth.is_permuted(*a))
        .count();
    let mask = truth.permuted_ids().len();
    let mut report = AttackReport::new("frequency")
        .param("top_m", top_m)
        .param("hypotheses", hyps.len());
    report.token_recovery = Some(ratio(permuted_hits, mask).unwrap_or(0.0));
    report.head_recovery = ratio(correct.iter().filter(|c| **c).count(), hyps.len());
    report.evaluated_count = mask;
    Ok(report)
}
