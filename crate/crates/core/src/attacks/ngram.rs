//! Known-plaintext extrapolation through n-gram context.
//!
//! Leaked aligned pairs give the observer the true image of every alien token
//! they contain. For an alien token that never occurs in the leak, the
//! observer collects its context signature: the multiset of plaintext IDs of
//! already-known tokens within `n - 1` positions on either side. Each
//! candidate plaintext token (one not already claimed by the known map) gets
//! the same kind of signature from a public plaintext corpus. The guess is the candidate whose signature
//! has the largest multiset intersection with the alien token's, ties broken
//! by reference frequency and then by ascending ID. When no candidate shares
//! a feature the most frequent candidate is guessed.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::{ratio, AttackReport, GroundTruth};
use crate::error::{Error, Result};
use crate::par;
use crate::vocab::{TokenId, TokenSequence};

/// A plaintext sequence and its alien encoding, position-aligned.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignedPair {
    pub plain: TokenSequence,
    pub alien: TokenSequence,
}

/// Context feature: the plaintext identity of a known neighbor.
type Feature = TokenId;

/// Output of the inference step.
#[derive(Clone, Debug, Default)]
pub struct NgramInference {
    /// Alien → plaintext pairs read directly off the leak.
    pub known: HashMap<TokenId, TokenId>,
    /// Extrapolated guesses for alien tokens absent from the leak.
    pub guesses: BTreeMap<TokenId, TokenId>,
}

const UNSEEN_BLOCK: usize = 256;

/// Run the attack without any access to the key.
pub fn ngram_inference(
    leaked: &[AlignedPair],
    eval_alien: &[TokenSequence],
    reference: &[TokenSequence],
    n: usize,
) -> Result<NgramInference> {
    if n < 2 {
        return Err(Error::argument(format!("n-gram order must be at least 2, got {n}")));
    }
    let window = n - 1;

    let mut known: HashMap<TokenId, TokenId> = HashMap::new();
    for (k, pair) in leaked.iter().enumerate() {
        if pair.plain.len() != pair.alien.len() {
            return Err(Error::format(format!(
                "leaked pair {k} is misaligned: {} plaintext vs {} alien tokens",
                pair.plain.len(),
                pair.alien.len()
            )));
        }
        for (&a, &p) in pair.alien.iter().zip(pair.plain.iter()) {
            if let Some(prev) = known.insert(a, p) {
                if prev != p {
                    return Err(Error::format(format!(
                        "leaked pairs disagree on alien token {a} ({prev} vs {p})"
                    )));
                }
            }
        }
    }
    let claimed: HashSet<TokenId> = known.values().copied().collect();

    // alien-side signatures of unseen tokens
    let mut alien_sigs: BTreeMap<TokenId, HashMap<Feature, u32>> = BTreeMap::new();
    for seq in eval_alien {
        for (t, &a) in seq.iter().enumerate() {
            if known.contains_key(&a) {
                continue;
            }
            let sig = alien_sigs.entry(a).or_default();
            for_each_neighbor(seq, t, window, |b| {
                if let Some(&p) = known.get(&b) {
                    *sig.entry(p).or_default() += 1;
                }
            });
        }
    }
    if alien_sigs.is_empty() {
        return Ok(NgramInference {
            known,
            guesses: BTreeMap::new(),
        });
    }

    // reference-side signatures of unclaimed plaintext tokens
    let mut cand_index: HashMap<TokenId, usize> = HashMap::new();
    let mut cand_ids: Vec<TokenId> = Vec::new();
    let mut cand_freq: Vec<u64> = Vec::new();
    let mut cand_sigs: Vec<HashMap<Feature, u32>> = Vec::new();
    for seq in reference {
        for (t, &p) in seq.iter().enumerate() {
            if claimed.contains(&p) {
                continue;
            }
            let c = *cand_index.entry(p).or_insert_with(|| {
                cand_ids.push(p);
                cand_freq.push(0);
                cand_sigs.push(HashMap::new());
                cand_ids.len() - 1
            });
            cand_freq[c] += 1;
            let sig = &mut cand_sigs[c];
            for_each_neighbor(seq, t, window, |q| {
                if claimed.contains(&q) {
                    *sig.entry(q).or_default() += 1;
                }
            });
        }
    }
    if cand_ids.is_empty() {
        return Ok(NgramInference {
            known,
            guesses: BTreeMap::new(),
        });
    }
    let mut postings: HashMap<Feature, Vec<(u32, u32)>> = HashMap::new();
    for (c, sig) in cand_sigs.iter().enumerate() {
        for (&f, &count) in sig {
            postings.entry(f).or_default().push((c as u32, count));
        }
    }
    drop(cand_sigs);

    // better candidate: higher score, then higher frequency, then lower id
    let better = |c: usize, score: u64, best: Option<(usize, u64)>| match best {
        None => true,
        Some((b, bs)) => {
            (score, cand_freq[c], std::cmp::Reverse(cand_ids[c]))
                > (bs, cand_freq[b], std::cmp::Reverse(cand_ids[b]))
        }
    };
    let fallback = (0..cand_ids.len())
        .fold(None, |best, c| if better(c, 0, best) { Some((c, 0)) } else { best })
        .map(|(c, _)| cand_ids[c])
        .expect("candidate set is non-empty");

    let unseen: Vec<(TokenId, HashMap<Feature, u32>)> = alien_sigs.into_iter().collect();
    let blocks = par::map_chunks(&unseen, UNSEEN_BLOCK, |_, block| {
        let mut acc = vec![0u64; cand_ids.len()];
        let mut touched: Vec<usize> = Vec::new();
        block
            .iter()
            .map(|(a, sig)| {
                for (f, &count) in sig {
                    if let Some(list) = postings.get(f) {
                        for &(c, cc) in list {
                            let c = c as usize;
                            if acc[c] == 0 {
                                touched.push(c);
                            }
                            acc[c] += u64::from(count.min(cc));
                        }
                    }
                }
                let mut best: Option<(usize, u64)> = None;
                for &c in &touched {
                    if better(c, acc[c], best) {
                        best = Some((c, acc[c]));
                    }
                }
                for &c in &touched {
                    acc[c] = 0;
                }
                touched.clear();
                (*a, best.map_or(fallback, |(c, _)| cand_ids[c]))
            })
            .collect::<Vec<_>>()
    });
    Ok(NgramInference {
        known,
        guesses: blocks.into_iter().flatten().collect(),
    })
}

fn for_each_neighbor(seq: &[TokenId], t: usize, window: usize, mut f: impl FnMut(TokenId)) {
    let lo = t.saturating_sub(window);
    let hi = (t + window).min(seq.len() - 1);
    for (u, &id) in seq.iter().enumerate().take(hi + 1).skip(lo) {
        if u != t {
            f(id);
        }
    }
}

/// N-gram extrapolation scored against the true mapping.
///
/// Evaluated tokens are the distinct permuted alien IDs that occur in
/// `eval_alien`. `token_recovery` covers all of them (leaked ones count as
/// recovered when the leak is correct); `bijection_recovery` covers only those
/// absent from the leak.
pub fn ngram_attack(
    leaked: &[AlignedPair],
    eval_alien: &[TokenSequence],
    reference: &[TokenSequence],
    n: usize,
    truth: &dyn GroundTruth,
) -> Result<AttackReport> {
    let inference = ngram_inference(leaked, eval_alien, reference, n)?;
    let evaluated: std::collections::BTreeSet<TokenId> = eval_alien
        .iter()
        .flat_map(|s| s.iter().copied())
        .filter(|&a| truth.is_permuted(a))
        .collect();
    let (mut hits, mut unseen, mut unseen_hits) = (0usize, 0usize, 0usize);
    for &a in &evaluated {
        let want = truth.plaintext_of(a);
        if let Some(&p) = inference.known.get(&a) {
            hits += usize::from(p == want);
        } else {
            unseen += 1;
            let ok = inference.guesses.get(&a) == Some(&want);
            hits += usize::from(ok);
            unseen_hits += usize::from(ok);
        }
    }
    let mut report = AttackReport::new("ngram")
        .param("n", n)
        .param("pairs", leaked.len())
        .param("known_tokens", inference.known.len())
        .param("unseen_tokens", unseen);
    report.token_recovery = Some(ratio(hits, evaluated.len()).unwrap_or(0.0));
    report.bijection_recovery = ratio(unseen_hits, unseen);
    report.evaluated_count = evaluated.len();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(ids: &[TokenId]) -> TokenSequence {
        ids.to_vec().into()
    }

    #[test]
    fn argument_checks() {
        assert!(matches!(ngram_inference(&[], &[], &[], 1), Err(Error::Argument(_))));
        let bad = AlignedPair {
            plain: seq(&[1, 2]),
            alien: seq(&[3]),
        };
        assert!(matches!(ngram_inference(&[bad], &[], &[], 2), Err(Error::Format(_))));
    }

    #[test]
    fn context_identifies_unique_neighbor() {
        // plaintext "1 X 2" where X = 7; alien swaps 1<->11, 2<->12, 7<->17
        let leaked = vec![AlignedPair {
            plain: seq(&[1, 2]),
            alien: seq(&[11, 12]),
        }];
        let eval = vec![seq(&[11, 17, 12])];
        let reference = vec![seq(&[1, 7, 2]), seq(&[2, 8, 2, 8])];
        let inf = ngram_inference(&leaked, &eval, &reference, 2).unwrap();
        assert_eq!(inf.known.get(&11), Some(&1));
        assert_eq!(inf.guesses.get(&17), Some(&7));
    }
}
