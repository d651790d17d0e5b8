//! Seeded synthetic fixtures: vocabularies, embeddings and corpora.
//!
//! Used by the test suites, the benches and the `synth` CLI subcommand. All
//! generators are deterministic in their seed.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Zipf};

use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

pub const SPECIAL_TOKENS: [&str; 3] = ["<s>", "</s>", "<pad>"];

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// A byte-complete vocabulary of exactly `size` entries.
///
/// IDs `0..3` are the specials, `3..259` the 256 single bytes, and the rest
/// distinct lowercase words of length 2 to 10, some with a leading space.
pub fn byte_complete_vocab(size: usize, seed: u64) -> Result<Vocabulary> {
    let base = SPECIAL_TOKENS.len() + 256;
    if size < base {
        return Err(Error::argument(format!("vocabulary size must be at least {base}")));
    }
    let mut entries: Vec<(Vec<u8>, TokenId)> = Vec::with_capacity(size);
    let mut seen: HashSet<Vec<u8>> = HashSet::with_capacity(size);
    for s in SPECIAL_TOKENS {
        seen.insert(s.as_bytes().to_vec());
        entries.push((s.as_bytes().to_vec(), entries.len() as TokenId));
    }
    for b in 0..=255u8 {
        seen.insert(vec![b]);
        entries.push((vec![b], entries.len() as TokenId));
    }
    let mut r = rng(seed);
    while entries.len() < size {
        let len = r.random_range(2..=10);
        let mut w: Vec<u8> = (0..len).map(|_| r.random_range(b'a'..=b'z')).collect();
        if r.random_bool(0.3) {
            w.insert(0, b' ');
        }
        if seen.insert(w.clone()) {
            let id = entries.len() as TokenId;
            entries.push((w, id));
        }
    }
    Vocabulary::new(entries, 0..SPECIAL_TOKENS.len() as TokenId)
}

/// Gaussian rows with unit-variance coordinates.
pub fn random_embeddings(n: usize, d: usize, seed: u64) -> Result<EmbeddingStore> {
    let mut r = rng(seed);
    let normal = Normal::new(0.0f32, 1.0).expect("valid normal");
    let data = (0..n * d).map(|_| normal.sample(&mut r)).collect();
    EmbeddingStore::new(n, d, data)
}

/// Rows drawn around `clusters` random unit centers with per-coordinate noise
/// `spread / sqrt(d)`. Each row picks its cluster uniformly.
pub fn clustered_embeddings(n: usize, d: usize, clusters: usize, spread: f32, seed: u64) -> Result<EmbeddingStore> {
    if clusters == 0 || d == 0 {
        return Err(Error::argument("clusters and dimension must be positive"));
    }
    let mut r = rng(seed);
    let normal = Normal::new(0.0f32, 1.0).expect("valid normal");
    let mut centers: Vec<Vec<f32>> = Vec::with_capacity(clusters);
    for _ in 0..clusters {
        let mut c: Vec<f32> = (0..d).map(|_| normal.sample(&mut r)).collect();
        let norm = c.iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
        c.iter_mut().for_each(|x| *x /= norm);
        centers.push(c);
    }
    let scale = spread / (d as f32).sqrt();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = &centers[r.random_range(0..clusters)];
        data.extend(c.iter().map(|x| x + scale * normal.sample(&mut r)));
    }
    EmbeddingStore::new(n, d, data)
}

/// Random frequency ranking of `ids`: the first element is the most frequent.
pub fn zipf_ranking(ids: &[TokenId], seed: u64) -> Vec<TokenId> {
    let mut ranked = ids.to_vec();
    ranked.shuffle(&mut rng(seed));
    ranked
}

/// Sequences whose tokens are drawn i.i.d. from a Zipf law over `ranking`.
pub fn zipf_corpus(
    ranking: &[TokenId],
    exponent: f64,
    sequences: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<TokenSequence>> {
    if ranking.is_empty() {
        return Err(Error::argument("ranking is empty"));
    }
    let zipf = Zipf::new(ranking.len() as f64, exponent).map_err(|e| Error::argument(e.to_string()))?;
    let mut r = rng(seed);
    Ok((0..sequences)
        .map(|_| {
            (0..length)
                .map(|_| ranking[zipf.sample(&mut r) as usize - 1])
                .collect()
        })
        .collect())
}

/// Sequences of tokens drawn uniformly from `ids`.
pub fn uniform_corpus(ids: &[TokenId], sequences: usize, length: usize, seed: u64) -> Result<Vec<TokenSequence>> {
    if ids.is_empty() {
        return Err(Error::argument("no ids to sample from"));
    }
    let mut r = rng(seed);
    Ok((0..sequences)
        .map(|_| (0..length).map(|_| ids[r.random_range(0..ids.len())]).collect())
        .collect())
}

/// Class-bigram language model over a Zipf-ranked vocabulary.
///
/// Tokens are dealt into `classes` classes by rank, so every class mixes
/// frequent and rare tokens. Each class has a sparse successor distribution
/// over `fanout` other classes; within a class tokens follow a Zipf law with
/// `exponent`. This gives corpora with real positional structure while
/// keeping the per-token context of rare tokens thin, as in natural text.
#[derive(Clone, Debug)]
pub struct ClassBigram {
    members: Vec<Vec<TokenId>>,
    successors: Vec<Vec<usize>>,
    successor_pick: Zipf<f64>,
    member_pick: Vec<Zipf<f64>>,
}

impl ClassBigram {
    pub fn new(ranking: &[TokenId], classes: usize, fanout: usize, exponent: f64, seed: u64) -> Result<Self> {
        if classes == 0 || fanout == 0 || ranking.len() < classes {
            return Err(Error::argument("need at least one token per class and a positive fanout"));
        }
        let mut members = vec![Vec::new(); classes];
        for (rank, &id) in ranking.iter().enumerate() {
            members[rank % classes].push(id);
        }
        let mut r = rng(seed);
        let successors = (0..classes)
            .map(|_| (0..fanout).map(|_| r.random_range(0..classes)).collect())
            .collect();
        let zipf = |n: usize| Zipf::new(n as f64, exponent).map_err(|e| Error::argument(e.to_string()));
        let member_pick = members.iter().map(|m| zipf(m.len())).collect::<Result<Vec<_>>>()?;
        Ok(ClassBigram {
            successor_pick: zipf(fanout)?,
            members,
            successors,
            member_pick,
        })
    }

    pub fn sample(&self, sequences: usize, length: usize, seed: u64) -> Vec<TokenSequence> {
        let mut r = rng(seed);
        (0..sequences)
            .map(|_| {
                let mut class = r.random_range(0..self.members.len());
                (0..length)
                    .map(|_| {
                        let m = &self.members[class];
                        let id = m[self.member_pick[class].sample(&mut r) as usize - 1];
                        class = self.successors[class][self.successor_pick.sample(&mut r) as usize - 1];
                        id
                    })
                    .collect()
            })
            .collect()
    }
}

/// Random byte strings mixing ASCII words, whitespace and multi-byte UTF-8.
pub fn random_text(max_len: usize, rng: &mut impl Rng) -> Vec<u8> {
    const PIECES: [&str; 8] = [" ", "\n", "é", "漢", "🙂", "\t", "<s>", "the"];
    let len = rng.random_range(0..=max_len);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        match rng.random_range(0..4) {
            0 => out.extend_from_slice(PIECES[rng.random_range(0..PIECES.len())].as_bytes()),
            1 => out.push(rng.random()),
            _ => out.push(rng.random_range(b'a'..=b'z')),
        }
    }
    out
}
