//! Alien-language keys: involutive permutations of the non-special token IDs.
//!
//! A key is built in four stages, each driven by its own seed-derived stream:
//!
//! 1. the alienization mask `I_ρ` is a seeded prefix of the permutable IDs;
//! 2. the mask is split into buckets by a seeded round-robin layout over the
//!    *whole* permutable set, so changing ρ does not move tokens between
//!    buckets;
//! 3. within a bucket, tokens are visited in ascending ID order and each
//!    unpaired token is paired with the best-scoring still-available member of
//!    its static top-k cosine neighborhood;
//! 4. tokens left without an available neighbor are paired in seeded random
//!    order, and an odd leftover becomes a recorded fixed point.
//!
//! The pair score trades surface dissimilarity against embedding distance:
//! `S(i, j) = edit(s(i), s(j)) - mu * (1 - cos(e(i), e(j)))`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingStore, NeighborIndex};
use crate::error::{Error, Result};
use crate::par;
use crate::seed;
use crate::text::{levenshtein, normalized_levenshtein};
use crate::vocab::{Fingerprint, TokenId, Vocabulary};

pub const KEY_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditMode {
    /// Levenshtein distance divided by the longer string length.
    #[default]
    Normalized,
    /// Plain Levenshtein distance.
    Raw,
}

impl std::str::FromStr for EditMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(EditMode::Normalized),
            "raw" => Ok(EditMode::Raw),
            other => Err(Error::argument(format!("unknown edit mode {other:?}"))),
        }
    }
}

/// Parameters of a key build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Neighbors retrieved per token.
    pub k: usize,
    /// Weight of the embedding-distance term.
    pub mu: f64,
    /// Fraction of permutable tokens that are remapped.
    pub rho: f64,
    pub seed: u64,
    pub buckets: usize,
    /// Query block width for neighbor retrieval. Does not affect pairing.
    pub greedy_batch: usize,
    pub edit_mode: EditMode,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            k: 100,
            mu: 1.0,
            rho: 1.0,
            seed: 0,
            buckets: 1,
            greedy_batch: 50,
            edit_mode: EditMode::Normalized,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::argument(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::argument(format!("mu must be finite and non-negative, got {}", self.mu)));
        }
        if self.k == 0 {
            return Err(Error::argument("k must be at least 1"));
        }
        if self.buckets == 0 {
            return Err(Error::argument("buckets must be at least 1"));
        }
        if self.greedy_batch == 0 {
            return Err(Error::argument("greedy_batch must be at least 1"));
        }
        Ok(())
    }
}

/// The client-held secret: an involution over the mask `I_ρ`.
#[derive(Clone, Debug, PartialEq)]
pub struct BijectionKey {
    pub version: u32,
    pub vocab_fingerprint: Fingerprint,
    pub config: BuildConfig,
    /// Total over the mask; fixed points map to themselves.
    mapping: BTreeMap<TokenId, TokenId>,
    fixed_points: Vec<TokenId>,
}

impl BijectionKey {
    /// Assemble a key from explicit pairs and fixed points, checking that the
    /// result is an involution.
    pub fn from_pairs(
        fingerprint: Fingerprint,
        config: BuildConfig,
        pairs: &[(TokenId, TokenId)],
        fixed_points: &[TokenId],
    ) -> Result<Self> {
        let mut mapping = BTreeMap::new();
        let mut claim = |id: TokenId, to: TokenId| {
            if mapping.insert(id, to).is_some() {
                Err(Error::format(format!("token id {id} appears in more than one pair")))
            } else {
                Ok(())
            }
        };
        for &(a, b) in pairs {
            if a == b {
                return Err(Error::format(format!("pair ({a}, {a}) maps a token to itself")));
            }
            claim(a, b)?;
            claim(b, a)?;
        }
        for &f in fixed_points {
            claim(f, f)?;
        }
        let mut fixed_points = fixed_points.to_vec();
        fixed_points.sort_unstable();
        Ok(BijectionKey {
            version: KEY_FORMAT_VERSION,
            vocab_fingerprint: fingerprint,
            config,
            mapping,
            fixed_points,
        })
    }

    /// Image of `id`: masked IDs go through the involution, all others are
    /// returned unchanged.
    #[inline]
    pub fn map_id(&self, id: TokenId) -> TokenId {
        self.mapping.get(&id).copied().unwrap_or(id)
    }

    pub fn is_masked(&self, id: TokenId) -> bool {
        self.mapping.contains_key(&id)
    }

    /// The mask `I_ρ`, ascending.
    pub fn mask(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.mapping.keys().copied()
    }

    pub fn mask_len(&self) -> usize {
        self.mapping.len()
    }

    /// Mapping over the mask, fixed points included as `i -> i`.
    pub fn mapping(&self) -> &BTreeMap<TokenId, TokenId> {
        &self.mapping
    }

    /// Unordered pairs `(i, j)` with `i < j`, sorted by `i`.
    pub fn pairs(&self) -> impl Iterator<Item = (TokenId, TokenId)> + '_ {
        self.mapping.iter().filter(|(a, b)| a < b).map(|(a, b)| (*a, *b))
    }

    pub fn fixed_points(&self) -> &[TokenId] {
        &self.fixed_points
    }

    pub fn is_identity(&self) -> bool {
        self.fixed_points.len() == self.mapping.len()
    }

    pub fn ensure_compatible(&self, vocab: &Vocabulary) -> Result<()> {
        if self.vocab_fingerprint != vocab.fingerprint() {
            return Err(Error::Compatibility {
                key: self.vocab_fingerprint,
                vocab: vocab.fingerprint(),
            });
        }
        Ok(())
    }

    /// Check every structural invariant against the vocabulary the key was
    /// built for: involution and closure, no specials, mask size, and at most
    /// one fixed point per odd-sized bucket.
    pub fn check_invariants(&self, vocab: &Vocabulary) -> Result<()> {
        self.ensure_compatible(vocab)?;
        for (&i, &j) in &self.mapping {
            if self.mapping.get(&j) != Some(&i) {
                return Err(Error::format(format!("mapping is not an involution at {i}")));
            }
            if !vocab.contains_id(i) {
                return Err(Error::Reference(format!("mapped id {i} is not in the vocabulary")));
            }
            if vocab.is_special(i) {
                return Err(Error::format(format!("special token {i} is in the mask")));
            }
        }
        let expected: BTreeSet<TokenId> = self.mapping.iter().filter(|(a, b)| a == b).map(|(a, _)| *a).collect();
        if expected.iter().ne(self.fixed_points.iter()) {
            return Err(Error::format("fixed_points does not list exactly the self-mapped ids"));
        }
        let permutable = vocab.permutable_ids();
        let want = mask_size(self.config.rho, permutable.len());
        if self.mapping.len() != want {
            return Err(Error::format(format!(
                "mask has {} ids, expected floor(rho * |I|) = {want}",
                self.mapping.len()
            )));
        }
        let layout = bucket_layout(self.config.seed, self.config.buckets, &permutable);
        let mut per_bucket = vec![(0usize, 0usize); self.config.buckets];
        for id in self.mask() {
            per_bucket[layout[&id]].0 += 1;
        }
        for &f in &self.fixed_points {
            per_bucket[layout[&f]].1 += 1;
        }
        for (b, (size, fixed)) in per_bucket.into_iter().enumerate() {
            if fixed > size % 2 {
                return Err(Error::format(format!(
                    "bucket {b} of size {size} has {fixed} fixed points"
                )));
            }
        }
        Ok(())
    }

    /// Serialize to the key file JSON (compact, newline-terminated).
    pub fn to_json(&self) -> Result<String> {
        let file = KeyFile {
            version: self.version,
            vocab_fingerprint: self.vocab_fingerprint,
            config: self.config.clone(),
            fixed_points: self.fixed_points.clone(),
            mapping: self.pairs().map(|(a, b)| [a, b]).collect(),
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: KeyFile = serde_json::from_str(text)?;
        if file.version != KEY_FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported key version {} (expected {KEY_FORMAT_VERSION})",
                file.version
            )));
        }
        file.config.validate().map_err(|e| Error::format(format!("invalid config: {e}")))?;
        if file.mapping.iter().any(|[a, b]| a >= b) {
            return Err(Error::format("mapping pairs must satisfy i < j"));
        }
        if file.mapping.windows(2).any(|w| w[0][0] >= w[1][0]) {
            return Err(Error::format("mapping pairs must be sorted by i"));
        }
        if file.fixed_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format("fixed_points must be sorted and unique"));
        }
        let pairs: Vec<(TokenId, TokenId)> = file.mapping.iter().map(|[a, b]| (*a, *b)).collect();
        BijectionKey::from_pairs(file.vocab_fingerprint, file.config, &pairs, &file.fixed_points)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BijectionKey::from_json(&text)
    }

    /// A uniformly random pairing over the same mask as `build_key` would use,
    /// as a quality baseline.
    pub fn random(vocab: &Vocabulary, config: &BuildConfig, pairing_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut mask = select_mask(config.seed, config.rho, &vocab.permutable_ids());
        let mut rng = seed::stream(pairing_seed, "alien/random-baseline/v1", 0);
        mask.shuffle(&mut rng);
        let (pairs, fixed) = pair_adjacent(&mask);
        BijectionKey::from_pairs(vocab.fingerprint(), config.clone(), &pairs, &fixed)
    }
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    version: u32,
    vocab_fingerprint: Fingerprint,
    config: BuildConfig,
    fixed_points: Vec<TokenId>,
    mapping: Vec<[TokenId; 2]>,
}

/// Combine an edit distance and a cosine similarity into a pair score.
#[inline]
pub fn score_components(edit: f64, cosine: f64, mu: f64) -> f64 {
    edit - mu * (1.0 - cosine)
}

/// `S(i, j)`: surface edit distance minus `mu` times cosine distance.
pub fn pair_score(
    i: TokenId,
    j: TokenId,
    vocab: &Vocabulary,
    store: &EmbeddingStore,
    mu: f64,
    mode: EditMode,
) -> Result<f64> {
    if i == j {
        return Err(Error::argument(format!("pair_score needs two distinct ids, got {i} twice")));
    }
    for id in [i, j] {
        if vocab.is_special(id) {
            return Err(Error::argument(format!("token {id} is special")));
        }
    }
    let a = vocab
        .token_bytes(i)
        .ok_or_else(|| Error::Reference(format!("unknown token id {i}")))?;
    let b = vocab
        .token_bytes(j)
        .ok_or_else(|| Error::Reference(format!("unknown token id {j}")))?;
    Ok(score_components(edit_distance(a, b, mode), store.cosine(i, j)?, mu))
}

#[inline]
fn edit_distance(a: &[u8], b: &[u8], mode: EditMode) -> f64 {
    match mode {
        EditMode::Normalized => normalized_levenshtein(a, b),
        EditMode::Raw => levenshtein(a, b) as f64,
    }
}

/// `floor(rho * n)`.
pub fn mask_size(rho: f64, n: usize) -> usize {
    ((rho * n as f64).floor() as usize).min(n)
}

/// Seeded subset of `floor(rho * |permutable|)` IDs, returned ascending.
pub fn select_mask(seed: u64, rho: f64, permutable: &[TokenId]) -> Vec<TokenId> {
    let mut ids = permutable.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let take = mask_size(rho.clamp(0.0, 1.0), ids.len());
    let mut rng = seed::stream(seed, seed::MASK_DOMAIN, 0);
    ids.shuffle(&mut rng);
    ids.truncate(take);
    ids.sort_unstable();
    ids
}

/// Bucket index for every permutable ID: a seeded shuffle of the sorted set
/// dealt round-robin, so bucket sizes differ by at most one.
pub fn bucket_layout(seed: u64, buckets: usize, permutable: &[TokenId]) -> HashMap<TokenId, usize> {
    let mut ids = permutable.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = seed::stream(seed, seed::BUCKET_DOMAIN, 0);
    ids.shuffle(&mut rng);
    ids.into_iter()
        .enumerate()
        .map(|(pos, id)| (id, pos % buckets.max(1)))
        .collect()
}

/// Build a key for `vocab` from `store` under `config`.
pub fn build_key(vocab: &Vocabulary, store: &EmbeddingStore, config: &BuildConfig) -> Result<BijectionKey> {
    config.validate()?;
    let permutable = vocab.permutable_ids();
    let mask = select_mask(config.seed, config.rho, &permutable);
    let layout = bucket_layout(config.seed, config.buckets, &permutable);
    let mut cells: Vec<Vec<TokenId>> = vec![Vec::new(); config.buckets];
    for &id in &mask {
        cells[layout[&id]].push(id);
    }
    // mask is ascending, so every cell is too
    let cell_ids: Vec<usize> = (0..cells.len()).collect();
    let results = par::map(&cell_ids, |&c| pair_cell(&cells[c], c, vocab, store, config));

    let mut pairs = Vec::with_capacity(mask.len() / 2);
    let mut fixed = Vec::new();
    for r in results {
        let (p, f) = r?;
        pairs.extend(p);
        fixed.extend(f);
    }
    BijectionKey::from_pairs(vocab.fingerprint(), config.clone(), &pairs, &fixed)
}

type CellPairing = (Vec<(TokenId, TokenId)>, Option<TokenId>);

fn pair_cell(
    cell: &[TokenId],
    cell_index: usize,
    vocab: &Vocabulary,
    store: &EmbeddingStore,
    config: &BuildConfig,
) -> Result<CellPairing> {
    if cell.is_empty() {
        return Ok((Vec::new(), None));
    }
    let index = NeighborIndex::new(store, cell)?;
    let neighbors = if cell.len() > 1 {
        index.all_members(config.k, config.greedy_batch)?
    } else {
        vec![Vec::new()]
    };
    let position: HashMap<TokenId, usize> = cell.iter().enumerate().map(|(p, &id)| (id, p)).collect();
    let mut available = vec![true; cell.len()];
    let mut pairs = Vec::with_capacity(cell.len() / 2);

    for (p, &i) in cell.iter().enumerate() {
        if !available[p] {
            continue;
        }
        let si = vocab.token_bytes(i).expect("mask ids come from the vocabulary");
        let mut best: Option<(f64, TokenId, usize)> = None;
        for nb in &neighbors[p] {
            let q = position[&nb.id];
            if !available[q] {
                continue;
            }
            let sj = vocab.token_bytes(nb.id).expect("mask ids come from the vocabulary");
            let score = score_components(edit_distance(si, sj, config.edit_mode), store.cosine(i, nb.id)?, config.mu);
            let better = match best {
                None => true,
                Some((bs, bj, _)) => score > bs || (score == bs && nb.id < bj),
            };
            if better {
                best = Some((score, nb.id, q));
            }
        }
        if let Some((_, j, q)) = best {
            available[p] = false;
            available[q] = false;
            pairs.push((i, j));
        }
    }

    let mut leftovers: Vec<TokenId> = cell
        .iter()
        .zip(&available)
        .filter(|(_, a)| **a)
        .map(|(id, _)| *id)
        .collect();
    let mut rng = seed::stream(config.seed, seed::FALLBACK_DOMAIN, cell_index as u64);
    leftovers.shuffle(&mut rng);
    let (extra, fixed) = pair_adjacent(&leftovers);
    pairs.extend(extra);
    Ok((pairs, fixed.first().copied()))
}

fn pair_adjacent(ids: &[TokenId]) -> (Vec<(TokenId, TokenId)>, Vec<TokenId>) {
    let pairs = ids.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    let fixed = if ids.len() % 2 == 1 { vec![ids[ids.len() - 1]] } else { Vec::new() };
    (pairs, fixed)
}

/// The objective summed over the mask, each pair counted once per direction.
/// Fixed points contribute zero.
pub fn objective_value(key: &BijectionKey, vocab: &Vocabulary, store: &EmbeddingStore) -> Result<f64> {
    key.ensure_compatible(vocab)?;
    let mut total = 0.0;
    for (i, j) in key.pairs() {
        total += 2.0 * pair_score(i, j, vocab, store, key.config.mu, key.config.edit_mode)?;
    }
    Ok(total)
}

/// Percentage of jointly masked IDs that both keys map to the same image.
/// Zero when the masks do not intersect.
pub fn key_overlap(a: &BijectionKey, b: &BijectionKey) -> Result<f64> {
    if a.vocab_fingerprint != b.vocab_fingerprint {
        return Err(Error::Compatibility {
            key: b.vocab_fingerprint,
            vocab: a.vocab_fingerprint,
        });
    }
    let (mut shared, mut same) = (0usize, 0usize);
    for (i, ai) in a.mapping() {
        if let Some(bi) = b.mapping().get(i) {
            shared += 1;
            same += usize::from(ai == bi);
        }
    }
    Ok(if shared == 0 { 0.0 } else { 100.0 * same as f64 / shared as f64 })
}

/// Surface-level summary of how different mapped tokens look.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpacityReport {
    pub mask_size: usize,
    pub pair_count: usize,
    /// Mean normalized edit distance over mapped pairs.
    pub mean_edit: f64,
    pub median_edit: f64,
    /// Fraction of masked tokens whose image has the same surface string.
    pub unchanged_fraction: f64,
    pub fixed_points: usize,
    /// Set when the key maps nothing (identity translation).
    pub empty_mapping: bool,
}

pub fn opacity_report(key: &BijectionKey, vocab: &Vocabulary) -> Result<OpacityReport> {
    key.ensure_compatible(vocab)?;
    let bytes = |id: TokenId| {
        vocab
            .token_bytes(id)
            .ok_or_else(|| Error::Reference(format!("unknown token id {id}")))
    };
    let mut edits = Vec::new();
    for (i, j) in key.pairs() {
        edits.push(normalized_levenshtein(bytes(i)?, bytes(j)?));
    }
    let mut unchanged = 0usize;
    for (&i, &j) in key.mapping() {
        unchanged += usize::from(bytes(i)? == bytes(j)?);
    }
    edits.sort_by(f64::total_cmp);
    let mean_edit = if edits.is_empty() { 0.0 } else { edits.iter().sum::<f64>() / edits.len() as f64 };
    let median_edit = match edits.len() {
        0 => 0.0,
        n if n % 2 == 1 => edits[n / 2],
        n => (edits[n / 2 - 1] + edits[n / 2]) / 2.0,
    };
    let mask_size = key.mask_len();
    Ok(OpacityReport {
        mask_size,
        pair_count: edits.len(),
        mean_edit,
        median_edit,
        unchanged_fraction: if mask_size == 0 { 0.0 } else { unchanged as f64 / mask_size as f64 },
        fixed_points: key.fixed_points().len(),
        empty_mapping: edits.is_empty(),
    })
}
