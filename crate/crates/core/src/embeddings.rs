//! Token embedding matrices, proxy embeddings and exact top-k cosine search.
//!
//! Rows are indexed by token ID. Retrieval is exact: candidate rows are
//! gathered into a contiguous, L2-normalized matrix and scanned in tiles, with
//! queries processed in blocks so each tile is reused across a whole block.
//! Inner products accumulate in `f64`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::par;
use crate::vocab::{reference_tokenize, TokenId, Vocabulary};

const MAGIC: &[u8; 4] = b"AEMB";
const FORMAT_VERSION: u32 = 1;
/// Candidate rows scanned per tile.
const TILE_ROWS: usize = 256;

/// Dense per-token vectors, `n` rows of dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    n: usize,
    d: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingStore {
    /// Wrap a row-major `n × d` buffer. Every entry must be finite.
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if d == 0 {
            return Err(Error::format("embedding dimension must be positive"));
        }
        if data.len() != n * d {
            return Err(Error::format(format!(
                "expected {} values for {n}x{d}, got {}",
                n * d,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(format!(
                "non-finite value in row {} column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(EmbeddingStore {
            n,
            d,
            data,
            normalized: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::format(format!("row {bad} has dimension {} (expected {d})", rows[bad].len())));
        }
        EmbeddingStore::new(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, id: TokenId) -> Option<&[f32]> {
        let i = id as usize;
        (i < self.n).then(|| &self.data[i * self.d..(i + 1) * self.d])
    }

    fn row_or_err(&self, id: TokenId) -> Result<&[f32]> {
        self.row(id).ok_or_else(|| Error::Coverage {
            position: id as usize,
            detail: format!("no embedding row for token id {id} (store has {} rows)", self.n),
        })
    }

    /// Scale every row to unit L2 norm.
    pub fn normalize(&self) -> Result<EmbeddingStore> {
        let mut data = self.data.clone();
        for (r, row) in data.chunks_exact_mut(self.d).enumerate() {
            normalize_row(row).map_err(|_| Error::DegenerateInput(format!("row {r} has zero norm")))?;
        }
        Ok(EmbeddingStore {
            n: self.n,
            d: self.d,
            data,
            normalized: true,
        })
    }

    /// Multiply every entry by `c`.
    pub fn scaled(&self, c: f32) -> Result<EmbeddingStore> {
        EmbeddingStore::new(self.n, self.d, self.data.iter().map(|v| v * c).collect())
    }

    /// Cosine similarity between two rows.
    pub fn cosine(&self, a: TokenId, b: TokenId) -> Result<f64> {
        let (ra, rb) = (self.row_or_err(a)?, self.row_or_err(b)?);
        let denom = (dot(ra, ra) * dot(rb, rb)).sqrt();
        if denom == 0.0 {
            return Err(Error::DegenerateInput(format!(
                "zero-norm embedding among ids {a}, {b}"
            )));
        }
        Ok(dot(ra, rb) / denom)
    }

    /// Canonical binary encoding: `AEMB`, u32 version, u32 n, u32 d, then
    /// `n·d` little-endian f32 values, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::format("missing AEMB header"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported embedding format version {version}")));
        }
        let (n, d) = (word(8) as usize, word(12) as usize);
        let body = &bytes[16..];
        if body.len() != n * d * 4 {
            return Err(Error::format(format!(
                "payload is {} bytes, header declares {n}x{d}",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingStore::new(n, d, data)
    }

    /// Parse the text format: a header line `n d`, then `n` lines of
    /// `token_id v1 ... vd`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::format("empty embedding file"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::format(format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        let [n, d] = dims[..] else {
            return Err(Error::format(format!("header must be \"n d\", got {header:?}")));
        };
        let mut data = vec![0f32; n * d];
        let mut seen = vec![false; n];
        let mut rows = 0;
        for (lineno, line) in lines.enumerate() {
            let mut fields = line.split_whitespace();
            let id: usize = fields
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::format(format!("row {lineno}: missing token id")))?;
            if id >= n || seen[id] {
                return Err(Error::format(format!("row {lineno}: token id {id} out of range or repeated")));
            }
            let values: Vec<f32> = fields
                .map(|t| t.parse::<f32>().map_err(|_| Error::format(format!("row {lineno}: bad value {t:?}"))))
                .collect::<Result<_>>()?;
            if values.len() != d {
                return Err(Error::format(format!(
                    "row {lineno}: dimension {} does not match header {d}",
                    values.len()
                )));
            }
            data[id * d..(id + 1) * d].copy_from_slice(&values);
            seen[id] = true;
            rows += 1;
        }
        if rows != n {
            return Err(Error::format(format!("header declares {n} rows, found {rows}")));
        }
        EmbeddingStore::new(n, d, data)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.d);
        for (i, row) in self.data.chunks_exact(self.d).enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Load a binary (`AEMB`) or text embedding file.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        EmbeddingStore::from_bytes(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::format("embedding file is neither AEMB nor UTF-8 text"))?;
        EmbeddingStore::from_text(text)
    }
}

fn normalize_row(row: &mut [f32]) -> std::result::Result<(), ()> {
    let norm = dot(row, row).sqrt();
    if norm == 0.0 {
        return Err(());
    }
    for v in row.iter_mut() {
        *v = (*v as f64 / norm) as f32;
    }
    Ok(())
}

/// Inner product with f64 accumulation over four lanes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Proxy vector for a target token string: the mean of the proxy vectors of
/// its subpieces under the proxy vocabulary's tokenizer.
pub fn proxy_embed(token: &[u8], proxy_vocab: &Vocabulary, proxy_store: &EmbeddingStore) -> Result<Vec<f32>> {
    let pieces = reference_tokenize(token, proxy_vocab)?;
    if pieces.is_empty() {
        return Err(Error::Coverage {
            position: 0,
            detail: "empty token string has no subpieces".into(),
        });
    }
    let mut acc = vec![0f64; proxy_store.dim()];
    for &id in pieces.iter() {
        for (a, v) in acc.iter_mut().zip(proxy_store.row_or_err(id)?) {
            *a += *v as f64;
        }
    }
    let count = pieces.len() as f64;
    Ok(acc.into_iter().map(|v| (v / count) as f32).collect())
}

/// Proxy embeddings for every token of `target`, indexed by target ID.
/// Rows for IDs absent from the target vocabulary are zero.
pub fn proxy_store(target: &Vocabulary, proxy_vocab: &Vocabulary, proxy: &EmbeddingStore) -> Result<EmbeddingStore> {
    let n = target.max_id().map_or(0, |m| m as usize + 1);
    let tokens: Vec<(TokenId, &[u8])> = target.iter().collect();
    let rows = par::map(&tokens, |(_, bytes)| proxy_embed(bytes, proxy_vocab, proxy));
    let mut data = vec![0f32; n * proxy.dim()];
    for ((id, _), row) in tokens.iter().zip(rows) {
        let at = *id as usize * proxy.dim();
        data[at..at + proxy.dim()].copy_from_slice(&row?);
    }
    EmbeddingStore::new(n, proxy.dim(), data)
}

/// A retrieved neighbor and its cosine similarity to the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: TokenId,
    pub cosine: f64,
}

/// Heap entry ordered so that the *worst* neighbor is the greatest.
#[derive(Clone, Copy, PartialEq)]
struct Ranked(Neighbor);

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        // better = higher cosine, then lower id
        other
            .0
            .cosine
            .total_cmp(&self.0.cosine)
            .then(self.0.id.cmp(&other.0.id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded selection of the `k` best neighbors.
struct TopK {
    k: usize,
    heap: BinaryHeap<Ranked>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, id: TokenId, cosine: f64) {
        // fold -0.0 into +0.0 so exact ties compare equal
        let cand = Ranked(Neighbor { id, cosine: cosine + 0.0 });
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(worst) = self.heap.peek() {
            if cand < *worst {
                self.heap.pop();
                self.heap.push(cand);
            }
        }
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        let mut v: Vec<Ranked> = self.heap.into_vec();
        v.sort();
        v.into_iter().map(|r| r.0).collect()
    }
}

/// Candidate rows gathered into a contiguous L2-normalized matrix.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    ids: Vec<TokenId>,
    d: usize,
    rows: Vec<f32>,
}

impl NeighborIndex {
    /// Gather and normalize the rows for `ids`. Missing rows are a coverage
    /// error and zero rows a degenerate-input error.
    pub fn new(store: &EmbeddingStore, ids: &[TokenId]) -> Result<Self> {
        let d = store.dim();
        let mut rows = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            rows.extend_from_slice(store.row_or_err(id)?);
            let start = rows.len() - d;
            normalize_row(&mut rows[start..])
                .map_err(|_| Error::DegenerateInput(format!("embedding for token id {id} has zero norm")))?;
        }
        Ok(NeighborIndex {
            ids: ids.to_vec(),
            d,
            rows,
        })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Normalized row of the `pos`-th member.
    pub fn member_row(&self, pos: usize) -> &[f32] {
        &self.rows[pos * self.d..(pos + 1) * self.d]
    }

    /// Top-`k` neighbors of every member among the other members, queries
    /// processed in blocks of `batch`. Result `i` belongs to `ids()[i]`.
    pub fn all_members(&self, k: usize, batch: usize) -> Result<Vec<Vec<Neighbor>>> {
        if k == 0 {
            return Err(Error::argument("k must be positive"));
        }
        let positions: Vec<usize> = (0..self.len()).collect();
        let blocks = par::map_chunks(&positions, batch.max(1), |_, block| self.search_block(block, k));
        Ok(blocks.into_iter().flatten().collect())
    }

    /// Top-`k` neighbors of the member at each of `positions`.
    pub fn members(&self, positions: &[usize], k: usize, batch: usize) -> Result<Vec<Vec<Neighbor>>> {
        if k == 0 {
            return Err(Error::argument("k must be positive"));
        }
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.len()) {
            return Err(Error::argument(format!("member position {bad} out of range")));
        }
        let blocks = par::map_chunks(positions, batch.max(1), |_, block| self.search_block(block, k));
        Ok(blocks.into_iter().flatten().collect())
    }

    fn search_block(&self, block: &[usize], k: usize) -> Vec<Vec<Neighbor>> {
        let mut tops: Vec<TopK> = block.iter().map(|_| TopK::new(k)).collect();
        let d = self.d;
        for tile_start in (0..self.len()).step_by(TILE_ROWS) {
            let tile_end = (tile_start + TILE_ROWS).min(self.len());
            for (top, &q) in tops.iter_mut().zip(block) {
                let qrow = self.member_row(q);
                for c in tile_start..tile_end {
                    if c == q {
                        continue;
                    }
                    let cos = dot(qrow, &self.rows[c * d..(c + 1) * d]);
                    top.offer(self.ids[c], cos);
                }
            }
        }
        tops.into_iter().map(TopK::into_sorted).collect()
    }

    /// Top-`k` members for an arbitrary query vector, optionally excluding one id.
    pub fn query(&self, vector: &[f32], k: usize, exclude: Option<TokenId>) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::argument("k must be positive"));
        }
        if vector.len() != self.d {
            return Err(Error::argument(format!(
                "query dimension {} does not match index dimension {}",
                vector.len(),
                self.d
            )));
        }
        let mut q = vector.to_vec();
        normalize_row(&mut q).map_err(|_| Error::DegenerateInput("zero query vector".into()))?;
        let mut top = TopK::new(k);
        for (c, &id) in self.ids.iter().enumerate() {
            if Some(id) == exclude {
                continue;
            }
            top.offer(id, dot(&q, self.member_row(c)));
        }
        Ok(top.into_sorted())
    }
}

/// Exact top-`k` cosine neighbors of `query_id` among `candidates`,
/// descending by cosine with ties broken by ascending ID. The query itself is
/// never returned.
pub fn knn(store: &EmbeddingStore, query_id: TokenId, k: usize, candidates: &[TokenId]) -> Result<Vec<TokenId>> {
    if k == 0 {
        return Err(Error::argument("k must be positive"));
    }
    let mut sorted: Vec<TokenId> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let index = NeighborIndex::new(store, &sorted)?;
    let query = store.row_or_err(query_id)?;
    Ok(index
        .query(query, k, Some(query_id))?
        .into_iter()
        .map(|n| n.id)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_bitwise() {
        let rows: Vec<f32> = (0..12).map(|i| i as f32 * 0.37 - 1.5).collect();
        let s = EmbeddingStore::new(3, 4, rows).unwrap();
        let back = EmbeddingStore::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(
            back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            s.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!((back.n(), back.dim()), (3, 4));
    }

    #[test]
    fn text_format() {
        let s = EmbeddingStore::from_text("2 3\n1 0.5 0.5 0\n0 1 2 3\n").unwrap();
        assert_eq!((s.n(), s.dim()), (2, 3));
        assert_eq!(s.row(0).unwrap(), &[1.0, 2.0, 3.0]);
        assert!(EmbeddingStore::from_text("2 3\n0 1 2 3\n1 1 2\n").is_err());
        assert!(EmbeddingStore::from_text("1 2\n0 NaN 1\n").is_err());
        let again = EmbeddingStore::from_text(&s.to_text()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn nan_rejected() {
        assert!(matches!(EmbeddingStore::new(1, 2, vec![0.0, f32::NAN]), Err(Error::Format(_))));
        let mut bytes = EmbeddingStore::new(1, 1, vec![1.0]).unwrap().to_bytes();
        bytes[16..20].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(EmbeddingStore::from_bytes(&bytes).is_err());
    }

    #[test]
    fn bad_version_rejected() {
        let mut bytes = EmbeddingStore::new(1, 1, vec![1.0]).unwrap().to_bytes();
        bytes[4] = 2;
        assert!(EmbeddingStore::from_bytes(&bytes).is_err());
    }

    #[test]
    fn normalize_rows() {
        let s = EmbeddingStore::new(2, 2, vec![3.0, 4.0, 0.6, 0.8]).unwrap().normalize().unwrap();
        assert!(s.is_normalized());
        assert!((s.row(0).unwrap()[0] - 0.6).abs() < 1e-7);
        assert!((s.row(0).unwrap()[1] - 0.8).abs() < 1e-7);
        assert!((s.row(1).unwrap()[0] - 0.6).abs() < 1e-7);
        let zero = EmbeddingStore::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(zero.normalize(), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn knn_edge_cases() {
        let eye = EmbeddingStore::new(4, 4, (0..16).map(|i| f32::from(i % 5 == 0)).collect()).unwrap();
        assert_eq!(knn(&eye, 0, 3, &[0]).unwrap(), Vec::<TokenId>::new());
        assert_eq!(knn(&eye, 0, 10, &[3, 1, 2, 0]).unwrap(), vec![1, 2, 3]);
        assert!(matches!(knn(&eye, 0, 0, &[1]), Err(Error::Argument(_))));
        assert!(matches!(knn(&eye, 0, 1, &[9]), Err(Error::Coverage { .. })));
    }

    #[test]
    fn proxy_of_single_piece_is_exact() {
        let pv = Vocabulary::new(vec![(b"ab".to_vec(), 0), (b"c".to_vec(), 1)], []).unwrap();
        let ps = EmbeddingStore::new(2, 2, vec![0.1, 0.7, 1.0, -3.0]).unwrap();
        assert_eq!(proxy_embed(b"ab", &pv, &ps).unwrap(), vec![0.1, 0.7]);
        let mean = proxy_embed(b"abc", &pv, &ps).unwrap();
        assert!((mean[0] - 0.55).abs() < 1e-7 && (mean[1] + 1.15).abs() < 1e-7);
        assert!(matches!(proxy_embed(b"x", &pv, &ps), Err(Error::Coverage { .. })));
    }
}
