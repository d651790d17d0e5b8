//! Vocabularies, the reference tokenizer and pretokenized ID streams.
//!
//! Token strings are raw byte sequences. In the JSON vocabulary format a key
//! of the exact form `<0xHH>` denotes the single raw byte `0xHH`, which is how
//! byte-fallback tokens that are not valid UTF-8 on their own are written.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::ops::Deref;
use std::path::Path;
use std::str::FromStr;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// 64-bit content hash of a vocabulary, rendered as 16 lowercase hex digits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub u64);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for Fingerprint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 16 {
            return Err(Error::format(format!("fingerprint must be 16 hex digits, got {s:?}")));
        }
        u64::from_str_radix(s, 16)
            .map(Fingerprint)
            .map_err(|_| Error::format(format!("invalid fingerprint {s:?}")))
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An ordered list of token IDs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSequence(ids)
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }

    /// Check that every ID exists in `vocab`.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        match self.0.iter().position(|&id| !vocab.contains_id(id)) {
            None => Ok(()),
            Some(pos) => Err(Error::Reference(format!(
                "token id {} at position {pos} is not in the vocabulary",
                self.0[pos]
            ))),
        }
    }

    /// Render as one line of space-separated decimal IDs.
    pub fn to_line(&self) -> String {
        let mut out = String::with_capacity(self.0.len() * 6);
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&id.to_string());
        }
        out
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        line.split_ascii_whitespace()
            .map(|tok| {
                tok.parse::<TokenId>()
                    .map_err(|_| Error::format(format!("invalid token id {tok:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(TokenSequence)
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSequence(ids)
    }
}

impl FromIterator<TokenId> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        TokenSequence(iter.into_iter().collect())
    }
}

/// Token-string to token-ID table with a designated special-token subset.
///
/// Immutable after construction; the fingerprint is computed once.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    /// Sorted by ID.
    entries: Vec<(TokenId, Box<[u8]>)>,
    by_id: HashMap<TokenId, usize>,
    by_bytes: HashMap<Box<[u8]>, TokenId>,
    specials: BTreeSet<TokenId>,
    max_token_len: usize,
    fingerprint: Fingerprint,
}

impl Vocabulary {
    /// Build a vocabulary from `(token_string, token_id)` pairs and a set of
    /// special IDs.
    pub fn new<I, S>(entries: I, specials: S) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u8>, TokenId)>,
        S: IntoIterator<Item = TokenId>,
    {
        let mut list: Vec<(TokenId, Box<[u8]>)> = Vec::new();
        let mut by_bytes: HashMap<Box<[u8]>, TokenId> = HashMap::new();
        for (bytes, id) in entries {
            let bytes: Box<[u8]> = bytes.into_boxed_slice();
            if bytes.is_empty() {
                return Err(Error::format(format!("token id {id} has an empty string")));
            }
            if let Some(prev) = by_bytes.insert(bytes.clone(), id) {
                return Err(Error::format(format!(
                    "duplicate token string {} (ids {prev} and {id})",
                    display_bytes(&bytes)
                )));
            }
            list.push((id, bytes));
        }
        list.sort_by_key(|(id, _)| *id);
        if let Some(w) = list.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::format(format!("duplicate token id {}", w[0].0)));
        }
        let by_id: HashMap<TokenId, usize> =
            list.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();

        let mut special_set = BTreeSet::new();
        for id in specials {
            if !by_id.contains_key(&id) {
                return Err(Error::Reference(format!("special id {id} is not in the vocabulary")));
            }
            special_set.insert(id);
        }

        let max_token_len = list.iter().map(|(_, b)| b.len()).max().unwrap_or(0);
        let fingerprint = compute_fingerprint(&list, &special_set);
        Ok(Vocabulary {
            entries: list,
            by_id,
            by_bytes,
            specials: special_set,
            max_token_len,
            fingerprint,
        })
    }

    /// Build a vocabulary whose specials are given by token string.
    pub fn with_special_strings<I, S, B>(entries: I, specials: S) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u8>, TokenId)>,
        S: IntoIterator<Item = B>,
        B: AsRef<[u8]>,
    {
        let entries: Vec<_> = entries.into_iter().collect();
        let lookup: HashMap<&[u8], TokenId> =
            entries.iter().map(|(b, id)| (b.as_slice(), *id)).collect();
        let mut ids = Vec::new();
        for s in specials {
            let s = s.as_ref();
            match lookup.get(s) {
                Some(&id) => ids.push(id),
                None => {
                    return Err(Error::Reference(format!(
                        "special token {} is not in the vocabulary",
                        display_bytes(s)
                    )))
                }
            }
        }
        Vocabulary::new(entries, ids)
    }

    /// Parse a JSON `{token_string: id}` object and an optional JSON array
    /// of special token strings.
    pub fn from_json(vocab_json: &str, specials_json: Option<&str>) -> Result<Self> {
        let raw: RawEntries = serde_json::from_str(vocab_json)?;
        let mut seen = std::collections::HashSet::new();
        let mut entries = Vec::with_capacity(raw.0.len());
        for (key, id) in raw.0 {
            if !seen.insert(key.clone()) {
                return Err(Error::format(format!("duplicate token string {key:?}")));
            }
            let id = TokenId::try_from(id)
                .map_err(|_| Error::format(format!("token id {id} does not fit in 32 bits")))?;
            entries.push((decode_token_key(&key), id));
        }
        let specials: Vec<Vec<u8>> = match specials_json {
            Some(text) => {
                let list: Vec<String> = serde_json::from_str(text)?;
                list.iter().map(|s| decode_token_key(s)).collect()
            }
            None => Vec::new(),
        };
        Vocabulary::with_special_strings(entries, specials)
    }

    /// Serialize as the JSON `{token_string: id}` object (entries in ID order).
    pub fn to_json(&self) -> Result<String> {
        let mut map = serde_json::Map::new();
        for (id, bytes) in &self.entries {
            map.insert(encode_token_key(bytes)?, serde_json::Value::from(*id));
        }
        Ok(serde_json::to_string_pretty(&serde_json::Value::Object(map))?)
    }

    /// Serialize the special set as a JSON array of token strings.
    pub fn specials_to_json(&self) -> Result<String> {
        let list = self
            .specials
            .iter()
            .map(|id| encode_token_key(self.token_bytes(*id).expect("special in vocab")))
            .collect::<Result<Vec<_>>>()?;
        Ok(serde_json::to_string_pretty(&list)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.specials.contains(&id)
    }

    pub fn specials(&self) -> &BTreeSet<TokenId> {
        &self.specials
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.by_id.get(&id).map(|&i| &*self.entries[i].1)
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<TokenId> {
        self.by_bytes.get(bytes).copied()
    }

    /// Largest token ID, if any.
    pub fn max_id(&self) -> Option<TokenId> {
        self.entries.last().map(|(id, _)| *id)
    }

    pub fn max_token_len(&self) -> usize {
        self.max_token_len
    }

    /// `(id, token_string)` pairs in ascending ID order.
    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &[u8])> + '_ {
        self.entries.iter().map(|(id, b)| (*id, &**b))
    }

    /// The non-special IDs, ascending.
    pub fn permutable_ids(&self) -> Vec<TokenId> {
        self.entries
            .iter()
            .map(|(id, _)| *id)
            .filter(|id| !self.specials.contains(id))
            .collect()
    }

    /// True when every single byte is a token, so every input is coverable.
    pub fn is_byte_complete(&self) -> bool {
        (0u8..=255).all(|b| self.by_bytes.contains_key(&[b][..]))
    }
}

/// Load a vocabulary file and an optional specials file.
pub fn load_vocab(path: &Path, specials_path: Option<&Path>) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let specials = specials_path
        .map(|p| std::fs::read_to_string(p).map_err(|e| Error::io(p, e)))
        .transpose()?;
    Vocabulary::from_json(&text, specials.as_deref())
}

/// Greedy longest-match tokenization from the left.
///
/// At each position the longest vocabulary token that is a prefix of the
/// remaining input is taken. Single-byte tokens act as the fallback, so on a
/// byte-complete vocabulary every input is accepted.
pub fn reference_tokenize(text: &[u8], vocab: &Vocabulary) -> Result<TokenSequence> {
    let mut ids = Vec::with_capacity(text.len() / 2 + 1);
    let mut pos = 0;
    while pos < text.len() {
        let longest = vocab.max_token_len().min(text.len() - pos);
        let hit = (1..=longest)
            .rev()
            .find_map(|len| vocab.id_of(&text[pos..pos + len]).map(|id| (id, len)));
        match hit {
            Some((id, len)) => {
                ids.push(id);
                pos += len;
            }
            None => {
                return Err(Error::Coverage {
                    position: pos,
                    detail: format!("no token matches byte 0x{:02x}", text[pos]),
                })
            }
        }
    }
    Ok(TokenSequence(ids))
}

/// Concatenate the token strings of `ids`.
pub fn detokenize(ids: &[TokenId], vocab: &Vocabulary) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ids.len() * 4);
    for &id in ids {
        let bytes = vocab
            .token_bytes(id)
            .ok_or_else(|| Error::Reference(format!("unknown token id {id}")))?;
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

/// Read a pretokenized stream: one sequence of space-separated IDs per line.
/// Lines starting with `#` are skipped.
pub fn read_id_lines<R: BufRead>(reader: R) -> Result<Vec<TokenSequence>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::format(format!("line {}: {e}", n + 1)))?;
        if line.starts_with('#') {
            continue;
        }
        out.push(
            TokenSequence::parse_line(&line)
                .map_err(|e| Error::format(format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

fn compute_fingerprint(entries: &[(TokenId, Box<[u8]>)], specials: &BTreeSet<TokenId>) -> Fingerprint {
    let mut h = Sha256::new();
    h.update(b"alien-vocab/v1");
    for (id, bytes) in entries {
        h.update(id.to_le_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    h.update(b"specials");
    h.update((specials.len() as u64).to_le_bytes());
    for id in specials {
        h.update(id.to_le_bytes());
    }
    let digest = h.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    Fingerprint(u64::from_be_bytes(head))
}

fn decode_token_key(key: &str) -> Vec<u8> {
    let b = key.as_bytes();
    if b.len() == 6 && key.starts_with("<0x") && key.ends_with('>') {
        if let Ok(byte) = u8::from_str_radix(&key[3..5], 16) {
            return vec![byte];
        }
    }
    b.to_vec()
}

fn encode_token_key(bytes: &[u8]) -> Result<String> {
    match std::str::from_utf8(bytes) {
        Ok(s) if decode_token_key(s) == bytes => Ok(s.to_owned()),
        _ if bytes.len() == 1 => Ok(format!("<0x{:02X}>", bytes[0])),
        _ => Err(Error::format(format!(
            "token {} cannot be written as a JSON key",
            display_bytes(bytes)
        ))),
    }
}

pub(crate) fn display_bytes(bytes: &[u8]) -> String {
    format!("{:?}", String::from_utf8_lossy(bytes))
}

/// JSON object deserialized as an ordered list so duplicate keys are visible.
struct RawEntries(Vec<(String, u64)>);

impl<'de> Deserialize<'de> for RawEntries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object mapping token strings to integer ids")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawEntries, A::Error> {
                let mut out = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some((k, v)) = map.next_entry::<String, u64>()? {
                    out.push((k, v));
                }
                Ok(RawEntries(out))
            }
        }
        d.deserialize_map(V)
    }
}
