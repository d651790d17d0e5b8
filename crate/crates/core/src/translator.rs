//! Lossless translation between plaintext and alien form.
//!
//! The ID sequence is the canonical transport form; rendered text is a view
//! of it. A rendering is *retokenization-safe* when tokenizing it gives back
//! exactly the alien IDs it was rendered from, which is what text-form
//! round-trips rely on. Unsafe renderings are either rejected (strict mode)
//! or shipped as an ID stream:
//!
//! ```text
//! #alien-ids v1 fingerprint=<16 hex digits>
//! 17 4 9051 ...
//! ```

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::bijection::BijectionKey;
use crate::error::{Error, Result};
use crate::par;
use crate::vocab::{detokenize, reference_tokenize, Fingerprint, TokenId, TokenSequence, Vocabulary};

pub const ID_STREAM_PREFIX: &str = "#alien-ids v1 fingerprint=";

/// Alien-side token sequence with its optional text rendering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlienDocument {
    pub ids: TokenSequence,
    pub rendered: Option<Vec<u8>>,
    pub retokenization_safe: bool,
}

/// Input accepted by [`Translator::decode_text`].
#[derive(Clone, Copy, Debug)]
pub enum AlienInput<'a> {
    Text(&'a [u8]),
    Document(&'a AlienDocument),
}

/// Encoder/decoder bound to one key and the vocabulary it was built for.
#[derive(Clone, Debug)]
pub struct Translator<'a> {
    key: &'a BijectionKey,
    vocab: &'a Vocabulary,
    table: HashMap<TokenId, TokenId>,
}

impl<'a> Translator<'a> {
    /// Fails with a compatibility error when the key was built for another
    /// vocabulary.
    pub fn new(key: &'a BijectionKey, vocab: &'a Vocabulary) -> Result<Self> {
        key.ensure_compatible(vocab)?;
        let table = key.mapping().iter().filter(|(a, b)| a != b).map(|(a, b)| (*a, *b)).collect();
        Ok(Translator { key, vocab, table })
    }

    pub fn key(&self) -> &BijectionKey {
        self.key
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.vocab
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.vocab.fingerprint()
    }

    fn remap(&self, z: &[TokenId]) -> Result<TokenSequence> {
        z.iter()
            .map(|&id| {
                if !self.vocab.contains_id(id) {
                    return Err(Error::Reference(format!("token id {id} is not in the vocabulary")));
                }
                Ok(self.table.get(&id).copied().unwrap_or(id))
            })
            .collect::<Result<Vec<_>>>()
            .map(TokenSequence)
    }

    /// Apply the key elementwise; unmasked and special IDs pass through.
    pub fn encode_ids(&self, z: &[TokenId]) -> Result<TokenSequence> {
        self.remap(z)
    }

    /// Inverse of [`encode_ids`](Self::encode_ids). The key is an involution,
    /// so this is the same remapping.
    pub fn decode_ids(&self, z: &[TokenId]) -> Result<TokenSequence> {
        self.remap(z)
    }

    /// Tokenize, remap and render `x`. In strict mode an unsafe rendering is
    /// a stability error carrying the first divergent token position.
    pub fn encode_text(&self, x: &[u8], strict: bool) -> Result<AlienDocument> {
        let z = reference_tokenize(x, self.vocab)?;
        let ids = self.encode_ids(&z)?;
        let rendered = detokenize(&ids, self.vocab)?;
        let retok = reference_tokenize(&rendered, self.vocab)?;
        let divergence = first_divergence(&retok, &ids);
        if strict {
            if let Some(position) = divergence {
                return Err(Error::Stability { position });
            }
        }
        Ok(AlienDocument {
            ids,
            rendered: Some(rendered),
            retokenization_safe: divergence.is_none(),
        })
    }

    /// Recover plaintext from alien text or from an [`AlienDocument`].
    ///
    /// Documents are decoded from their IDs and never re-tokenized. Raw text
    /// is re-tokenized; if the recovered plaintext would not tokenize back to
    /// the decoded IDs the rendering was ambiguous and a stability error is
    /// returned.
    pub fn decode_text(&self, input: AlienInput<'_>) -> Result<Vec<u8>> {
        match input {
            AlienInput::Document(doc) => detokenize(&self.decode_ids(&doc.ids)?, self.vocab),
            AlienInput::Text(text) => {
                let alien = reference_tokenize(text, self.vocab)?;
                let plain_ids = self.decode_ids(&alien)?;
                let plain = detokenize(&plain_ids, self.vocab)?;
                let check = reference_tokenize(&plain, self.vocab)?;
                if let Some(position) = first_divergence(&check, &plain_ids) {
                    return Err(Error::Stability { position });
                }
                Ok(plain)
            }
        }
    }

    /// Encode `x` for transmission: the rendered text when it is safe (and
    /// valid UTF-8 if `require_utf8`), otherwise a one-line ID stream.
    /// Strict mode rejects anything that cannot travel as text.
    pub fn encode_for_transport(&self, x: &[u8], strict: bool, require_utf8: bool) -> Result<Transport> {
        let doc = self.encode_text(x, strict)?;
        let rendered = doc.rendered.expect("encode_text always renders");
        let utf8_ok = !require_utf8 || std::str::from_utf8(&rendered).is_ok();
        if doc.retokenization_safe && utf8_ok {
            return Ok(Transport {
                bytes: rendered,
                as_text: true,
                tokens: doc.ids.len(),
            });
        }
        if strict {
            return Err(Error::format("alien rendering is not valid UTF-8"));
        }
        Ok(Transport {
            bytes: write_id_stream(self.fingerprint(), std::slice::from_ref(&doc.ids)).into_bytes(),
            as_text: false,
            tokens: doc.ids.len(),
        })
    }

    /// Inverse of [`encode_for_transport`](Self::encode_for_transport):
    /// accepts either rendered alien text or an ID stream.
    pub fn decode_transport(&self, bytes: &[u8]) -> Result<Vec<u8>> {
        if bytes.starts_with(ID_STREAM_PREFIX.as_bytes()) {
            let text = std::str::from_utf8(bytes).map_err(|_| Error::format("ID stream is not UTF-8"))?;
            let (fp, seqs) = read_id_stream(text)?;
            self.check_stream_fingerprint(fp)?;
            let mut out = Vec::new();
            for seq in seqs {
                out.extend(detokenize(&self.decode_ids(&seq)?, self.vocab)?);
            }
            Ok(out)
        } else {
            self.decode_text(AlienInput::Text(bytes))
        }
    }

    pub fn check_stream_fingerprint(&self, fp: Option<Fingerprint>) -> Result<()> {
        match fp {
            Some(fp) if fp != self.fingerprint() => Err(Error::Compatibility {
                key: fp,
                vocab: self.fingerprint(),
            }),
            _ => Ok(()),
        }
    }
}

/// Result of [`Translator::encode_for_transport`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transport {
    pub bytes: Vec<u8>,
    /// False when the payload is an ID stream.
    pub as_text: bool,
    pub tokens: usize,
}

fn first_divergence(a: &[TokenId], b: &[TokenId]) -> Option<usize> {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(p) => Some(p),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}

/// One-shot form of [`Translator::encode_ids`].
pub fn encode_ids(z: &[TokenId], key: &BijectionKey, vocab: &Vocabulary) -> Result<TokenSequence> {
    Translator::new(key, vocab)?.encode_ids(z)
}

/// One-shot form of [`Translator::decode_ids`].
pub fn decode_ids(z: &[TokenId], key: &BijectionKey, vocab: &Vocabulary) -> Result<TokenSequence> {
    Translator::new(key, vocab)?.decode_ids(z)
}

/// Render sequences as an ID stream with its header line.
pub fn write_id_stream(fp: Fingerprint, seqs: &[TokenSequence]) -> String {
    let mut out = format!("{ID_STREAM_PREFIX}{fp}\n");
    for s in seqs {
        out.push_str(&s.to_line());
        out.push('\n');
    }
    out
}

/// Parse an ID stream. The header is optional; when present its fingerprint
/// is returned.
pub fn read_id_stream(text: &str) -> Result<(Option<Fingerprint>, Vec<TokenSequence>)> {
    let mut lines = text.lines().peekable();
    let mut fp = None;
    if let Some(first) = lines.peek() {
        if let Some(hex) = first.strip_prefix(ID_STREAM_PREFIX) {
            fp = Some(hex.trim().parse()?);
            lines.next();
        } else if first.starts_with("#alien-ids") {
            return Err(Error::format(format!("unsupported ID stream header {first:?}")));
        }
    }
    let seqs = lines
        .enumerate()
        .map(|(n, l)| TokenSequence::parse_line(l).map_err(|e| Error::format(format!("line {}: {e}", n + 2))))
        .collect::<Result<_>>()?;
    Ok((fp, seqs))
}

/// Counts reported by dataset emission.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub tokens: usize,
    /// Content fields shipped as ID streams because their rendering was not
    /// retokenization-safe or not valid UTF-8.
    pub unsafe_renderings: usize,
}

/// Alienize every content field of a JSONL fine-tuning corpus.
///
/// Records are `{"instruction", "response"}` objects or objects with a
/// `"messages"` array whose elements carry `"content"`. All other fields and
/// the key order are preserved.
pub fn alienize_dataset(
    input: &Path,
    translator: &Translator<'_>,
    output: &Path,
    strict: bool,
) -> Result<DatasetSummary> {
    transform_dataset(input, output, |line, n| alienize_record(line, translator, strict).map_err(|e| at_line(input, n, e)))
}

/// Decode an alienized corpus back to plaintext.
pub fn restore_dataset(input: &Path, translator: &Translator<'_>, output: &Path) -> Result<DatasetSummary> {
    transform_dataset(input, output, |line, n| restore_record(line, translator).map_err(|e| at_line(input, n, e)))
}

fn at_line(path: &Path, line: usize, e: Error) -> Error {
    Error::Line {
        path: path.to_path_buf(),
        line,
        source: Box::new(e),
    }
}

fn transform_dataset<F>(input: &Path, output: &Path, f: F) -> Result<DatasetSummary>
where
    F: Fn(&str, usize) -> Result<(String, DatasetSummary)> + Sync + Send,
{
    let file = std::fs::File::open(input).map_err(|e| Error::io(input, e))?;
    let lines: Vec<(usize, String)> = std::io::BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(n, l)| l.map(|l| (n + 1, l)).map_err(|e| Error::io(input, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let results = par::map(&lines, |(n, line)| f(line, *n));

    let out = std::fs::File::create(output).map_err(|e| Error::io(output, e))?;
    let mut out = std::io::BufWriter::new(out);
    let mut total = DatasetSummary::default();
    for r in results {
        let (line, s) = r?;
        out.write_all(line.as_bytes()).map_err(|e| Error::io(output, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(output, e))?;
        total.records += s.records;
        total.tokens += s.tokens;
        total.unsafe_renderings += s.unsafe_renderings;
    }
    out.flush().map_err(|e| Error::io(output, e))?;
    Ok(total)
}

/// Alienize one JSONL record.
pub fn alienize_record(line: &str, t: &Translator<'_>, strict: bool) -> Result<(String, DatasetSummary)> {
    let mut summary = DatasetSummary {
        records: 1,
        ..Default::default()
    };
    let out = map_content_fields(line, |text| {
        let tr = t.encode_for_transport(text.as_bytes(), strict, true)?;
        summary.tokens += tr.tokens;
        summary.unsafe_renderings += usize::from(!tr.as_text);
        Ok(String::from_utf8(tr.bytes).expect("transport payload checked as UTF-8"))
    })?;
    Ok((out, summary))
}

/// Restore one alienized JSONL record.
pub fn restore_record(line: &str, t: &Translator<'_>) -> Result<(String, DatasetSummary)> {
    let mut summary = DatasetSummary {
        records: 1,
        ..Default::default()
    };
    let out = map_content_fields(line, |text| {
        let plain = t.decode_transport(text.as_bytes())?;
        summary.tokens += reference_tokenize(&plain, t.vocab())?.len();
        String::from_utf8(plain).map_err(|_| Error::format("decoded content is not valid UTF-8"))
    })?;
    Ok((out, summary))
}

fn map_content_fields<F>(line: &str, mut f: F) -> Result<String>
where
    F: FnMut(&str) -> Result<String>,
{
    let mut value: Value = serde_json::from_str(line)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::format("record is not a JSON object"))?;
    if let Some(messages) = obj.get_mut("messages") {
        let messages = messages
            .as_array_mut()
            .ok_or_else(|| Error::format("\"messages\" is not an array"))?;
        for (i, m) in messages.iter_mut().enumerate() {
            let content = m
                .get_mut("content")
                .ok_or_else(|| Error::format(format!("message {i} has no \"content\"")))?;
            let text = content
                .as_str()
                .ok_or_else(|| Error::format(format!("message {i} content is not a string")))?;
            *content = Value::String(f(text)?);
        }
    } else {
        for field in ["instruction", "response"] {
            let slot = obj
                .get_mut(field)
                .ok_or_else(|| Error::format(format!("record has neither \"messages\" nor \"{field}\"")))?;
            let text = slot
                .as_str()
                .ok_or_else(|| Error::format(format!("\"{field}\" is not a string")))?;
            *slot = Value::String(f(text)?);
        }
    }
    Ok(serde_json::to_string(&value)?)
}
