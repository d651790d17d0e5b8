//! Corpus BLEU and ROUGE-L over whitespace tokens.

use std::collections::HashMap;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

fn check_lengths(c: usize, r: usize) -> Result<()> {
    if c != r {
        return Err(Error::argument(format!("{c} candidates but {r} references")));
    }
    if c == 0 {
        return Err(Error::argument("need at least one candidate"));
    }
    Ok(())
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Corpus-level BLEU on a 0–100 scale: uniform weights over 1–4-gram
/// precisions, brevity penalty, add-one smoothing for orders 2 and up.
pub fn bleu<C: AsRef<str>, R: AsRef<str>>(candidates: &[C], references: &[R]) -> Result<f64> {
    check_lengths(candidates.len(), references.len())?;
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let c: Vec<&str> = c.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(&r, n);
            for (g, count) in ngram_counts(&c, n) {
                matches[n - 1] += count.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..MAX_ORDER {
        log_sum += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / MAX_ORDER as f64).exp())
}

pub fn sentence_bleu(candidate: &str, reference: &str) -> f64 {
    bleu(&[candidate], &[reference]).expect("one candidate, one reference")
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

/// Mean ROUGE-L F1 over candidate/reference pairs.
pub fn rouge_l<C: AsRef<str>, R: AsRef<str>>(candidates: &[C], references: &[R]) -> Result<f64> {
    check_lengths(candidates.len(), references.len())?;
    let mut total = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        let c: Vec<&str> = c.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        total += match (c.is_empty(), r.is_empty()) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => {
                let l = lcs_len(&c, &r) as f64;
                if l == 0.0 {
                    0.0
                } else {
                    let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
                    2.0 * p * rec / (p + rec)
                }
            }
        };
    }
    Ok(total / candidates.len() as f64)
}
