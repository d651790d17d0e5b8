//! Aggregated diagnostics and versioned JSON summaries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackReport;
use crate::bijection::{key_overlap, BijectionKey, OpacityReport};
use crate::error::{Error, Result};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// `100 * method / oracle`.
pub fn recovery_ratio(method_avg: f64, oracle_avg: f64) -> Result<f64> {
    if oracle_avg.is_nan() || oracle_avg <= 0.0 {
        return Err(Error::argument(format!("oracle average must be positive, got {oracle_avg}")));
    }
    Ok(100.0 * method_avg / oracle_avg)
}

/// Pairwise key overlap percentages; symmetric with a diagonal of 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub seeds: Vec<u64>,
    pub values: Vec<Vec<f64>>,
}

impl OverlapMatrix {
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// Largest off-diagonal entry, if there is more than one key.
    pub fn max_off_diagonal(&self) -> Option<f64> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.values[i][j])
            .max_by(f64::total_cmp)
    }

    /// CSV with a header row of seeds; each data row starts with its seed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed");
        for s in &self.seeds {
            out.push(',');
            out.push_str(&s.to_string());
        }
        out.push('\n');
        for (s, row) in self.seeds.iter().zip(&self.values) {
            out.push_str(&s.to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Overlap between every pair of keys. All keys must share a vocabulary.
pub fn overlap_matrix(keys: &[BijectionKey]) -> Result<OverlapMatrix> {
    let n = keys.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        values[i][i] = 100.0;
        for j in (i + 1)..n {
            let v = key_overlap(&keys[i], &keys[j])?;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    // a single key still has to agree with the others' vocabulary
    if let Some(first) = keys.first() {
        if let Some(bad) = keys.iter().find(|k| k.vocab_fingerprint != first.vocab_fingerprint) {
            return Err(Error::Compatibility {
                key: bad.vocab_fingerprint,
                vocab: first.vocab_fingerprint,
            });
        }
    }
    Ok(OverlapMatrix {
        seeds: keys.iter().map(|k| k.config.seed).collect(),
        values,
    })
}

/// One entry of an experiment summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SummaryEntry {
    Attack(AttackReport),
    Overlap(OverlapMatrix),
    Opacity(OpacityReport),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub entries: Vec<SummaryEntry>,
}

impl Summary {
    pub fn new(entries: Vec<SummaryEntry>) -> Self {
        Summary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            entries,
        }
    }
}

/// Write `entries` as one JSON document.
pub fn emit_summary(entries: Vec<SummaryEntry>, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Summary::new(entries))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let summary: Summary = serde_json::from_str(&text)?;
    if summary.schema_version != SUMMARY_SCHEMA_VERSION {
        return Err(Error::format(format!(
            "unsupported summary schema version {}",
            summary.schema_version
        )));
    }
    Ok(summary)
}
