//! FEVER-style claim files: one JSON record per line with `id`, `claim`
//! and an optional `label`. Other fields are ignored.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::Masker;
use crate::types::{parse_label, Claim};
use crate::zeroshot::normalize_token;

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    claim: Option<String>,
    label: Option<String>,
}

/// Parses one record. `line_no` is 1-based and only used in errors.
pub fn parse_claim_record(line: &str, line_no: usize) -> Result<Claim> {
    let bad = |message: String| Error::Record {
        line: line_no,
        message,
    };
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    let id = match raw.id {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| bad(format!("id must be a non-negative integer, got {v}")))?,
        None => return Err(bad("missing field `id`".into())),
    };
    let text = raw.claim.ok_or_else(|| bad("missing field `claim`".into()))?;
    if text.trim().is_empty() {
        return Err(bad("claim text is empty".into()));
    }
    let gold_label = match raw.label {
        Some(l) => Some(parse_label(&l).map_err(|e| bad(e.to_string()))?),
        None => None,
    };
    Ok(Claim {
        id,
        text,
        gold_label,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimSet {
    pub split_name: String,
    claims: Vec<Claim>,
    index: HashMap<u64, usize>,
}

impl ClaimSet {
    /// Fails on duplicate ids.
    pub fn new(split_name: impl Into<String>, claims: Vec<Claim>) -> Result<Self> {
        let mut index = HashMap::with_capacity(claims.len());
        for (i, c) in claims.iter().enumerate() {
            if index.insert(c.id, i).is_some() {
                return Err(Error::Invalid(format!("duplicate claim id {}", c.id)));
            }
        }
        Ok(ClaimSet {
            split_name: split_name.into(),
            claims,
            index,
        })
    }

    pub fn split_name(&self) -> &str {
        &self.split_name
    }

    pub fn claims(&self) -> &[Claim] {
        &self.claims
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Claim> {
        self.index.get(&id).map(|&i| &self.claims[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Claim> {
        self.claims.iter()
    }

    /// Writes the set back out in the record format it was read from.
    pub fn write_records(&self, mut out: impl Write) -> std::io::Result<()> {
        for c in &self.claims {
            let rec = serde_json::json!({
                "id": c.id,
                "claim": c.text,
                "label": c.gold_label.map(|l| l.as_str()),
            });
            writeln!(out, "{rec}")?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a ClaimSet {
    type Item = &'a Claim;
    type IntoIter = std::slice::Iter<'a, Claim>;

    fn into_iter(self) -> Self::IntoIter {
        self.claims.iter()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub split: String,
    pub loaded: usize,
    pub skipped: usize,
    /// First few skip reasons, for diagnostics.
    pub errors: Vec<String>,
}

const MAX_REPORTED_ERRORS: usize = 20;

/// Loads a claim file. Malformed lines and repeated ids are skipped and
/// counted; blank lines are ignored.
pub fn load_claimset(path: impl AsRef<Path>, split_name: &str) -> Result<(ClaimSet, LoadSummary)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut summary = LoadSummary {
        split: split_name.to_string(),
        ..Default::default()
    };
    let mut claims = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_claim_record(&line, i + 1).and_then(|c| {
            if seen.insert(c.id) {
                Ok(c)
            } else {
                Err(Error::Record {
                    line: i + 1,
                    message: format!("duplicate claim id {}", c.id),
                })
            }
        });
        match parsed {
            Ok(c) => claims.push(c),
            Err(e) => {
                summary.skipped += 1;
                if summary.errors.len() < MAX_REPORTED_ERRORS {
                    summary.errors.push(e.to_string());
                }
            }
        }
    }
    summary.loaded = claims.len();
    Ok((ClaimSet::new(split_name, claims)?, summary))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub retained: ClaimSet,
    pub removed_vocab: usize,
    pub removed_unmaskable: usize,
}

/// Keeps the claims whose masked gold token, after [`normalize_token`], is
/// in the backend vocabulary.
pub fn filter_by_vocab(
    set: &ClaimSet,
    masker: &Masker,
    vocab_contains: impl Fn(&str) -> bool,
) -> FilterOutcome {
    let mut kept = Vec::new();
    let mut removed_vocab = 0;
    let mut removed_unmaskable = 0;
    for claim in set {
        match masker.mask(claim) {
            Ok(mc) if vocab_contains(&normalize_token(&mc.gold_token)) => kept.push(claim.clone()),
            Ok(_) => removed_vocab += 1,
            Err(_) => removed_unmaskable += 1,
        }
    }
    FilterOutcome {
        retained: ClaimSet::new(set.split_name.clone(), kept)
            .expect("subset of a valid set has unique ids"),
        removed_vocab,
        removed_unmaskable,
    }
}
