use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mock::fnv1a;
use super::{FeatureSource, FeatureVector};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    claim_id: u64,
    input: u64,
    backend: String,
    dim: usize,
    source: FeatureSource,
    values: Vec<f64>,
}

/// Fingerprint of the sentence pair a vector was computed from, so a claim
/// whose text or evidence changed misses the cache.
pub fn input_key(claim: &str, evidence: &str) -> u64 {
    fnv1a(format!("{claim}\u{1f}{evidence}").as_bytes())
}

/// Append-only feature store keyed by (claim id, [`input_key`]) within one
/// backend key and width. One JSON-lines file per backend key and width.
#[derive(Debug)]
pub struct FeatureCache {
    path: PathBuf,
    backend: String,
    dim: usize,
    entries: HashMap<(u64, u64), FeatureVector>,
}

impl FeatureCache {
    pub fn open(dir: impl AsRef<Path>, backend: &str, dim: usize) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let key = format!("{backend}\u{1f}{dim}");
        let path = dir.join(format!("features-{:016x}.jsonl", fnv1a(key.as_bytes())));
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
                    line: i + 1,
                    message: format!("{}: {e}", path.display()),
                })?;
                if rec.backend == backend && rec.dim == dim && rec.values.len() == dim {
                    entries.insert((rec.claim_id, rec.input), FeatureVector::new(rec.values, rec.source));
                }
            }
        }
        Ok(FeatureCache {
            path,
            backend: backend.to_string(),
            dim,
            entries,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, claim_id: u64, input: u64) -> Option<&FeatureVector> {
        self.entries.get(&(claim_id, input))
    }

    /// Stores and persists a vector. Later inserts for the same key win.
    pub fn insert(&mut self, claim_id: u64, input: u64, fv: FeatureVector) -> Result<()> {
        if fv.values.len() != self.dim {
            return Err(Error::Config(format!(
                "cache holds {}-dimensional features, got {}",
                self.dim,
                fv.values.len()
            )));
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut w = BufWriter::new(file);
        let rec = CacheRecord {
            claim_id,
            input,
            backend: self.backend.clone(),
            dim: self.dim,
            source: fv.source,
            values: fv.values,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        w.flush().map_err(|e| Error::io(&self.path, e))?;
        self.entries
            .insert((claim_id, input), FeatureVector::new(rec.values, rec.source));
        Ok(())
    }

    pub fn get_or_try_insert_with(
        &mut self,
        claim_id: u64,
        input: u64,
        compute: impl FnOnce() -> Result<FeatureVector>,
    ) -> Result<FeatureVector> {
        if let Some(fv) = self.entries.get(&(claim_id, input)) {
            return Ok(fv.clone());
        }
        let fv = compute()?;
        self.insert(claim_id, input, fv.clone())?;
        Ok(fv)
    }
}
