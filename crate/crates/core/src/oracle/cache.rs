use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use super::ClassProbabilities;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CacheKey {
    pub sample_id: String,
    pub coalition: String,
    pub policy: String,
}

impl CacheKey {
    pub fn new(sample_id: &str, coalition: &str, policy: &str) -> Self {
        CacheKey {
            sample_id: sample_id.to_string(),
            coalition: coalition.to_string(),
            policy: policy.to_string(),
        }
    }
}

/// Memoized predictions keyed by sample, coalition and ablation policy.
/// Readers share the map; inserts take the write lock.
#[derive(Debug, Default)]
pub struct PredictionCache {
    entries: RwLock<BTreeMap<CacheKey, ClassProbabilities>>,
    path: Option<PathBuf>,
}

impl PredictionCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A cache backed by a CSV file; existing entries are loaded.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let entries = if path.exists() {
            read_csv(&path)?
        } else {
            BTreeMap::new()
        };
        Ok(PredictionCache {
            entries: RwLock::new(entries),
            path: Some(path),
        })
    }

    pub fn get(&self, key: &CacheKey) -> Option<ClassProbabilities> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: CacheKey, probs: ClassProbabilities) {
        self.entries.write().expect("cache lock").insert(key, probs);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self) -> Vec<CacheKey> {
        self.entries.read().expect("cache lock").keys().cloned().collect()
    }

    /// Writes to the backing file, if any.
    pub fn flush(&self) -> Result<()> {
        match &self.path {
            Some(p) => self.save(p),
            None => Ok(()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let entries = self.entries.read().expect("cache lock");
        let n_classes = entries.values().map(|p| p.n_classes()).max().unwrap_or(0);
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["sample_id".to_string(), "coalition".into(), "policy".into()];
        header.extend((0..n_classes).map(|c| format!("p{c}")));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (k, p) in entries.iter() {
            let mut row = vec![k.sample_id.clone(), k.coalition.clone(), k.policy.clone()];
            // `{}` on f64 prints the shortest string that parses back exactly.
            row.extend(p.probs().iter().map(|v| format!("{v}")));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Invariant(format!("{}: {e}", path.display()))
}

fn read_csv(path: &Path) -> Result<BTreeMap<CacheKey, ClassProbabilities>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.len() < 4 {
            return Err(Error::Invariant(format!("{}: short cache row", path.display())));
        }
        let probs = row
            .iter()
            .skip(3)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Invariant(format!("bad probability {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(
            CacheKey::new(&row[0], &row[1], &row[2]),
            ClassProbabilities::new(probs)?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.csv");
        let cache = PredictionCache::open(&path).unwrap();
        let p = 0.1f64 + 0.2;
        cache.insert(
            CacheKey::new("s,1", "0+2", "zero"),
            ClassProbabilities::new(vec![p, 1.0 - p]).unwrap(),
        );
        cache.flush().unwrap();
        let again = PredictionCache::open(&path).unwrap();
        let got = again.get(&CacheKey::new("s,1", "0+2", "zero")).unwrap();
        assert_eq!(got.probs()[0].to_bits(), p.to_bits());
        assert_eq!(again.len(), 1);
    }
}
