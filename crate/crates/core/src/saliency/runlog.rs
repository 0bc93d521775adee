use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost of explaining one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTiming {
    pub sample_id: String,
    pub wall_seconds: f64,
    /// Number of target evaluations; unlike wall time this is reproducible.
    pub evaluations: u64,
}

/// What `saliency run` did: method, parameters, seed and per-sample cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    /// Name the scores of this run are filed under.
    pub label: String,
    pub method: String,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub target: String,
    pub samples: Vec<SampleTiming>,
}

pub const RUNLOG_FILE: &str = "runlog.json";

impl RunLog {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn mean_wall_seconds(&self) -> Option<f64> {
        mean(self.samples.iter().map(|s| s.wall_seconds))
    }

    pub fn mean_evaluations(&self) -> Option<f64> {
        mean(self.samples.iter().map(|s| s.evaluations as f64))
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let n = values.len();
    (n > 0).then(|| values.sum::<f64>() / n as f64)
}
