//! Adapter for models that live outside this process.
//!
//! Each batch is written to a scratch directory as MMV volumes plus a
//! `manifest.json`, then `<command> {input_dir} {output_csv}` is run once.
//! The command must write `sample_id,p0,p1,...` rows for every sample.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use super::{CacheKey, ClassProbabilities, PredictionCache, PredictionOracle};
use crate::error::{Error, Result};
use crate::tensorio::{load_samples, write_volume, DatasetManifest, ManifestRecord, MultiModalVolume};

pub const INPUT_DIR: &str = "{input_dir}";
pub const OUTPUT_CSV: &str = "{output_csv}";

#[derive(Debug)]
pub struct ExternalBatchOracle {
    command_template: String,
    class_names: Vec<String>,
    scratch_root: Option<PathBuf>,
    invocation: Mutex<()>,
}

impl ExternalBatchOracle {
    pub fn new(command_template: impl Into<String>, class_names: Vec<String>) -> Result<Self> {
        let command_template = command_template.into();
        for placeholder in [INPUT_DIR, OUTPUT_CSV] {
            if !command_template.contains(placeholder) {
                return Err(Error::Config(format!(
                    "command template must contain {placeholder}"
                )));
            }
        }
        if class_names.len() < 2 {
            return Err(Error::Config("external oracle needs at least two classes".into()));
        }
        Ok(ExternalBatchOracle {
            command_template,
            class_names,
            scratch_root: None,
            invocation: Mutex::new(()),
        })
    }

    /// Creates scratch directories under `dir` instead of the system temp dir.
    pub fn with_scratch_root(mut self, dir: impl Into<PathBuf>) -> Self {
        self.scratch_root = Some(dir.into());
        self
    }

    fn scratch(&self) -> Result<tempfile::TempDir> {
        let made = match &self.scratch_root {
            Some(root) => tempfile::tempdir_in(root),
            None => tempfile::tempdir(),
        };
        made.map_err(|e| Error::io(self.scratch_root.clone().unwrap_or_default(), e))
    }

    fn render_command(&self, input_dir: &Path, output_csv: &Path) -> String {
        self.command_template
            .replace(INPUT_DIR, &shell_quote(input_dir))
            .replace(OUTPUT_CSV, &shell_quote(output_csv))
    }

    fn run(&self, batch: &[(&str, &MultiModalVolume)]) -> Result<Vec<ClassProbabilities>> {
        let _guard = self.invocation.lock().expect("invocation lock");
        let scratch = self.scratch()?;
        let input_dir = scratch.path().join("input");
        std::fs::create_dir(&input_dir).map_err(|e| Error::io(&input_dir, e))?;
        let mut records = Vec::with_capacity(batch.len());
        for (i, (id, volume)) in batch.iter().enumerate() {
            let file = format!("{i:06}.mmv");
            write_volume(volume, input_dir.join(&file))?;
            records.push(ManifestRecord {
                sample_id: id.to_string(),
                label: 0,
                volume_path: file,
                mask_path: None,
                saliency_paths: BTreeMap::new(),
                tumor_kinds: Vec::new(),
            });
        }
        DatasetManifest::new(self.class_names.clone(), records)
            .save(input_dir.join("manifest.json"))?;

        let output_csv = scratch.path().join("predictions.csv");
        let command = self.render_command(&input_dir, &output_csv);
        let out = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .output()
            .map_err(|e| Error::External(format!("cannot spawn `{command}`: {e}")))?;
        if !out.status.success() {
            return Err(Error::External(format!(
                "`{command}` exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let rows = parse_predictions(&output_csv, self.class_names.len())?;
        batch
            .iter()
            .map(|(id, _)| {
                rows.get(*id).cloned().ok_or_else(|| {
                    Error::External(format!("output is missing sample_id {id:?}"))
                })
            })
            .collect()
    }
}

impl PredictionOracle for ExternalBatchOracle {
    fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn predict(&self, volume: &MultiModalVolume) -> Result<ClassProbabilities> {
        Ok(self.run(&[("single", volume)])?.remove(0))
    }

    fn predict_batch(
        &self,
        batch: &[(&str, &MultiModalVolume)],
    ) -> Result<Vec<ClassProbabilities>> {
        self.run(batch)
    }
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

fn parse_predictions(path: &Path, n_classes: usize) -> Result<HashMap<String, ClassProbabilities>> {
    let bad = |msg: String| Error::External(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.get(0) != Some("sample_id") || header.len() != n_classes + 1 {
        return Err(bad(format!(
            "expected header sample_id + {n_classes} probability columns, got {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let id = rec[0].to_string();
        let probs = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("sample_id {id:?}: {e}")))?;
        let probs = ClassProbabilities::new(probs)
            .map_err(|e| bad(format!("sample_id {id:?}: {e}")))?;
        rows.insert(id, probs);
    }
    Ok(rows)
}

/// Scores every manifest sample with one external invocation.
pub fn external_batch_predict(
    manifest: &DatasetManifest,
    command_template: &str,
) -> Result<PredictionCache> {
    let oracle = ExternalBatchOracle::new(command_template, manifest.class_names.clone())?;
    let samples = load_samples(manifest)?;
    let batch: Vec<(&str, &MultiModalVolume)> =
        samples.iter().map(|s| (s.id.as_str(), &s.volume)).collect();
    let preds = oracle.predict_batch(&batch)?;
    let cache = PredictionCache::new();
    for (s, p) in samples.iter().zip(preds) {
        cache.insert(CacheKey::new(&s.id, "full", "none"), p);
    }
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_needs_placeholders() {
        let classes = vec!["a".to_string(), "b".to_string()];
        assert!(ExternalBatchOracle::new("run {input_dir}", classes.clone()).is_err());
        assert!(ExternalBatchOracle::new("run {input_dir} {output_csv}", classes).is_ok());
    }

    #[test]
    fn quoting_survives_apostrophes() {
        assert_eq!(shell_quote(Path::new("/a/it's")), r"'/a/it'\''s'");
    }
}
