use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{read_mask_for, read_volume, MultiModalVolume, SegmentationMask};
use crate::error::{Error, Result};

/// One labeled sample. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub label: usize,
    pub volume_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub saliency_paths: BTreeMap<String, String>,
    /// Rendered tumor kind per modality, written by the synthetic generator.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tumor_kinds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub records: Vec<ManifestRecord>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(class_names: Vec<String>, records: Vec<ManifestRecord>) -> Self {
        DatasetManifest {
            class_names,
            records,
            base_dir: PathBuf::new(),
        }
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks id uniqueness and label range; with `check_paths` also that
    /// every referenced file exists.
    pub fn validate(&self, check_paths: bool) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Invariant("manifest has no classes".into()));
        }
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.sample_id.as_str()) {
                return Err(Error::Invariant(format!("duplicate sample_id {:?}", r.sample_id)));
            }
            if r.label >= self.n_classes() {
                return Err(Error::Invariant(format!(
                    "sample {:?} has label {} but only {} classes",
                    r.sample_id,
                    r.label,
                    self.n_classes()
                )));
            }
            if check_paths {
                let paths = std::iter::once(&r.volume_path)
                    .chain(r.mask_path.iter())
                    .chain(r.saliency_paths.values());
                for p in paths {
                    let full = self.resolve(p);
                    if !full.exists() {
                        return Err(Error::Invariant(format!(
                            "sample {:?}: missing file {}",
                            r.sample_id,
                            full.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = manifest.with_base_dir(base);
        manifest.validate(true)?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A manifest record loaded into memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub volume: MultiModalVolume,
    pub mask: Option<SegmentationMask>,
}

/// Loads every record of `manifest`; failures carry the sample id.
pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            let load = || -> Result<Sample> {
                let volume = read_volume(manifest.resolve(&r.volume_path))?;
                let mask = match &r.mask_path {
                    Some(p) => Some(read_mask_for(manifest.resolve(p), volume.layout())?),
                    None => None,
                };
                Ok(Sample {
                    id: r.sample_id.clone(),
                    label: r.label,
                    volume,
                    mask,
                })
            };
            load().map_err(|e| e.in_sample(&r.sample_id))
        })
        .collect()
}
