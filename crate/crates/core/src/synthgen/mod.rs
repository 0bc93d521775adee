//! Procedural two-class tumor images with controlled per-modality label
//! alignment.
//!
//! LGG samples carry a round tumor and HGG samples an irregular one, but
//! each modality shows the label-consistent shape only with its alignment
//! probability; otherwise it shows the other class's shape. A model that
//! relies on a well-aligned modality is accurate, one that relies on a
//! chance-level modality is not.

mod shape;

pub use shape::{ShapeSpec, TumorKind};

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oracle::{CLASS_HGG, CLASS_LGG};
use crate::tensorio::{
    write_mask, write_volume, DatasetManifest, Dims, Layout, ManifestRecord, MultiModalVolume,
    SegmentationMask,
};
use crate::util::rng_for;

pub const CLASS_NAMES: [&str; 2] = ["LGG", "HGG"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    BrainTexture,
    None,
}

impl FromStr for Background {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "brain_texture" | "brain" => Ok(Background::BrainTexture),
            "none" => Ok(Background::None),
            _ => Err(Error::Config(format!("unknown background {s:?}"))),
        }
    }
}

/// Which modality a probe dataset aligns with the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTarget {
    T1c,
    Flair,
}

impl ProbeTarget {
    pub fn modality(self) -> &'static str {
        match self {
            ProbeTarget::T1c => "T1C",
            ProbeTarget::Flair => "FLAIR",
        }
    }

    fn other(self) -> Self {
        match self {
            ProbeTarget::T1c => ProbeTarget::Flair,
            ProbeTarget::Flair => ProbeTarget::T1c,
        }
    }
}

impl fmt::Display for ProbeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.modality().to_ascii_lowercase())
    }
}

impl FromStr for ProbeTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1c" => Ok(ProbeTarget::T1c),
            "flair" => Ok(ProbeTarget::Flair),
            _ => Err(Error::Config(format!("probe must be t1c or flair, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub image_size: usize,
    pub modality_names: Vec<String>,
    /// Probability that modality m shows the label-consistent shape.
    pub alignment: Vec<f64>,
    /// LGG : HGG.
    pub class_balance: [u32; 2],
    pub background: Background,
    pub seed: u64,
    /// Prefix of generated sample ids.
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 200,
            image_size: 64,
            modality_names: ["T1", "T1C", "T2", "FLAIR"].map(String::from).to_vec(),
            alignment: vec![0.5, 1.0, 0.5, 0.7],
            class_balance: [1, 1],
            background: Background::BrainTexture,
            seed: 0,
            id_prefix: "synth".into(),
        }
    }
}

impl SynthConfig {
    /// Probe configuration: no background, `which` fully aligned, the other
    /// of T1C/FLAIR never aligned, remaining modalities at chance.
    pub fn probe(mut self, which: ProbeTarget) -> Result<Self> {
        let idx = |name: &str| {
            self.modality_names
                .iter()
                .position(|m| m.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Config(format!("probe needs a {name} modality")))
        };
        let (on, off) = (idx(which.modality())?, idx(which.other().modality())?);
        self.alignment = vec![0.5; self.modality_names.len()];
        self.alignment[on] = 1.0;
        self.alignment[off] = 0.0;
        self.background = Background::None;
        self.id_prefix = format!("probe_{which}");
        Ok(self)
    }

    /// Applies `name:p,name:p` overrides (names case-insensitive).
    pub fn set_alignment(&mut self, spec: &str) -> Result<()> {
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, p) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("expected name:prob, got {pair:?}")))?;
            let m = self
                .modality_names
                .iter()
                .position(|n| n.eq_ignore_ascii_case(name.trim()))
                .ok_or_else(|| Error::Config(format!("unknown modality {name:?}")))?;
            self.alignment[m] = p
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("{pair:?}: {e}")))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!("image_size {} < 16", self.image_size)));
        }
        if self.alignment.len() != self.modality_names.len() {
            return Err(Error::Config(format!(
                "{} alignment values for {} modalities",
                self.alignment.len(),
                self.modality_names.len()
            )));
        }
        if let Some(p) = self.alignment.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("alignment {p} outside [0, 1]")));
        }
        if self.class_balance == [0, 0] {
            return Err(Error::Config("class_balance cannot be 0:0".into()));
        }
        self.layout().map(|_| ())
    }

    pub fn layout(&self) -> Result<Layout> {
        Layout::new(
            self.modality_names.clone(),
            Dims::new_2d(self.image_size, self.image_size),
        )
    }

    /// Labels of all samples: exact class counts, shuffled with the seed.
    pub fn labels(&self) -> Vec<usize> {
        let [lgg, hgg] = self.class_balance.map(f64::from);
        let n_lgg = (self.n_samples as f64 * lgg / (lgg + hgg)).round() as usize;
        let mut labels = vec![CLASS_LGG; n_lgg];
        labels.resize(self.n_samples, CLASS_HGG);
        labels.shuffle(&mut rng_for(self.seed, u64::MAX));
        labels
    }

    pub fn sample_id(&self, index: usize) -> String {
        format!("{}_{index:05}", self.id_prefix)
    }
}

fn label_kind(label: usize) -> TumorKind {
    if label == CLASS_LGG {
        TumorKind::Round
    } else {
        TumorKind::Irregular
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub id: String,
    pub label: usize,
    /// Rendered tumor kind per modality.
    pub kinds: Vec<TumorKind>,
    pub volume: MultiModalVolume,
    pub mask: SegmentationMask,
}

/// Low-frequency texture inside a brain-like ellipse; 0 outside.
fn brain_background(size: usize, rng: &mut impl Rng) -> Vec<f32> {
    let s = size as f64;
    let (fy, fx) = (rng.random_range(1.0..3.0), rng.random_range(1.0..3.0));
    let (py, px) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    (0..size * size)
        .map(|i| {
            let y = (i / size) as f64 + 0.5;
            let x = (i % size) as f64 + 0.5;
            let inside = ((y - s / 2.0) / (0.45 * s)).powi(2) + ((x - s / 2.0) / (0.38 * s)).powi(2);
            if inside > 1.0 {
                return 0.0;
            }
            let wave = (TAU * fy * y / s + py).sin() * (TAU * fx * x / s + px).sin();
            (0.15 + 0.06 * wave) as f32
        })
        .collect()
}

/// Renders sample `index` with the given label. Depends only on
/// `(cfg.seed, index)`, never on other samples.
pub fn render_sample(cfg: &SynthConfig, index: usize, label: usize) -> Result<SyntheticSample> {
    let layout = cfg.layout()?;
    let size = cfg.image_size;
    let mut rng = rng_for(cfg.seed, index as u64);
    let truth = label_kind(label);
    let kinds: Vec<TumorKind> = cfg
        .alignment
        .iter()
        .map(|&p| {
            if rng.random_bool(p) {
                truth
            } else {
                truth.opposite()
            }
        })
        .collect();
    let (round, irregular) = ShapeSpec::draw_pair(size, &mut rng);
    round.validate(size)?;
    irregular.validate(size)?;
    let round_px = round.rasterize(size);
    let irregular_px = irregular.rasterize(size);

    let mut data = Vec::with_capacity(layout.len());
    let mut mask = Vec::with_capacity(layout.len());
    for &kind in &kinds {
        let support = match kind {
            TumorKind::Round => &round_px,
            TumorKind::Irregular => &irregular_px,
        };
        let mut channel = match cfg.background {
            Background::BrainTexture => brain_background(size, &mut rng),
            Background::None => vec![0.0; size * size],
        };
        let base: f64 = rng.random_range(0.6..0.95);
        for (v, &inside) in channel.iter_mut().zip(support) {
            if inside {
                let noisy = base + rng.random_range(-0.05..0.05);
                *v = noisy.clamp(0.5, 1.0) as f32;
            }
        }
        data.extend(channel);
        mask.extend_from_slice(support);
    }
    Ok(SyntheticSample {
        id: cfg.sample_id(index),
        label,
        kinds,
        volume: MultiModalVolume::new(layout.clone(), data)?,
        mask: SegmentationMask::new(layout, mask)?,
    })
}

/// All samples in memory, in index order.
pub fn generate_samples(cfg: &SynthConfig) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    let labels = cfg.labels();
    labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| render_sample(cfg, i, label))
        .collect()
}

/// Writes volumes, masks and `manifest.json` under `out_dir`.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out = out_dir.as_ref();
    for sub in ["volumes", "masks"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let labels = cfg.labels();
    let records = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let s = render_sample(cfg, i, label)?;
            let volume_path = format!("volumes/{}.mmv", s.id);
            let mask_path = format!("masks/{}.mmv", s.id);
            write_volume(&s.volume, out.join(&volume_path))?;
            write_mask(&s.mask, out.join(&mask_path))?;
            Ok(ManifestRecord {
                sample_id: s.id,
                label,
                volume_path,
                mask_path: Some(mask_path),
                saliency_paths: Default::default(),
                tumor_kinds: s.kinds.iter().map(|k| k.to_string()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(CLASS_NAMES.map(String::from).to_vec(), records)
        .with_base_dir(out);
    manifest.save(out.join("manifest.json"))?;
    Ok(manifest)
}

/// Probe dataset for `which` (see [`SynthConfig::probe`]).
pub fn generate_probe(
    cfg: &SynthConfig,
    which: ProbeTarget,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    generate_dataset(&cfg.clone().probe(which)?, out_dir)
}
