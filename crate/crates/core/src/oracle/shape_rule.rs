//! Reference classifier: round tumors are LGG, irregular tumors are HGG.
//!
//! The classifier blends modalities with fixed weights, thresholds the
//! blend, keeps the largest connected component and maps its circularity
//! through a logistic. Which modalities carry weight decides which
//! modalities the model "attends" to.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ClassProbabilities, PredictionOracle};
use crate::error::{Error, Result};
use crate::tensorio::{Dims, MultiModalVolume};

pub const CLASS_LGG: usize = 0;
pub const CLASS_HGG: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRuleClassifier {
    pub modality_weights: Vec<f64>,
    pub intensity_threshold: f64,
    pub circularity_cutoff: f64,
    pub softness: f64,
}

impl ShapeRuleClassifier {
    pub const DEFAULT_THRESHOLD: f64 = 0.4;
    pub const DEFAULT_CUTOFF: f64 = 0.9;
    pub const DEFAULT_SOFTNESS: f64 = 0.1;

    pub fn new(modality_weights: Vec<f64>) -> Result<Self> {
        let cfg = ShapeRuleClassifier {
            modality_weights,
            intensity_threshold: Self::DEFAULT_THRESHOLD,
            circularity_cutoff: Self::DEFAULT_CUTOFF,
            softness: Self::DEFAULT_SOFTNESS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Puts all weight on modality `m` of `n`.
    pub fn attending(m: usize, n: usize) -> Result<Self> {
        if m >= n {
            return Err(Error::Config(format!("modality {m} out of range for {n}")));
        }
        let mut w = vec![0.0; n];
        w[m] = 1.0;
        Self::new(w)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.modality_weights;
        if w.is_empty() || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config("weights must be finite and nonnegative".into()));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::Config("at least one weight must be positive".into()));
        }
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.intensity_threshold) {
            return Err(Error::Config("intensity_threshold must lie in (0, 1)".into()));
        }
        if !unit(self.circularity_cutoff) {
            return Err(Error::Config("circularity_cutoff must lie in (0, 1)".into()));
        }
        if !(self.softness > 0.0 && self.softness.is_finite()) {
            return Err(Error::Config("softness must be positive".into()));
        }
        Ok(())
    }
}

impl PredictionOracle for ShapeRuleClassifier {
    fn n_classes(&self) -> usize {
        2
    }

    fn predict(&self, volume: &MultiModalVolume) -> Result<ClassProbabilities> {
        predict_shape_rule(self, volume)
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn predict_shape_rule(
    cfg: &ShapeRuleClassifier,
    volume: &MultiModalVolume,
) -> Result<ClassProbabilities> {
    let layout = volume.layout();
    if cfg.modality_weights.len() != layout.n_modalities() {
        return Err(Error::Config(format!(
            "classifier has {} weights, volume has {} modalities",
            cfg.modality_weights.len(),
            layout.n_modalities()
        )));
    }
    let total: f64 = cfg.modality_weights.iter().sum();
    let n = layout.spatial_len();
    let mut combined = vec![0.0f64; n];
    for (m, &w) in cfg.modality_weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (c, &x) in combined.iter_mut().zip(volume.modality(m)) {
            *c += w * f64::from(x);
        }
    }
    let foreground: Vec<bool> = combined
        .iter()
        .map(|&c| c / total > cfg.intensity_threshold)
        .collect();
    let dims = layout.dims();
    let component = largest_component(&foreground, dims);
    let Some(c) = circularity(&component, dims) else {
        return Ok(ClassProbabilities::uniform(2));
    };
    let p_lgg = logistic((c - cfg.circularity_cutoff) / cfg.softness);
    Ok(ClassProbabilities(vec![p_lgg, 1.0 - p_lgg]))
}

/// Face-adjacent neighbors of `i`: 4 in 2D, 6 in 3D. `None` marks a
/// neighbor outside the image.
fn face_neighbors(dims: Dims, i: usize) -> impl Iterator<Item = Option<usize>> {
    let (y, x, z) = dims.coords(i);
    let out = [
        (y > 0).then(|| dims.index(y - 1, x, z)),
        (y + 1 < dims.height).then(|| dims.index(y + 1, x, z)),
        (x > 0).then(|| dims.index(y, x - 1, z)),
        (x + 1 < dims.width).then(|| dims.index(y, x + 1, z)),
        (z > 0).then(|| dims.index(y, x, z - 1)),
        (z + 1 < dims.depth_or_one()).then(|| dims.index(y, x, z + 1)),
    ];
    let k = if dims.is_3d() { 6 } else { 4 };
    out.into_iter().take(k)
}

/// Largest face-connected component of `foreground`. Ties keep the
/// component found first in scan order.
pub fn largest_component(foreground: &[bool], dims: Dims) -> Vec<bool> {
    let n = foreground.len();
    let mut label = vec![usize::MAX; n];
    let mut best: Option<(usize, usize)> = None; // (label, size)
    let mut queue = VecDeque::new();
    let mut next = 0;
    for start in 0..n {
        if !foreground[start] || label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for j in face_neighbors(dims, i).flatten() {
                if foreground[j] && label[j] == usize::MAX {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((next, size));
        }
        next += 1;
    }
    match best {
        Some((l, _)) => label.iter().map(|&x| x == l).collect(),
        None => vec![false; n],
    }
}

/// Circularity `4*pi*A / P^2` of a 2D region, or the sphericity analog
/// `pi^(1/3) * (6V)^(2/3) / S` in 3D. The perimeter (surface) is the count
/// of region voxels with at least one face neighbor outside the region.
/// Returns `None` for an empty region.
pub fn circularity(region: &[bool], dims: Dims) -> Option<f64> {
    let area = region.iter().filter(|&&b| b).count();
    if area == 0 {
        return None;
    }
    let boundary = region
        .iter()
        .enumerate()
        .filter(|&(i, &inside)| {
            inside && face_neighbors(dims, i).any(|j| j.is_none_or(|j| !region[j]))
        })
        .count();
    let a = area as f64;
    let p = boundary as f64;
    Some(if dims.is_3d() {
        PI.cbrt() * (6.0 * a).powf(2.0 / 3.0) / p
    } else {
        4.0 * PI * a / (p * p)
    })
}
