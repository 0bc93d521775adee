//! Containers for multi-modal images, feature masks and saliency maps.
//!
//! All three containers share a [`Layout`]: an ordered list of modality
//! names plus spatial dimensions. Data is stored modality-major and
//! row-major within a modality, so flat index `m * spatial_len + i` refers
//! to the same location `i` of modality `m` in every container with an
//! equal layout.

mod manifest;
mod mmv;

pub use manifest::{load_samples, DatasetManifest, ManifestRecord, Sample};
pub use mmv::{
    read_mask, read_mask_for, read_saliency, read_volume, write_mask, write_saliency,
    write_volume, FileKind, MmvHeader,
};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial extent: `(H, W)` or `(H, W, D)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub depth: Option<usize>,
}

impl Dims {
    pub fn new_2d(height: usize, width: usize) -> Self {
        Dims {
            height,
            width,
            depth: None,
        }
    }

    pub fn new_3d(height: usize, width: usize, depth: usize) -> Self {
        Dims {
            height,
            width,
            depth: Some(depth),
        }
    }

    pub fn from_slice(dims: &[usize]) -> Result<Self> {
        let d = match *dims {
            [h, w] => Dims::new_2d(h, w),
            [h, w, d] => Dims::new_3d(h, w, d),
            _ => {
                return Err(Error::Invariant(format!(
                    "dims must have 2 or 3 entries, got {}",
                    dims.len()
                )))
            }
        };
        if d.as_vec().contains(&0) {
            return Err(Error::Invariant(format!("dims must be positive: {dims:?}")));
        }
        Ok(d)
    }

    pub fn as_vec(&self) -> Vec<usize> {
        match self.depth {
            Some(d) => vec![self.height, self.width, d],
            None => vec![self.height, self.width],
        }
    }

    pub fn depth_or_one(&self) -> usize {
        self.depth.unwrap_or(1)
    }

    pub fn spatial_len(&self) -> usize {
        self.height * self.width * self.depth_or_one()
    }

    pub fn is_3d(&self) -> bool {
        self.depth.is_some()
    }

    /// Flat spatial index of `(y, x, z)`; `z` is ignored for 2D.
    #[inline]
    pub fn index(&self, y: usize, x: usize, z: usize) -> usize {
        (y * self.width + x) * self.depth_or_one() + z
    }

    /// Inverse of [`Dims::index`].
    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let d = self.depth_or_one();
        let z = i % d;
        let yx = i / d;
        (yx / self.width, yx % self.width, z)
    }
}

/// Modality names plus spatial dims. Shared by every container type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    modalities: Vec<String>,
    dims: Dims,
}

impl Layout {
    pub fn new<S: Into<String>>(modalities: Vec<S>, dims: Dims) -> Result<Self> {
        let modalities: Vec<String> = modalities.into_iter().map(Into::into).collect();
        if modalities.is_empty() {
            return Err(Error::Invariant("at least one modality is required".into()));
        }
        let mut seen = HashSet::new();
        for name in &modalities {
            if !seen.insert(name.as_str()) {
                return Err(Error::Invariant(format!("duplicate modality name {name:?}")));
            }
        }
        Dims::from_slice(&dims.as_vec())?;
        Ok(Layout { modalities, dims })
    }

    pub fn modalities(&self) -> &[String] {
        &self.modalities
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spatial_len(&self) -> usize {
        self.dims.spatial_len()
    }

    pub fn len(&self) -> usize {
        self.n_modalities() * self.spatial_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.modalities
            .iter()
            .position(|m| m.eq_ignore_ascii_case(name))
    }

    pub fn modality_range(&self, m: usize) -> std::ops::Range<usize> {
        let n = self.spatial_len();
        m * n..(m + 1) * n
    }

    pub(crate) fn ensure_same(&self, other: &Layout, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?}x{:?} vs {:?}x{:?}",
                self.modalities,
                self.dims.as_vec(),
                other.modalities,
                other.dims.as_vec()
            )));
        }
        Ok(())
    }
}

/// Dense `M x H x W (x D)` image, the explained input.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalVolume {
    layout: Layout,
    data: Vec<f32>,
}

impl MultiModalVolume {
    pub fn new(layout: Layout, data: Vec<f32>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::Invariant(format!(
                "volume data has {} values, layout needs {}",
                data.len(),
                layout.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("non-finite value at index {i}")));
        }
        Ok(MultiModalVolume { layout, data })
    }

    pub fn zeros(layout: Layout) -> Self {
        let data = vec![0.0; layout.len()];
        MultiModalVolume { layout, data }
    }

    /// Builds a sibling volume from already-validated values.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        MultiModalVolume {
            layout: self.layout.clone(),
            data,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn modality(&self, m: usize) -> &[f32] {
        &self.data[self.layout.modality_range(m)]
    }
}

/// Per-modality binary feature localization field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    layout: Layout,
    data: Vec<bool>,
}

impl SegmentationMask {
    pub fn new(layout: Layout, data: Vec<bool>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::Invariant(format!(
                "mask data has {} values, layout needs {}",
                data.len(),
                layout.len()
            )));
        }
        Ok(SegmentationMask { layout, data })
    }

    /// Accepts only exact `0.0` / `1.0` values.
    pub fn from_f32(layout: Layout, values: &[f32]) -> Result<Self> {
        let data = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v == 1.0 {
                    Ok(true)
                } else if v == 0.0 {
                    Ok(false)
                } else {
                    Err(Error::Invariant(format!("mask value {v} at index {i} is not 0/1")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        SegmentationMask::new(layout, data)
    }

    /// Replicates a single-modality mask across every modality of `layout`.
    pub fn broadcast(&self, layout: &Layout) -> Result<Self> {
        if self.layout.n_modalities() != 1 || self.layout.dims() != layout.dims() {
            return Err(Error::ShapeMismatch(format!(
                "cannot broadcast a {}-modality {:?} mask onto {:?}",
                self.layout.n_modalities(),
                self.layout.dims().as_vec(),
                layout.dims().as_vec()
            )));
        }
        let data = self.data.repeat(layout.n_modalities());
        SegmentationMask::new(layout.clone(), data)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn modality(&self, m: usize) -> &[bool] {
        &self.data[self.layout.modality_range(m)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Per-modality importance field aligned with a volume.
///
/// Values are held in `f64`; on disk they are stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    layout: Layout,
    data: Vec<f64>,
    postprocessed: bool,
}

impl SaliencyMap {
    pub fn new(layout: Layout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::Invariant(format!(
                "saliency data has {} values, layout needs {}",
                data.len(),
                layout.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("non-finite saliency at index {i}")));
        }
        Ok(SaliencyMap {
            layout,
            data,
            postprocessed: false,
        })
    }

    pub fn zeros(layout: Layout) -> Self {
        let data = vec![0.0; layout.len()];
        SaliencyMap {
            layout,
            data,
            postprocessed: false,
        }
    }

    /// Marks the map as normalized; every value must lie in `[0, 1]`.
    pub fn into_postprocessed(self) -> Result<Self> {
        if let Some(v) = self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invariant(format!(
                "postprocessed saliency value {v} outside [0, 1]"
            )));
        }
        Ok(SaliencyMap {
            postprocessed: true,
            ..self
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn modality(&self, m: usize) -> &[f64] {
        &self.data[self.layout.modality_range(m)]
    }

    pub fn is_postprocessed(&self) -> bool {
        self.postprocessed
    }
}
