//! The MMV container: one JSON header line followed by raw little-endian
//! `f32` values, modality-major.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dims, Layout, MultiModalVolume, SaliencyMap, SegmentationMask};
use crate::error::{Error, Result};

pub const MMV_VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Volume,
    Mask,
    Saliency,
}

/// Field order here is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmvHeader {
    pub mmv: u32,
    pub kind: FileKind,
    pub modalities: Vec<String>,
    pub dims: Vec<usize>,
    pub dtype: String,
}

impl MmvHeader {
    pub fn new(kind: FileKind, layout: &Layout) -> Self {
        MmvHeader {
            mmv: MMV_VERSION,
            kind,
            modalities: layout.modalities().to_vec(),
            dims: layout.dims().as_vec(),
            dtype: DTYPE_F32LE.to_string(),
        }
    }

    pub fn layout(&self) -> Result<Layout> {
        let dims = Dims::from_slice(&self.dims)?;
        Layout::new(self.modalities.clone(), dims)
    }

    pub fn payload_bytes(&self) -> usize {
        self.modalities.len() * self.dims.iter().product::<usize>() * 4
    }

    pub fn to_line(&self) -> String {
        // serde_json never emits a raw newline inside a compact document.
        let mut s = serde_json::to_string(self).expect("header serializes");
        s.push('\n');
        s
    }
}

fn write_raw(path: &Path, header: &MmvHeader, values: impl Iterator<Item = f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(header.to_line().as_bytes())
        .map_err(|e| Error::io(path, e))?;
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses an MMV byte buffer into its header and values.
pub(crate) fn decode(bytes: &[u8]) -> Result<(MmvHeader, Layout, Vec<f32>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Header("missing header terminator".into()))?;
    let text = std::str::from_utf8(&bytes[..nl])
        .map_err(|e| Error::Header(format!("header is not UTF-8: {e}")))?;
    let header: MmvHeader =
        serde_json::from_str(text).map_err(|e| Error::Header(e.to_string()))?;
    if header.mmv != MMV_VERSION {
        return Err(Error::Header(format!("unsupported mmv version {}", header.mmv)));
    }
    if header.dtype != DTYPE_F32LE {
        return Err(Error::Header(format!("unsupported dtype {:?}", header.dtype)));
    }
    let layout = header.layout()?;
    let payload = &bytes[nl + 1..];
    let expected = layout.len() * 4;
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, layout, values))
}

fn read_raw(path: &Path, kind: FileKind) -> Result<(Layout, Vec<f32>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let (header, layout, values) = decode(&bytes)?;
    if header.kind != kind {
        return Err(Error::Header(format!(
            "{}: expected kind {kind:?}, found {:?}",
            path.display(),
            header.kind
        )));
    }
    Ok((layout, values))
}

pub fn write_volume(volume: &MultiModalVolume, path: impl AsRef<Path>) -> Result<()> {
    // Volumes can only be built through validating constructors, but the
    // finiteness check is cheap next to disk I/O.
    if volume.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant("volume contains non-finite values".into()));
    }
    let header = MmvHeader::new(FileKind::Volume, volume.layout());
    write_raw(path.as_ref(), &header, volume.data().iter().copied())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<MultiModalVolume> {
    let (layout, values) = read_raw(path.as_ref(), FileKind::Volume)?;
    MultiModalVolume::new(layout, values)
}

pub fn write_mask(mask: &SegmentationMask, path: impl AsRef<Path>) -> Result<()> {
    let header = MmvHeader::new(FileKind::Mask, mask.layout());
    let values = mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 });
    write_raw(path.as_ref(), &header, values)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<SegmentationMask> {
    let (layout, values) = read_raw(path.as_ref(), FileKind::Mask)?;
    SegmentationMask::from_f32(layout, &values)
}

/// Reads a mask for `layout`, replicating a single-modality mask across all
/// modalities when needed.
pub fn read_mask_for(path: impl AsRef<Path>, layout: &Layout) -> Result<SegmentationMask> {
    let mask = read_mask(path)?;
    if mask.layout().n_modalities() == 1 && layout.n_modalities() > 1 {
        return mask.broadcast(layout);
    }
    if mask.layout().n_modalities() != layout.n_modalities()
        || mask.layout().dims() != layout.dims()
    {
        mask.layout().ensure_same(layout, "mask vs volume")?;
    }
    // Mask modality names are informational; positions decide pairing.
    SegmentationMask::new(layout.clone(), mask.data().to_vec())
}

pub fn write_saliency(map: &SaliencyMap, path: impl AsRef<Path>) -> Result<()> {
    let header = MmvHeader::new(FileKind::Saliency, map.layout());
    write_raw(path.as_ref(), &header, map.data().iter().map(|&v| v as f32))
}

pub fn read_saliency(path: impl AsRef<Path>) -> Result<SaliencyMap> {
    let (layout, values) = read_raw(path.as_ref(), FileKind::Saliency)?;
    SaliencyMap::new(layout, values.into_iter().map(f64::from).collect())
}
