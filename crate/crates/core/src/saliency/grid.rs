use crate::error::{Error, Result};
use crate::tensorio::Layout;

/// Partition of a volume's voxels into feature segments.
///
/// With `per_modality` each modality has its own segment ids; otherwise one
/// id covers the same spatial block in every modality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentGrid {
    layout: Layout,
    per_modality: bool,
    segment_ids: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl SegmentGrid {
    /// Regular blocks of `block = [h, w, d]` voxels; `d` is ignored in 2D.
    /// Edge blocks are clipped.
    pub fn blocks(layout: &Layout, block: [usize; 3], per_modality: bool) -> Result<Self> {
        if block.contains(&0) {
            return Err(Error::Config(format!("block shape must be positive: {block:?}")));
        }
        let dims = layout.dims();
        let n_blocks_along = |len: usize, b: usize| len.div_ceil(b);
        let nby = n_blocks_along(dims.height, block[0]);
        let nbx = n_blocks_along(dims.width, block[1]);
        let nbz = if dims.is_3d() {
            n_blocks_along(dims.depth_or_one(), block[2])
        } else {
            1
        };
        let spatial_blocks = nby * nbx * nbz;
        let spatial: Vec<usize> = (0..dims.spatial_len())
            .map(|i| {
                let (y, x, z) = dims.coords(i);
                let bz = if dims.is_3d() { z / block[2] } else { 0 };
                ((y / block[0]) * nbx + x / block[1]) * nbz + bz
            })
            .collect();
        let ids = (0..layout.n_modalities())
            .flat_map(|m| {
                let offset = if per_modality { m * spatial_blocks } else { 0 };
                spatial.iter().map(move |&s| s + offset)
            })
            .collect();
        Self::from_ids(layout, ids, per_modality)
    }

    /// Arbitrary segmentation. Ids must be dense from 0; a shared grid must
    /// repeat the same ids in every modality.
    pub fn from_ids(layout: &Layout, segment_ids: Vec<usize>, per_modality: bool) -> Result<Self> {
        if segment_ids.len() != layout.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} segment ids for {} voxels",
                segment_ids.len(),
                layout.len()
            )));
        }
        if !per_modality {
            let n = layout.spatial_len();
            let first = &segment_ids[..n];
            if segment_ids.chunks(n).any(|c| c != first) {
                return Err(Error::Invariant(
                    "shared grid must use identical ids in every modality".into(),
                ));
            }
        }
        let k = segment_ids.iter().max().map_or(0, |&m| m + 1);
        let mut members = vec![Vec::new(); k];
        for (i, &id) in segment_ids.iter().enumerate() {
            members[id].push(i);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::Invariant(format!("segment id {empty} is unused")));
        }
        Ok(SegmentGrid {
            layout: layout.clone(),
            per_modality,
            segment_ids,
            members,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn per_modality(&self) -> bool {
        self.per_modality
    }

    pub fn n_segments(&self) -> usize {
        self.members.len()
    }

    pub fn segment_ids(&self) -> &[usize] {
        &self.segment_ids
    }

    /// Flat voxel indices belonging to segment `k`.
    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::Dims;

    #[test]
    fn per_modality_blocks() {
        let layout = Layout::new(vec!["a", "b"], Dims::new_2d(4, 4)).unwrap();
        let g = SegmentGrid::blocks(&layout, [2, 2, 1], true).unwrap();
        assert_eq!(g.n_segments(), 8);
        assert!(g.members(0).iter().all(|&i| i < 16));
        assert!(g.members(4).iter().all(|&i| i >= 16));
        assert_eq!(g.members(0), &[0, 1, 4, 5]);
    }

    #[test]
    fn shared_blocks_span_modalities() {
        let layout = Layout::new(vec!["a", "b"], Dims::new_2d(4, 4)).unwrap();
        let g = SegmentGrid::blocks(&layout, [2, 2, 1], false).unwrap();
        assert_eq!(g.n_segments(), 4);
        assert_eq!(g.members(0), &[0, 1, 4, 5, 16, 17, 20, 21]);
    }

    #[test]
    fn clipped_edges_and_3d() {
        let layout = Layout::new(vec!["a"], Dims::new_3d(5, 3, 4)).unwrap();
        let g = SegmentGrid::blocks(&layout, [2, 2, 2], true).unwrap();
        assert_eq!(g.n_segments(), 3 * 2 * 2);
        let covered: usize = (0..g.n_segments()).map(|k| g.members(k).len()).sum();
        assert_eq!(covered, layout.len());
    }

    #[test]
    fn sparse_ids_rejected() {
        let layout = Layout::new(vec!["a"], Dims::new_2d(1, 3)).unwrap();
        assert!(SegmentGrid::from_ids(&layout, vec![0, 2, 2], true).is_err());
        let two = Layout::new(vec!["a", "b"], Dims::new_2d(1, 2)).unwrap();
        assert!(SegmentGrid::from_ids(&two, vec![0, 1, 1, 0], false).is_err());
    }
}
