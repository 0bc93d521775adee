use rand::Rng;
use rayon::prelude::*;

use super::{mask_segments, paint_segments, SegmentGrid, TargetScore};
use crate::error::{Error, Result};
use crate::tensorio::{MultiModalVolume, SaliencyMap};
use crate::util::rng_for;

/// Zeroes one modality-specific segment at a time; every voxel of the
/// segment gets the resulting score drop.
pub fn feature_ablation(
    volume: &MultiModalVolume,
    target: &dyn TargetScore,
    grid: &SegmentGrid,
) -> Result<SaliencyMap> {
    volume.layout().ensure_same(grid.layout(), "segment grid")?;
    if !grid.per_modality() {
        return Err(Error::Config(
            "feature ablation needs a per-modality segment grid".into(),
        ));
    }
    let base = target.score(volume)?;
    let values = (0..grid.n_segments())
        .into_par_iter()
        .map(|k| Ok(base - target.score(&mask_segments(volume, grid, |j| j != k))?))
        .collect::<Result<Vec<f64>>>()?;
    paint_segments(volume, grid, &values)
}

/// Uniform random cyclic permutation (Sattolo); no element stays put.
fn cyclic_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    p
}

/// Permutes each shared segment's content across the batch and credits the
/// score drop of every sample to that segment, in all modalities.
///
/// Each segment draws its own derangement of the batch, seeded by
/// `(seed, segment)`.
pub fn feature_permutation(
    batch: &[(&MultiModalVolume, &dyn TargetScore)],
    grid: &SegmentGrid,
    seed: u64,
) -> Result<Vec<SaliencyMap>> {
    if batch.len() < 2 {
        return Err(Error::Config(
            "feature permutation needs a batch of at least two samples".into(),
        ));
    }
    if grid.per_modality() {
        return Err(Error::Config(
            "feature permutation uses one segment grid shared by all modalities".into(),
        ));
    }
    for (v, _) in batch {
        v.layout().ensure_same(grid.layout(), "feature permutation batch")?;
    }
    let base = batch
        .par_iter()
        .map(|(v, t)| t.score(v))
        .collect::<Result<Vec<f64>>>()?;
    let perms: Vec<Vec<usize>> = (0..grid.n_segments())
        .map(|k| cyclic_permutation(batch.len(), &mut rng_for(seed, k as u64)))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..grid.n_segments())
        .flat_map(|k| (0..batch.len()).map(move |s| (k, s)))
        .collect();
    let deltas = jobs
        .par_iter()
        .map(|&(k, s)| {
            let (volume, target) = batch[s];
            let donor = batch[perms[k][s]].0.data();
            let mut data = volume.data().to_vec();
            for &i in grid.members(k) {
                data[i] = donor[i];
            }
            Ok(base[s] - target.score(&volume.with_data(data))?)
        })
        .collect::<Result<Vec<f64>>>()?;

    let k_count = grid.n_segments();
    (0..batch.len())
        .map(|s| {
            let values: Vec<f64> = (0..k_count).map(|k| deltas[k * batch.len() + s]).collect();
            paint_segments(batch[s].0, grid, &values)
        })
        .collect()
}
