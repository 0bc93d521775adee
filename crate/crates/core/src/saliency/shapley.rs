use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::lime::solve_spd;
use super::{mask_segments, paint_segments, MethodConfig, SegmentGrid, TargetScore};
use crate::error::{Error, Result};
use crate::tensorio::{MultiModalVolume, SaliencyMap};
use crate::util::rng_for;

/// Above this many segments permutations are always sampled.
const MAX_ENUMERATED_PERMUTATION_SEGMENTS: usize = 8;
/// Above this many segments Kernel SHAP coalitions are always sampled.
const MAX_ENUMERATED_COALITION_SEGMENTS: usize = 20;

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// All permutations of `0..n` in lexicographic order.
fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut out = vec![p.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
        out.push(p.clone());
    }
}

/// Shapley value sampling over segments.
///
/// Each permutation adds segments one by one to an all-zero input; a
/// segment's attribution is its mean marginal score change. When
/// `n_samples >= K!` (and K is small) every permutation is used once,
/// which gives exact Shapley values.
pub fn shapley_sampling(
    volume: &MultiModalVolume,
    target: &dyn TargetScore,
    cfg: &MethodConfig,
    grid: &SegmentGrid,
) -> Result<SaliencyMap> {
    volume.layout().ensure_same(grid.layout(), "segment grid")?;
    cfg.validate(volume.layout())?;
    let k = grid.n_segments();
    let perms = if k <= MAX_ENUMERATED_PERMUTATION_SEGMENTS && cfg.n_samples >= factorial(k) {
        all_permutations(k)
    } else {
        let mut rng = rng_for(cfg.seed, 0);
        (0..cfg.n_samples)
            .map(|_| {
                let mut p: Vec<usize> = (0..k).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect()
    };
    let marginals = perms
        .par_iter()
        .map(|perm| {
            let mut present = vec![false; k];
            let mut prev = target.score(&mask_segments(volume, grid, |j| present[j]))?;
            let mut out = vec![0.0; k];
            for &s in perm {
                present[s] = true;
                let cur = target.score(&mask_segments(volume, grid, |j| present[j]))?;
                out[s] = cur - prev;
                prev = cur;
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut mean = vec![0.0; k];
    for m in &marginals {
        for (acc, v) in mean.iter_mut().zip(m) {
            *acc += v;
        }
    }
    let n = marginals.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    paint_segments(volume, grid, &mean)
}

fn binomial(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition of `size` out of `k` players.
fn shap_kernel(k: usize, size: usize) -> f64 {
    (k - 1) as f64 / (binomial(k, size) * size as f64 * (k - size) as f64)
}

/// Kernel SHAP over a segment grid shared by all modalities.
///
/// The empty and full coalitions enter as the efficiency constraint
/// `sum(phi) = f(full) - f(empty)`; the remaining coalitions are fitted by
/// weighted least squares under the Shapley kernel. All `2^K - 2`
/// coalitions are used when `n_samples` allows, otherwise coalitions are
/// drawn uniformly.
pub fn kernel_shap(
    volume: &MultiModalVolume,
    target: &dyn TargetScore,
    cfg: &MethodConfig,
    grid: &SegmentGrid,
) -> Result<SaliencyMap> {
    volume.layout().ensure_same(grid.layout(), "segment grid")?;
    cfg.validate(volume.layout())?;
    if grid.per_modality() {
        return Err(Error::Config(
            "kernel SHAP uses one segment grid shared by all modalities".into(),
        ));
    }
    let k = grid.n_segments();
    let f_full = target.score(volume)?;
    let f_empty = target.score(&mask_segments(volume, grid, |_| false))?;
    let delta = f_full - f_empty;
    if k == 1 {
        return paint_segments(volume, grid, &[delta]);
    }

    let enumerate = k <= MAX_ENUMERATED_COALITION_SEGMENTS && cfg.n_samples >= (1 << k) - 2;
    let coalitions: Vec<Vec<bool>> = if enumerate {
        (1u64..(1 << k) - 1)
            .map(|bits| (0..k).map(|j| bits >> j & 1 == 1).collect())
            .collect()
    } else {
        if cfg.n_samples < k + 2 {
            return Err(Error::Config(format!(
                "kernel SHAP needs n_samples >= {} for {k} segments",
                k + 2
            )));
        }
        let mut rng = rng_for(cfg.seed, 0);
        let mut out = Vec::with_capacity(cfg.n_samples);
        while out.len() < cfg.n_samples {
            let z: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
            let size = z.iter().filter(|&&b| b).count();
            if size > 0 && size < k {
                out.push(z);
            }
        }
        out
    };
    let y = coalitions
        .par_iter()
        .map(|z| target.score(&mask_segments(volume, grid, |j| z[j])))
        .collect::<Result<Vec<f64>>>()?;

    // eliminate phi_{K-1} = delta - sum of the others
    let last = k - 1;
    let mut gram = DMatrix::<f64>::zeros(last, last);
    let mut rhs = DVector::<f64>::zeros(last);
    for (z, &yz) in coalitions.iter().zip(&y) {
        let size = z.iter().filter(|&&b| b).count();
        let w = shap_kernel(k, size);
        let zl = f64::from(u8::from(z[last]));
        let x: Vec<f64> = (0..last).map(|j| f64::from(u8::from(z[j])) - zl).collect();
        let t = yz - f_empty - zl * delta;
        for a in 0..last {
            rhs[a] += w * x[a] * t;
            for b in 0..last {
                gram[(a, b)] += w * x[a] * x[b];
            }
        }
    }
    let mut phi = solve_spd(gram, &rhs, "kernel SHAP design")?;
    phi.push(delta - phi.iter().sum::<f64>());
    paint_segments(volume, grid, &phi)
}
