use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{MethodConfig, TargetScore};
use crate::error::{Error, Result};
use crate::tensorio::{Dims, MultiModalVolume, SaliencyMap};
use crate::util::rng_for;

fn starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    (0..=len - window).step_by(stride).collect()
}

fn mean_std(values: &[f32]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Window offsets (flat spatial indices) relative to a window origin.
fn window_voxels(dims: Dims, origin: (usize, usize, usize), win: [usize; 3]) -> Vec<usize> {
    let mut out = Vec::with_capacity(win.iter().product());
    for dy in 0..win[0] {
        for dx in 0..win[1] {
            for dz in 0..win[2] {
                out.push(dims.index(origin.0 + dy, origin.1 + dx, origin.2 + dz));
            }
        }
    }
    out
}

/// Modality-wise sliding-window occlusion.
///
/// Each window of each modality is replaced by Gaussian noise with that
/// modality's mean and standard deviation. The score drop is credited to
/// every voxel of the window, and each voxel reports the average over the
/// windows covering it. Voxels no window covers get 0.
pub fn occlusion(
    volume: &MultiModalVolume,
    target: &dyn TargetScore,
    cfg: &MethodConfig,
) -> Result<SaliencyMap> {
    let layout = volume.layout();
    cfg.validate(layout)?;
    let dims = layout.dims();
    let (mut win, mut stride) = (cfg.window, cfg.stride);
    if !dims.is_3d() {
        win[2] = 1;
        stride[2] = 1;
    }
    let mut origins = Vec::new();
    for &y in &starts(dims.height, win[0], stride[0]) {
        for &x in &starts(dims.width, win[1], stride[1]) {
            for &z in &starts(dims.depth_or_one(), win[2], stride[2]) {
                origins.push((y, x, z));
            }
        }
    }
    let n_mod = layout.n_modalities();
    let stats: Vec<(f64, f64)> = (0..n_mod).map(|m| mean_std(volume.modality(m))).collect();
    let base = target.score(volume)?;

    let jobs: Vec<(usize, usize)> = (0..n_mod)
        .flat_map(|m| (0..origins.len()).map(move |w| (m, w)))
        .collect();
    let deltas = jobs
        .par_iter()
        .map(|&(m, w)| {
            let (mean, std) = stats[m];
            let mut rng = rng_for(cfg.seed, (m * origins.len() + w) as u64);
            let normal = (std > 0.0)
                .then(|| Normal::new(mean, std))
                .transpose()
                .map_err(|e| Error::Invariant(format!("occlusion noise: {e}")))?;
            let mut data = volume.data().to_vec();
            let offset = layout.modality_range(m).start;
            for i in window_voxels(dims, origins[w], win) {
                let draw = normal.as_ref().map_or(mean, |n| n.sample(&mut rng));
                data[offset + i] = draw as f32;
            }
            Ok(base - target.score(&volume.with_data(data))?)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut sum = vec![0.0; layout.len()];
    let mut count = vec![0u32; layout.len()];
    for (&(m, w), delta) in jobs.iter().zip(deltas) {
        let offset = layout.modality_range(m).start;
        for i in window_voxels(dims, origins[w], win) {
            sum[offset + i] += delta;
            count[offset + i] += 1;
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / f64::from(c) } else { 0.0 })
        .collect();
    SaliencyMap::new(layout.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::Method;
    use crate::tensorio::Layout;

    fn volume() -> MultiModalVolume {
        let layout = Layout::new(vec!["a", "b"], Dims::new_2d(4, 4)).unwrap();
        let data = (0..32).map(|i| (i % 7) as f32 * 0.5).collect();
        MultiModalVolume::new(layout, data).unwrap()
    }

    fn cfg(window: usize, stride: usize, seed: u64) -> MethodConfig {
        let mut c = MethodConfig::new(Method::Occlusion).with_seed(seed);
        c.window = [window, window, 1];
        c.stride = [stride, stride, 1];
        c
    }

    #[test]
    fn constant_target_gives_zero_map() {
        let s = occlusion(&volume(), &|_: &MultiModalVolume| 0.3, &cfg(2, 1, 0)).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn whole_modality_window_is_uniform() {
        let target = |v: &MultiModalVolume| v.data().iter().map(|&x| f64::from(x)).sum::<f64>();
        let s = occlusion(&volume(), &target, &cfg(4, 8, 1)).unwrap();
        for m in 0..2 {
            let first = s.modality(m)[0];
            assert!(s.modality(m).iter().all(|&v| v == first));
        }
    }

    #[test]
    fn mc_expectation_at_probed_voxel() {
        let v = volume();
        let (mu, sd) = mean_std(v.modality(0));
        let x00 = f64::from(v.data()[0]);
        let target = |v: &MultiModalVolume| f64::from(v.data()[0]);
        let n = 400;
        let mut at_probe = 0.0;
        let mut elsewhere_max: f64 = 0.0;
        for seed in 0..n {
            let s = occlusion(&v, &target, &cfg(1, 1, seed)).unwrap();
            at_probe += s.data()[0];
            elsewhere_max = s.data()[1..].iter().fold(elsewhere_max, |a, b| a.max(b.abs()));
        }
        let mean = at_probe / n as f64;
        let tol = 3.0 * sd / (n as f64).sqrt();
        assert!((mean - (x00 - mu)).abs() <= tol, "mean {mean}, expect {}", x00 - mu);
        assert_eq!(elsewhere_max, 0.0);
    }

    #[test]
    fn zero_variance_modality_uses_mean() {
        let layout = Layout::new(vec!["a"], Dims::new_2d(2, 2)).unwrap();
        let v = MultiModalVolume::new(layout, vec![2.0; 4]).unwrap();
        let target = |v: &MultiModalVolume| f64::from(v.data()[0]);
        let s = occlusion(&v, &target, &cfg(1, 1, 0)).unwrap();
        assert!(s.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reproducible_per_seed() {
        let target = |v: &MultiModalVolume| f64::from(v.data()[3]) * f64::from(v.data()[20]);
        let a = occlusion(&volume(), &target, &cfg(2, 1, 7)).unwrap();
        let b = occlusion(&volume(), &target, &cfg(2, 1, 7)).unwrap();
        assert_eq!(a, b);
    }
}
