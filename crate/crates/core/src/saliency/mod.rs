//! Saliency post-processing and black-box perturbation attribution.
//!
//! Every method here only queries a scalar score of the explained class;
//! none needs gradients. Features are "superpixels" taken from a
//! [`SegmentGrid`] of regular blocks, either independent per modality or
//! shared by all modalities.

mod ablation;
mod config;
mod grid;
mod lime;
mod occlusion;
mod postprocess;
mod runlog;
mod shapley;

pub use ablation::{feature_ablation, feature_permutation};
pub use config::{Method, MethodConfig};
pub use grid::SegmentGrid;
pub use lime::lime;
pub use occlusion::occlusion;
pub use postprocess::{percentile_linear, postprocess, CAP_PERCENTILE};
pub use runlog::{RunLog, SampleTiming, RUNLOG_FILE};
pub use shapley::{kernel_shap, shapley_sampling};

use crate::error::Result;
use crate::oracle::PredictionOracle;
use crate::tensorio::{MultiModalVolume, SaliencyMap};

/// Scalar model output being explained, e.g. the probability of one class.
pub trait TargetScore: Sync {
    fn score(&self, volume: &MultiModalVolume) -> Result<f64>;
}

impl<F> TargetScore for F
where
    F: Fn(&MultiModalVolume) -> f64 + Sync,
{
    fn score(&self, volume: &MultiModalVolume) -> Result<f64> {
        Ok(self(volume))
    }
}

/// Probability that `oracle` assigns to `class`.
pub struct OracleTarget<'a> {
    pub oracle: &'a dyn PredictionOracle,
    pub class: usize,
}

impl TargetScore for OracleTarget<'_> {
    fn score(&self, volume: &MultiModalVolume) -> Result<f64> {
        Ok(self.oracle.predict(volume)?.get(self.class))
    }
}

/// Runs a single-input method. Feature Permutation works on a batch and
/// goes through [`feature_permutation`] instead.
pub fn explain(
    volume: &MultiModalVolume,
    target: &dyn TargetScore,
    cfg: &MethodConfig,
) -> Result<SaliencyMap> {
    let grid = || cfg.grid(volume.layout());
    match cfg.method {
        Method::Occlusion => occlusion(volume, target, cfg),
        Method::FeatureAblation => feature_ablation(volume, target, &grid()?),
        Method::Lime => lime(volume, target, cfg, &grid()?),
        Method::ShapleySampling => shapley_sampling(volume, target, cfg, &grid()?),
        Method::KernelShap => kernel_shap(volume, target, cfg, &grid()?),
        Method::FeaturePermutation => Err(crate::Error::Config(
            "feature permutation explains a batch; call feature_permutation".into(),
        )),
    }
}

/// Copy of `volume` where segments with `keep[k] == false` are zeroed.
pub(crate) fn mask_segments(
    volume: &MultiModalVolume,
    grid: &SegmentGrid,
    keep: impl Fn(usize) -> bool,
) -> MultiModalVolume {
    let mut data = volume.data().to_vec();
    for k in (0..grid.n_segments()).filter(|&k| !keep(k)) {
        for &i in grid.members(k) {
            data[i] = 0.0;
        }
    }
    volume.with_data(data)
}

/// Spreads one value per segment over that segment's voxels.
pub(crate) fn paint_segments(
    volume: &MultiModalVolume,
    grid: &SegmentGrid,
    values: &[f64],
) -> Result<SaliencyMap> {
    let mut data = vec![0.0; volume.layout().len()];
    for (k, &v) in values.iter().enumerate() {
        for &i in grid.members(k) {
            data[i] = v;
        }
    }
    SaliencyMap::new(volume.layout().clone(), data)
}
