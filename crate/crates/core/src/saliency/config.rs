use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::SegmentGrid;
use crate::error::{Error, Result};
use crate::tensorio::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Occlusion,
    FeatureAblation,
    FeaturePermutation,
    Lime,
    ShapleySampling,
    KernelShap,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Occlusion,
        Method::FeatureAblation,
        Method::FeaturePermutation,
        Method::Lime,
        Method::ShapleySampling,
        Method::KernelShap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Occlusion => "occlusion",
            Method::FeatureAblation => "feature_ablation",
            Method::FeaturePermutation => "feature_permutation",
            Method::Lime => "lime",
            Method::ShapleySampling => "shapley_sampling",
            Method::KernelShap => "kernel_shap",
        }
    }

    /// Methods that emit one map copied to every modality.
    pub fn shared_across_modalities(self) -> bool {
        matches!(self, Method::FeaturePermutation | Method::KernelShap)
    }

    /// Default sampling budget: LIME draws, Shapley permutations, Kernel
    /// SHAP coalitions.
    fn default_n_samples(self) -> usize {
        match self {
            Method::Lime => 512,
            Method::ShapleySampling => 16,
            Method::KernelShap => 256,
            _ => 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm || m.name().replace('_', "") == norm)
            .ok_or_else(|| Error::Config(format!("unknown saliency method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    pub seed: u64,
    /// Occlusion window, `[h, w, d]`.
    pub window: [usize; 3],
    pub stride: [usize; 3],
    /// Superpixel block shape.
    pub block: [usize; 3],
    pub per_modality: bool,
    pub n_samples: usize,
    pub ridge_lambda: f64,
    pub kernel_width: f64,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        MethodConfig {
            method,
            seed: 0,
            window: [8, 8, 8],
            stride: [4, 4, 4],
            block: [8, 8, 8],
            per_modality: !method.shared_across_modalities(),
            n_samples: method.default_n_samples(),
            ridge_lambda: 0.01,
            kernel_width: 0.25,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Applies one `key=value` override.
    pub fn set_param(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn fmt::Display| Error::Config(format!("{key}={value}: {e}"));
        match key.trim() {
            "window" => self.window = parse_shape(value)?,
            "stride" => self.stride = parse_shape(value)?,
            "block" => self.block = parse_shape(value)?,
            "per_modality" => self.per_modality = value.parse().map_err(|e| bad(&e))?,
            "n_samples" => self.n_samples = value.parse().map_err(|e| bad(&e))?,
            "ridge_lambda" => self.ridge_lambda = value.parse().map_err(|e| bad(&e))?,
            "kernel_width" => self.kernel_width = value.parse().map_err(|e| bad(&e))?,
            other => return Err(Error::Config(format!("unknown parameter {other:?}"))),
        }
        Ok(())
    }

    /// Parses `k=v,k=v` overrides.
    pub fn apply_params(&mut self, spec: &str) -> Result<()> {
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
            self.set_param(k, v)?;
        }
        Ok(())
    }

    /// Parameters as strings, in a stable order, for run logs.
    pub fn params(&self) -> BTreeMap<String, String> {
        let shape = |s: [usize; 3]| format!("{}x{}x{}", s[0], s[1], s[2]);
        let mut p = BTreeMap::new();
        match self.method {
            Method::Occlusion => {
                p.insert("window".into(), shape(self.window));
                p.insert("stride".into(), shape(self.stride));
            }
            _ => {
                p.insert("block".into(), shape(self.block));
                p.insert("per_modality".into(), self.per_modality.to_string());
            }
        }
        match self.method {
            Method::Lime => {
                p.insert("n_samples".into(), self.n_samples.to_string());
                p.insert("ridge_lambda".into(), self.ridge_lambda.to_string());
                p.insert("kernel_width".into(), self.kernel_width.to_string());
            }
            Method::ShapleySampling | Method::KernelShap => {
                p.insert("n_samples".into(), self.n_samples.to_string());
            }
            _ => {}
        }
        p
    }

    pub fn validate(&self, layout: &Layout) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        let dims = layout.dims().as_vec();
        for (axis, &len) in dims.iter().enumerate() {
            if self.stride[axis] == 0 || self.window[axis] == 0 || self.block[axis] == 0 {
                return Err(Error::Config("window, stride and block must be positive".into()));
            }
            if self.method == Method::Occlusion && self.window[axis] > len {
                return Err(Error::Config(format!(
                    "window {:?} exceeds dims {dims:?}",
                    &self.window[..dims.len()]
                )));
            }
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::Config("ridge_lambda must be a finite value >= 0".into()));
        }
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return Err(Error::Config("kernel_width must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self, layout: &Layout) -> Result<SegmentGrid> {
        SegmentGrid::blocks(layout, self.block, self.per_modality)
    }
}

/// `8`, `8x8` or `8x8x4`; a single number applies to every axis.
fn parse_shape(s: &str) -> Result<[usize; 3]> {
    let parts = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Config(format!("bad shape {s:?}: {e}")))?;
    match parts[..] {
        [a] => Ok([a, a, a]),
        [a, b] => Ok([a, b, 1]),
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Config(format!("bad shape {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::Dims;

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("KernelSHAP".parse::<Method>().unwrap(), Method::KernelShap);
        assert_eq!("feature-ablation".parse::<Method>().unwrap(), Method::FeatureAblation);
        assert!("gradcam".parse::<Method>().is_err());
    }

    #[test]
    fn params_override() {
        let mut c = MethodConfig::new(Method::Occlusion);
        c.apply_params("window=4x6, stride=2").unwrap();
        assert_eq!(c.window, [4, 6, 1]);
        assert_eq!(c.stride, [2, 2, 2]);
        assert!(c.apply_params("bogus=1").is_err());
        assert!(c.apply_params("window").is_err());
    }

    #[test]
    fn validation() {
        let layout = Layout::new(vec!["a"], Dims::new_2d(4, 4)).unwrap();
        let mut c = MethodConfig::new(Method::Occlusion);
        assert!(c.validate(&layout).is_err()); // 8x8 window on 4x4
        c.window = [4, 4, 1];
        c.validate(&layout).unwrap();
        c.stride = [0, 1, 1];
        assert!(c.validate(&layout).is_err());
        let mut l = MethodConfig::new(Method::Lime);
        l.n_samples = 0;
        assert!(l.validate(&layout).is_err());
    }
}
