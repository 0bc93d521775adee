//! Glue between loaded samples, saliency runs and score files. The CLI is a
//! thin layer over these functions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::ablate::ModalityImportance;
use crate::error::{Error, Result};
use crate::metrics::{iou, mi_correlation, msfi, Metric, MetricRecord};
use crate::oracle::PredictionOracle;
use crate::saliency::{
    explain, feature_permutation, postprocess, Method, MethodConfig, OracleTarget, RunLog,
    SampleTiming, TargetScore, RUNLOG_FILE,
};
use crate::tensorio::{read_saliency, write_saliency, MultiModalVolume, SaliencyMap, Sample};

/// Which class a saliency map explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetChoice {
    /// The oracle's argmax on the unablated input.
    Predicted,
    /// The sample's ground-truth label.
    Label,
    Class(usize),
}

impl fmt::Display for TargetChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetChoice::Predicted => f.write_str("predicted"),
            TargetChoice::Label => f.write_str("label"),
            TargetChoice::Class(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for TargetChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(TargetChoice::Predicted),
            "label" => Ok(TargetChoice::Label),
            _ => s
                .parse()
                .map(TargetChoice::Class)
                .map_err(|_| Error::Config(format!("target must be predicted, label or a class index, got {s:?}"))),
        }
    }
}

impl TargetChoice {
    fn resolve(self, sample: &Sample, oracle: &dyn PredictionOracle) -> Result<usize> {
        let class = match self {
            TargetChoice::Predicted => oracle.predict(&sample.volume)?.argmax(),
            TargetChoice::Label => sample.label,
            TargetChoice::Class(c) => c,
        };
        if class >= oracle.n_classes() {
            return Err(Error::Config(format!(
                "target class {class} out of range for {} classes",
                oracle.n_classes()
            )));
        }
        Ok(class)
    }
}

/// Counts how often the wrapped target is evaluated.
struct Counting<'a> {
    inner: OracleTarget<'a>,
    calls: AtomicU64,
}

impl TargetScore for Counting<'_> {
    fn score(&self, volume: &MultiModalVolume) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.score(volume)
    }
}

/// Raw (not post-processed) maps for every sample, in sample order, plus
/// the run log. Feature Permutation explains all samples as one batch and
/// splits its wall time evenly.
pub fn explain_samples(
    samples: &[Sample],
    oracle: &dyn PredictionOracle,
    cfg: &MethodConfig,
    target: TargetChoice,
    label: &str,
) -> Result<(Vec<SaliencyMap>, RunLog)> {
    let first = samples.first().ok_or_else(|| Error::Invariant("no samples to explain".into()))?;
    cfg.validate(first.volume.layout())?;
    let targets = samples
        .iter()
        .map(|s| {
            let class = target.resolve(s, oracle).map_err(|e| e.in_sample(&s.id))?;
            Ok(Counting { inner: OracleTarget { oracle, class }, calls: AtomicU64::new(0) })
        })
        .collect::<Result<Vec<_>>>()?;

    let (maps, seconds): (Vec<SaliencyMap>, Vec<f64>) = if cfg.method == Method::FeaturePermutation {
        let grid = cfg.grid(first.volume.layout())?;
        let batch: Vec<(&MultiModalVolume, &dyn TargetScore)> = samples
            .iter()
            .zip(&targets)
            .map(|(s, t)| (&s.volume, t as &dyn TargetScore))
            .collect();
        let start = Instant::now();
        let maps = feature_permutation(&batch, &grid, cfg.seed)?;
        let each = start.elapsed().as_secs_f64() / samples.len() as f64;
        (maps, vec![each; samples.len()])
    } else {
        samples
            .par_iter()
            .zip(&targets)
            .map(|(s, t)| {
                let start = Instant::now();
                let map = explain(&s.volume, t, cfg).map_err(|e| e.in_sample(&s.id))?;
                Ok((map, start.elapsed().as_secs_f64()))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip()
    };

    let log = RunLog {
        label: label.to_string(),
        method: cfg.method.name().to_string(),
        params: cfg.params(),
        seed: cfg.seed,
        target: target.to_string(),
        samples: samples
            .iter()
            .zip(&targets)
            .zip(seconds)
            .map(|((s, t), wall_seconds)| SampleTiming {
                sample_id: s.id.clone(),
                wall_seconds,
                evaluations: t.calls.load(Ordering::Relaxed),
            })
            .collect(),
    };
    Ok((maps, log))
}

/// Runs [`explain_samples`] and writes `{out_dir}/{sample_id}.mmv` per
/// sample plus `runlog.json`.
pub fn run_saliency(
    samples: &[Sample],
    oracle: &dyn PredictionOracle,
    cfg: &MethodConfig,
    target: TargetChoice,
    label: &str,
    out_dir: impl AsRef<Path>,
) -> Result<RunLog> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (maps, log) = explain_samples(samples, oracle, cfg, target, label)?;
    samples
        .par_iter()
        .zip(&maps)
        .try_for_each(|(s, m)| write_saliency(m, out.join(format!("{}.mmv", s.id))))?;
    log.save(out.join(RUNLOG_FILE))?;
    Ok(log)
}

/// Reads the maps a [`run_saliency`] call wrote, in `samples` order.
pub fn load_saliency_dir(samples: &[Sample], dir: impl AsRef<Path>) -> Result<(RunLog, Vec<SaliencyMap>)> {
    let dir = dir.as_ref();
    let log = RunLog::load(dir.join(RUNLOG_FILE))?;
    let maps = samples
        .par_iter()
        .map(|s| {
            let map = read_saliency(dir.join(format!("{}.mmv", s.id))).map_err(|e| e.in_sample(&s.id))?;
            s.volume.layout().ensure_same(map.layout(), "saliency map").map_err(|e| e.in_sample(&s.id))?;
            Ok(map)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((log, maps))
}

/// Settings that shaped a score file, written next to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreMeta {
    pub metrics: Vec<String>,
    pub mi_variant: String,
    pub mi_normalized: Vec<f64>,
    /// Maps fed to MSFI and IoU.
    pub msfi_iou_maps: &'static str,
    /// Maps fed to estimated MI for mi_corr.
    pub estimated_mi_maps: &'static str,
    pub iou_threshold: f64,
}

impl ScoreMeta {
    pub fn new(metrics: &[Metric], mi: &ModalityImportance, iou_threshold: f64) -> Self {
        ScoreMeta {
            metrics: metrics.iter().map(|m| m.name().to_string()).collect(),
            mi_variant: mi.variant.to_string(),
            mi_normalized: mi.normalized.clone(),
            msfi_iou_maps: "postprocessed",
            estimated_mi_maps: "raw, positive part",
            iou_threshold,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Scores raw maps against masks and MI. MSFI and IoU see post-processed
/// maps; MI correlation uses the raw maps' positive part. Records come out
/// in sample order, metrics in `metrics` order.
pub fn score_maps(
    samples: &[Sample],
    maps: &[SaliencyMap],
    mi: &ModalityImportance,
    metrics: &[Metric],
    iou_threshold: f64,
    method: &str,
    tag: &str,
) -> Result<Vec<MetricRecord>> {
    if samples.len() != maps.len() {
        return Err(Error::ShapeMismatch(format!("{} maps for {} samples", maps.len(), samples.len())));
    }
    let per_sample = samples
        .par_iter()
        .zip(maps)
        .map(|(s, raw)| {
            let score = || -> Result<Vec<MetricRecord>> {
                let needs_post = metrics.iter().any(|m| matches!(m, Metric::Msfi | Metric::Iou));
                let post = if needs_post { Some(postprocess(raw)?) } else { None };
                let mask = || {
                    s.mask
                        .as_ref()
                        .ok_or_else(|| Error::Config("sample has no mask; msfi and iou need one".into()))
                };
                metrics
                    .iter()
                    .map(|&metric| {
                        let value = match metric {
                            Metric::Msfi => msfi(post.as_ref().unwrap(), mask()?, &mi.normalized)?,
                            Metric::Iou => iou(post.as_ref().unwrap(), mask()?, iou_threshold)?,
                            Metric::MiCorr => mi_correlation(raw, &mi.normalized)?,
                            Metric::Rating => {
                                return Err(Error::Config("ratings are not computed from maps".into()))
                            }
                        };
                        MetricRecord::new(&s.id, method, metric, value, tag)
                    })
                    .collect()
            };
            score().map_err(|e| e.in_sample(&s.id))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ablate::MiVariant;
    use crate::oracle::ShapeRuleClassifier;
    use crate::synthgen::{generate_samples, SynthConfig};

    fn samples(n: usize) -> Vec<Sample> {
        let cfg = SynthConfig { n_samples: n, image_size: 32, seed: 3, ..SynthConfig::default() };
        generate_samples(&cfg)
            .unwrap()
            .into_iter()
            .map(|s| Sample { id: s.id, label: s.label, volume: s.volume, mask: Some(s.mask) })
            .collect()
    }

    #[test]
    fn run_writes_and_reloads() {
        let samples = samples(3);
        let oracle = ShapeRuleClassifier::attending(1, 4).unwrap();
        let mut cfg = MethodConfig::new(Method::FeatureAblation);
        cfg.block = [8, 8, 1];
        let dir = tempfile::tempdir().unwrap();
        let log = run_saliency(&samples, &oracle, &cfg, TargetChoice::Predicted, "fa", dir.path()).unwrap();
        assert_eq!(log.samples.len(), 3);
        // one unablated call plus one per segment: 4 modalities x 16 blocks
        assert!(log.samples.iter().all(|t| t.evaluations == 65));
        let (back, maps) = load_saliency_dir(&samples, dir.path()).unwrap();
        assert_eq!(back, log);
        assert_eq!(maps.len(), 3);
    }

    #[test]
    fn feature_permutation_batch() {
        let samples = samples(4);
        let oracle = ShapeRuleClassifier::attending(1, 4).unwrap();
        let mut cfg = MethodConfig::new(Method::FeaturePermutation);
        cfg.block = [8, 8, 1];
        let (maps, log) = explain_samples(&samples, &oracle, &cfg, TargetChoice::Label, "fp").unwrap();
        assert_eq!(maps.len(), 4);
        assert!(log.samples.iter().all(|t| t.evaluations == 17));
    }

    #[test]
    fn scores_in_order() {
        let samples = samples(2);
        let maps: Vec<SaliencyMap> = samples
            .iter()
            .map(|s| {
                let data = s.mask.as_ref().unwrap().data().iter().map(|&b| f64::from(u8::from(b))).collect();
                SaliencyMap::new(s.volume.layout().clone(), data).unwrap()
            })
            .collect();
        let mi = ModalityImportance::new(vec![0.0, 1.0, 0.0, 0.0], MiVariant::Mod);
        let recs = score_maps(&samples, &maps, &mi, &[Metric::Msfi, Metric::Iou, Metric::MiCorr], 0.5, "m", "t")
            .unwrap();
        assert_eq!(recs.len(), 6);
        assert_eq!(recs[0].sample_id, samples[0].id);
        assert_eq!(recs[0].value, 1.0);
        assert_eq!(recs[1].value, 1.0);
        assert!(score_maps(&samples, &maps, &mi, &[Metric::Rating], 0.5, "m", "t").is_err());
    }

    #[test]
    fn target_parsing() {
        assert_eq!("label".parse::<TargetChoice>().unwrap(), TargetChoice::Label);
        assert_eq!("1".parse::<TargetChoice>().unwrap(), TargetChoice::Class(1));
        assert!("x".parse::<TargetChoice>().is_err());
    }
}
