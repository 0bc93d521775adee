//! Modality ablation and the Shapley-value Modality Importance engine.
//!
//! A modality coalition keeps some modalities intact and ablates the rest;
//! the performance `v(c)` of a coalition is the oracle's accuracy on the
//! ablated test set. Exact Shapley values over the `2^M` coalitions give the
//! per-modality importance `phi`.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oracle::{accuracy_of, CacheKey, ClassProbabilities, PredictionCache, PredictionOracle};
use crate::tensorio::{MultiModalVolume, Sample, SegmentationMask};
use crate::util::{fmt_f64, rng_for, stable_hash};

/// Largest player count accepted by exact enumeration.
pub const MAX_MODALITIES: usize = 12;

const PREDICT_CHUNK: usize = 64;

/// Set of kept modality indices, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Coalition(u32);

impl Coalition {
    pub fn empty() -> Self {
        Coalition(0)
    }

    pub fn full(n: usize) -> Self {
        assert!(n <= 32);
        Coalition(if n == 32 { u32::MAX } else { (1u32 << n) - 1 })
    }

    pub fn from_bits(bits: u32) -> Self {
        Coalition(bits)
    }

    pub fn from_members(members: &[usize], n: usize) -> Result<Self> {
        let mut bits = 0u32;
        for &m in members {
            if m >= n {
                return Err(Error::Invariant(format!("modality {m} out of range for {n}")));
            }
            if bits & (1 << m) != 0 {
                return Err(Error::Invariant(format!("modality {m} listed twice")));
            }
            bits |= 1 << m;
        }
        Ok(Coalition(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, m: usize) -> bool {
        self.0 & (1 << m) != 0
    }

    pub fn with(self, m: usize) -> Self {
        Coalition(self.0 | (1 << m))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn members(self) -> Vec<usize> {
        (0..32).filter(|&m| self.contains(m)).collect()
    }

    /// Stable text form: sorted members joined by `+`, or `-` when empty.
    pub fn signature(self) -> String {
        if self.is_empty() {
            return "-".into();
        }
        self.members()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("+")
    }

    fn fits(self, n: usize) -> bool {
        n >= 32 || self.0 >> n == 0
    }
}

/// How excluded modalities are replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationPolicy {
    /// Every value of an excluded modality becomes 0.
    ZeroWholeModality,
    /// Every value of an excluded modality is redrawn, with replacement,
    /// from that modality's values outside the lesion mask.
    NonLesionSample { seed: u64 },
    /// Only the lesion region of an excluded modality is zeroed.
    ZeroFeatureRegion,
}

impl AblationPolicy {
    pub fn needs_mask(self) -> bool {
        !matches!(self, AblationPolicy::ZeroWholeModality)
    }

    pub fn signature(self) -> String {
        match self {
            AblationPolicy::ZeroWholeModality => "zero".into(),
            AblationPolicy::NonLesionSample { seed } => format!("nonlesion:{seed}"),
            AblationPolicy::ZeroFeatureRegion => "feature".into(),
        }
    }

    pub fn variant(self) -> MiVariant {
        match self {
            AblationPolicy::ZeroFeatureRegion => MiVariant::Feat,
            _ => MiVariant::Mod,
        }
    }

    /// The same policy with its seed specialised to one sample.
    fn for_sample(self, sample_id: &str) -> Self {
        match self {
            AblationPolicy::NonLesionSample { seed } => AblationPolicy::NonLesionSample {
                seed: crate::util::mix_seed(seed, stable_hash(sample_id)),
            },
            p => p,
        }
    }
}

pub fn apply_ablation(
    volume: &MultiModalVolume,
    keep: Coalition,
    policy: AblationPolicy,
    mask: Option<&SegmentationMask>,
) -> Result<MultiModalVolume> {
    let layout = volume.layout();
    let n_mod = layout.n_modalities();
    if !keep.fits(n_mod) {
        return Err(Error::Invariant(format!(
            "coalition {} references modalities beyond {n_mod}",
            keep.signature()
        )));
    }
    let mask = match (policy.needs_mask(), mask) {
        (true, None) => {
            return Err(Error::Config(format!(
                "ablation policy {} requires a segmentation mask",
                policy.signature()
            )))
        }
        (true, Some(m)) => {
            m.layout().ensure_same(layout, "ablation mask")?;
            Some(m)
        }
        (false, _) => None,
    };
    let mut data = volume.data().to_vec();
    for m in (0..n_mod).filter(|&m| !keep.contains(m)) {
        let range = layout.modality_range(m);
        let slot = &mut data[range.clone()];
        match policy {
            AblationPolicy::ZeroWholeModality => slot.fill(0.0),
            AblationPolicy::ZeroFeatureRegion => {
                let lesion = mask.expect("checked above").modality(m);
                for (v, &inside) in slot.iter_mut().zip(lesion) {
                    if inside {
                        *v = 0.0;
                    }
                }
            }
            AblationPolicy::NonLesionSample { seed } => {
                let lesion = mask.expect("checked above").modality(m);
                let pool: Vec<f32> = volume
                    .modality(m)
                    .iter()
                    .zip(lesion)
                    .filter(|(_, &inside)| !inside)
                    .map(|(&v, _)| v)
                    .collect();
                if pool.is_empty() {
                    return Err(Error::Invariant(format!(
                        "modality {m} has no non-lesion voxels to sample from"
                    )));
                }
                let mut rng = rng_for(seed, m as u64);
                for v in slot.iter_mut() {
                    *v = pool[rng.random_range(0..pool.len())];
                }
            }
        }
    }
    Ok(volume.with_data(data))
}

/// `v(keep)`: oracle accuracy after ablating every sample.
pub fn coalition_performance(
    samples: &[Sample],
    oracle: &dyn PredictionOracle,
    keep: Coalition,
    policy: AblationPolicy,
    cache: Option<&PredictionCache>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invariant("coalition performance over an empty set".into()));
    }
    let coalition_sig = keep.signature();
    let policy_sig = policy.signature();
    let key = |s: &Sample| CacheKey::new(&s.id, &coalition_sig, &policy_sig);

    let mut preds: Vec<Option<ClassProbabilities>> = samples
        .iter()
        .map(|s| cache.and_then(|c| c.get(&key(s))))
        .collect();
    let missing: Vec<usize> = (0..samples.len()).filter(|&i| preds[i].is_none()).collect();
    for chunk in missing.chunks(PREDICT_CHUNK) {
        let ablated = chunk
            .par_iter()
            .map(|&i| {
                let s = &samples[i];
                apply_ablation(&s.volume, keep, policy.for_sample(&s.id), s.mask.as_ref())
                    .map_err(|e| e.in_sample(&s.id))
            })
            .collect::<Result<Vec<_>>>()?;
        let batch: Vec<(&str, &MultiModalVolume)> = chunk
            .iter()
            .zip(&ablated)
            .map(|(&i, v)| (samples[i].id.as_str(), v))
            .collect();
        for (&i, p) in chunk.iter().zip(oracle.predict_batch(&batch)?) {
            if let Some(c) = cache {
                c.insert(key(&samples[i]), p.clone());
            }
            preds[i] = Some(p);
        }
    }
    let preds: Vec<ClassProbabilities> = preds.into_iter().map(Option::unwrap).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    accuracy_of(&preds, &labels)
}

/// `v(c)` for every coalition of `n` players, indexed by bitmask.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionValues {
    n_players: usize,
    values: Vec<f64>,
}

impl CoalitionValues {
    pub fn new(n_players: usize, values: Vec<f64>) -> Result<Self> {
        if n_players == 0 || n_players > MAX_MODALITIES {
            return Err(Error::Config(format!(
                "exact Shapley supports 1..={MAX_MODALITIES} players, got {n_players}"
            )));
        }
        if values.len() != 1 << n_players {
            return Err(Error::Invariant(format!(
                "{} coalition values for {n_players} players",
                values.len()
            )));
        }
        Ok(CoalitionValues { n_players, values })
    }

    pub fn from_fn(n_players: usize, f: impl Fn(Coalition) -> f64) -> Result<Self> {
        let values = (0..1u32 << n_players).map(|b| f(Coalition(b))).collect();
        Self::new(n_players, values)
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn get(&self, c: Coalition) -> f64 {
        self.values[c.0 as usize]
    }

    /// Exact Shapley values by subset enumeration.
    pub fn shapley(&self) -> Vec<f64> {
        let n = self.n_players;
        let fact: Vec<f64> = (0..=n)
            .scan(1.0, |acc, k| {
                if k > 0 {
                    *acc *= k as f64;
                }
                Some(*acc)
            })
            .collect();
        let weight: Vec<f64> = (0..n)
            .map(|s| fact[s] * fact[n - s - 1] / fact[n])
            .collect();
        (0..n)
            .map(|m| {
                (0..1u32 << n)
                    .map(Coalition)
                    .filter(|c| !c.contains(m))
                    .map(|c| weight[c.len()] * (self.get(c.with(m)) - self.get(c)))
                    .sum()
            })
            .collect()
    }
}

/// Evaluates `v` on all `2^M` coalitions; each value is computed once.
pub fn coalition_values(
    samples: &[Sample],
    oracle: &dyn PredictionOracle,
    policy: AblationPolicy,
    cache: Option<&PredictionCache>,
) -> Result<CoalitionValues> {
    let n = n_modalities(samples)?;
    let values = (0..1u32 << n)
        .into_par_iter()
        .map(|b| coalition_performance(samples, oracle, Coalition(b), policy, cache))
        .collect::<Result<Vec<_>>>()?;
    CoalitionValues::new(n, values)
}

fn n_modalities(samples: &[Sample]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Invariant("no samples".into()))?;
    let n = first.volume.layout().n_modalities();
    if n > MAX_MODALITIES {
        return Err(Error::Config(format!(
            "exact Shapley supports at most {MAX_MODALITIES} modalities, got {n}"
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.volume.layout().n_modalities() != n) {
        return Err(Error::ShapeMismatch(format!(
            "sample {} has {} modalities, expected {n}",
            s.id,
            s.volume.layout().n_modalities()
        )));
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiVariant {
    /// Whole-modality ablation.
    Mod,
    /// Lesion-region ablation.
    Feat,
    /// Read off probe-dataset accuracies.
    Probe,
}

impl fmt::Display for MiVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MiVariant::Mod => "mod",
            MiVariant::Feat => "feat",
            MiVariant::Probe => "probe",
        })
    }
}

impl std::str::FromStr for MiVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mod" => Ok(MiVariant::Mod),
            "feat" => Ok(MiVariant::Feat),
            "probe" => Ok(MiVariant::Probe),
            _ => Err(Error::Config(format!("unknown MI variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityImportance {
    pub phi: Vec<f64>,
    pub normalized: Vec<f64>,
    pub variant: MiVariant,
}

impl ModalityImportance {
    pub fn new(phi: Vec<f64>, variant: MiVariant) -> Self {
        let normalized = normalize_mi(&phi);
        ModalityImportance {
            phi,
            normalized,
            variant,
        }
    }

    pub fn write_csv(&self, modalities: &[String], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if modalities.len() != self.phi.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} modality names for {} MI values",
                modalities.len(),
                self.phi.len()
            )));
        }
        let mut out = String::from("modality,phi,normalized,variant\n");
        for ((name, phi), norm) in modalities.iter().zip(&self.phi).zip(&self.normalized) {
            out.push_str(&format!(
                "{name},{},{},{}\n",
                fmt_f64(*phi),
                fmt_f64(*norm),
                self.variant
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads an MI table; returns modality names alongside.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Self)> {
        let path = path.as_ref();
        let bad = |msg: String| Error::Invariant(format!("{}: {msg}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let mut names = Vec::new();
        let mut phi = Vec::new();
        let mut normalized = Vec::new();
        let mut variant = None;
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != 4 {
                return Err(bad(format!("expected 4 columns, got {}", rec.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            names.push(rec[0].to_string());
            phi.push(num(&rec[1])?);
            normalized.push(num(&rec[2])?);
            variant = Some(rec[3].parse::<MiVariant>()?);
        }
        let variant = variant.ok_or_else(|| bad("no rows".into()))?;
        if normalized.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(bad("normalized MI outside [0, 1]".into()));
        }
        Ok((
            names,
            ModalityImportance {
                phi,
                normalized,
                variant,
            },
        ))
    }
}

/// Clamps negatives to 0 and divides by the largest value; all-nonpositive
/// input maps to zeros.
pub fn normalize_mi(phi: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = phi.iter().map(|&p| p.max(0.0)).collect();
    let max = clamped.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        clamped.iter().map(|&p| p / max).collect()
    } else {
        vec![0.0; phi.len()]
    }
}

/// Exact modality Shapley values of the accuracy game.
pub fn shapley_mi(
    samples: &[Sample],
    oracle: &dyn PredictionOracle,
    policy: AblationPolicy,
    cache: Option<&PredictionCache>,
) -> Result<ModalityImportance> {
    let table = coalition_values(samples, oracle, policy, cache)?;
    Ok(ModalityImportance::new(table.shapley(), policy.variant()))
}

/// Importance read off probe-dataset accuracies: each probed modality gets
/// its accuracy minus chance, every other modality gets 0.
pub fn probe_mi(n_modalities: usize, probes: &[(usize, f64)], chance: f64) -> Result<ModalityImportance> {
    let mut phi = vec![0.0; n_modalities];
    for &(m, acc) in probes {
        if m >= n_modalities {
            return Err(Error::Invariant(format!("probe modality {m} out of range")));
        }
        phi[m] = acc - chance;
    }
    Ok(ModalityImportance::new(phi, MiVariant::Probe))
}
