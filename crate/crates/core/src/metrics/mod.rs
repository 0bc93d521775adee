//! Saliency scoring (MSFI, estimated MI, IoU) and the rank statistics used
//! to compare explanation methods.

mod friedman;
mod rank;
mod scores;
pub mod special;

pub use friedman::{
    critical_difference, friedman, nemenyi, nemenyi_q05, FriedmanResult, NemenyiResult,
    ScoreMatrix,
};
pub use rank::{average_ranks, kendall_tau_b, spearman, Correlation};
pub use scores::{join_pairs, read_scores, score_matrix, write_scores, Metric, MetricRecord};

use crate::error::{Error, Result};
use crate::tensorio::{SaliencyMap, SegmentationMask};

/// Default binarization threshold for [`iou`].
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Per-modality sum of positive saliency.
pub fn estimated_mi(map: &SaliencyMap) -> Vec<f64> {
    (0..map.layout().n_modalities())
        .map(|m| map.modality(m).iter().map(|&v| v.max(0.0)).sum())
        .collect()
}

/// Modality-Specific Feature Importance.
///
/// For each modality, `ratio_m` is the share of its positive saliency that
/// falls inside its mask (0 when the modality has no positive saliency).
/// The score is the `phi`-weighted mean of the ratios, or 0 when `phi` sums
/// to 0.
pub fn msfi(map: &SaliencyMap, mask: &SegmentationMask, phi: &[f64]) -> Result<f64> {
    map.layout().ensure_same(mask.layout(), "mask")?;
    let n_mod = map.layout().n_modalities();
    if phi.len() != n_mod {
        return Err(Error::ShapeMismatch(format!(
            "{} MI weights for {n_mod} modalities",
            phi.len()
        )));
    }
    if phi.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
        return Err(Error::Invariant(format!("MI weights must be finite and >= 0: {phi:?}")));
    }
    let total_phi: f64 = phi.iter().sum();
    if total_phi == 0.0 {
        return Ok(0.0);
    }
    let weighted: f64 = (0..n_mod)
        .map(|m| phi[m] * inside_ratio(map.modality(m), mask.modality(m)))
        .sum();
    Ok((weighted / total_phi).clamp(0.0, 1.0))
}

fn inside_ratio(saliency: &[f64], mask: &[bool]) -> f64 {
    let (mut inside, mut total) = (0.0, 0.0);
    for (&s, &l) in saliency.iter().zip(mask) {
        if s > 0.0 {
            total += s;
            if l {
                inside += s;
            }
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

/// Intersection over union of `{S >= threshold}` and the mask, over all
/// modalities jointly. Two empty sets give 1.
pub fn iou(map: &SaliencyMap, mask: &SegmentationMask, threshold: f64) -> Result<f64> {
    map.layout().ensure_same(mask.layout(), "mask")?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("IoU threshold must be in (0, 1), got {threshold}")));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&s, &l) in map.data().iter().zip(mask.data()) {
        let hit = s >= threshold;
        inter += usize::from(hit && l);
        union += usize::from(hit || l);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Per-sample MI correlation: Kendall tau-b between a map's estimated MI
/// and the ground-truth MI.
pub fn mi_correlation(map: &SaliencyMap, phi: &[f64]) -> Result<f64> {
    kendall_tau_b(&estimated_mi(map), phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::{percentile_linear, postprocess};
    use crate::tensorio::{Dims, Layout};
    use proptest::prelude::*;

    fn layout(m: usize, n: usize) -> Layout {
        let names: Vec<String> = (0..m).map(|i| format!("m{i}")).collect();
        Layout::new(names, Dims::new_2d(1, n)).unwrap()
    }

    fn map(m: usize, values: Vec<f64>) -> SaliencyMap {
        let n = values.len() / m;
        SaliencyMap::new(layout(m, n), values).unwrap()
    }

    fn mask(m: usize, values: Vec<bool>) -> SegmentationMask {
        let n = values.len() / m;
        SegmentationMask::new(layout(m, n), values).unwrap()
    }

    #[test]
    fn estimated_mi_examples() {
        assert_eq!(estimated_mi(&map(2, vec![1.0, -1.0, 2.0, 3.0])), vec![1.0, 5.0]);
        assert_eq!(estimated_mi(&map(2, vec![-1.0; 4])), vec![0.0, 0.0]);
        let e = estimated_mi(&map(3, vec![0.0, -1.0, -2.0, 0.0, 0.5, 0.5]));
        assert_eq!(e, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn msfi_hand_example() {
        // modality 0: 0.8 of its positive mass inside; modality 1: 0.4
        let s = map(2, vec![0.8, 0.2, -5.0, 0.4, 0.6, 0.0]);
        let l = mask(2, vec![true, false, true, true, false, false]);
        let v = msfi(&s, &l, &[1.0, 0.5]).unwrap();
        let expect = (1.0 * 0.8 + 0.5 * 0.4) / 1.5;
        assert!((v - expect).abs() <= 1e-12);
        assert!((v - 0.6667).abs() < 1e-4);
    }

    #[test]
    fn msfi_edge_cases() {
        let s = map(2, vec![0.5, 0.0, 0.3, 0.0]);
        let l = mask(2, vec![true, false, true, false]);
        assert_eq!(msfi(&s, &l, &[0.2, 0.9]).unwrap(), 1.0);
        assert_eq!(msfi(&s, &l, &[0.0, 0.0]).unwrap(), 0.0);
        // no positive saliency in modality 1: its ratio is 0
        let s = map(2, vec![0.5, 0.0, -0.3, 0.0]);
        assert_eq!(msfi(&s, &l, &[1.0, 1.0]).unwrap(), 0.5);
        // uniform saliency, masks covering a quarter of each modality
        let s = map(2, vec![0.7; 8]);
        let l = mask(2, vec![true, false, false, false, false, false, true, false]);
        assert_eq!(msfi(&s, &l, &[0.3, 0.6]).unwrap(), 0.25);
        assert!(msfi(&s, &l, &[0.3]).is_err());
        assert!(msfi(&s, &l, &[0.3, -0.1]).is_err());
    }

    #[test]
    fn iou_examples() {
        let l = mask(1, vec![true, true, false, false, false]);
        let exact = map(1, vec![0.9, 0.6, 0.1, 0.0, 0.4]);
        assert_eq!(iou(&exact, &l, 0.5).unwrap(), 1.0);
        let disjoint = map(1, vec![0.0, 0.0, 0.9, 0.9, 0.0]);
        assert_eq!(iou(&disjoint, &l, 0.5).unwrap(), 0.0);
        let doubled = map(1, vec![1.0, 1.0, 0.7, 0.5, 0.0]);
        assert_eq!(iou(&doubled, &l, 0.5).unwrap(), 0.5);
        let empty = mask(1, vec![false; 5]);
        assert_eq!(iou(&map(1, vec![0.1; 5]), &empty, 0.5).unwrap(), 1.0);
        assert!(iou(&exact, &l, 1.0).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = map(2, vec![0.5; 4]);
        let l = mask(1, vec![true; 4]);
        assert!(msfi(&s, &l, &[1.0, 1.0]).is_err());
        assert!(iou(&s, &l, 0.5).is_err());
    }

    /// Independent reference: a plain double loop over voxel indices.
    fn msfi_reference(s: &[f64], l: &[bool], phi: &[f64], n: usize) -> f64 {
        let sum_phi: f64 = phi.iter().sum();
        if sum_phi == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (m, &p) in phi.iter().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in m * n..(m + 1) * n {
                let pos = if s[i] > 0.0 { s[i] } else { 0.0 };
                den += pos;
                if l[i] {
                    num += pos;
                }
            }
            acc += p * if den == 0.0 { 0.0 } else { num / den };
        }
        acc / sum_phi
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<f64>)> {
        (1usize..5, 1usize..20).prop_flat_map(|(m, n)| {
            (
                proptest::collection::vec(-1.0f64..1.0, m * n),
                proptest::collection::vec(any::<bool>(), m * n),
                proptest::collection::vec(0.0f64..1.0, m),
            )
        })
    }

    proptest! {
        #[test]
        fn msfi_properties((s, l, phi) in instance(), scale in 0.01f64..100.0) {
            let m = phi.len();
            let n = s.len() / m;
            let sm = map(m, s.clone());
            let lm = mask(m, l.clone());
            let v = msfi(&sm, &lm, &phi).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - msfi_reference(&s, &l, &phi, n)).abs() <= 1e-12);
            let scaled: Vec<f64> = phi.iter().map(|p| p * scale).collect();
            prop_assert!((msfi(&sm, &lm, &scaled).unwrap() - v).abs() <= 1e-12);
            // one modality's saliency rescaled
            let mut s2 = s.clone();
            s2[..n].iter_mut().for_each(|x| *x *= scale);
            prop_assert!((msfi(&map(m, s2), &lm, &phi).unwrap() - v).abs() <= 1e-12);
        }

        #[test]
        fn msfi_monotone_under_inward_transfer(
            (s, l, phi) in instance(),
            frac in 0.0f64..1.0,
        ) {
            let m = phi.len();
            let n = s.len() / m;
            let before = msfi(&map(m, s.clone()), &mask(m, l.clone()), &phi).unwrap();
            // move part of one outside positive value to an inside voxel of
            // the same modality
            for mi in 0..m {
                let range = mi * n..(mi + 1) * n;
                let out = range.clone().find(|&i| !l[i] && s[i] > 0.0);
                let inn = range.clone().find(|&i| l[i]);
                if let (Some(o), Some(t)) = (out, inn) {
                    let mut s2 = s.clone();
                    let moved = s2[o] * frac;
                    s2[o] -= moved;
                    s2[t] = s2[t].max(0.0) + moved;
                    let after = msfi(&map(m, s2), &mask(m, l.clone()), &phi).unwrap();
                    prop_assert!(after >= before - 1e-12, "{} -> {}", before, after);
                }
            }
        }

        #[test]
        fn estimated_mi_sign_clamp_invariant((s, _, _) in instance()) {
            let m = (1..5).rev().find(|m| s.len() % m == 0).unwrap();
            let raw = map(m, s);
            let clamped: Vec<f64> = raw.data().iter().map(|v| v.max(0.0)).collect();
            prop_assert_eq!(estimated_mi(&map(m, clamped)), estimated_mi(&raw));
        }

        /// Without an active cap, postprocessing rescales positives by one
        /// factor, so the ordering of modalities is kept.
        #[test]
        fn estimated_mi_argmax_kept_without_cap(
            (s, _, _) in instance(),
            top in 3usize..6,
        ) {
            let m = (1..5).rev().find(|m| s.len() % m == 0).unwrap();
            let n = s.len() / m;
            // saturate the top so the 99th percentile equals the maximum
            let mut values = s;
            for i in 0..top.min(n) {
                values[i] = 2.0;
            }
            if top > n {
                values.iter_mut().skip(n).take(top - n).for_each(|v| *v = 2.0);
            }
            let raw = map(m, values);
            if percentile_linear(raw.data(), 99.0) == 2.0 {
                let before = estimated_mi(&raw);
                let after = estimated_mi(&postprocess(&raw).unwrap());
                for (b, a) in before.iter().zip(&after) {
                    prop_assert!((b / 2.0 - a).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn capping_can_change_estimated_mi_argmax() {
        // modality 0: one large spike; modality 1: broad moderate evidence
        let mut values = vec![0.0; 200];
        values[0] = 100.0;
        values[100..160].iter_mut().for_each(|v| *v = 1.0);
        let raw = map(2, values);
        let before = estimated_mi(&raw);
        let after = estimated_mi(&postprocess(&raw).unwrap());
        assert!(before[0] > before[1]);
        assert!(after[0] < after[1]);
    }
}
