use crate::error::Result;
use crate::tensorio::SaliencyMap;

/// Values above this percentile of the whole map are capped.
pub const CAP_PERCENTILE: f64 = 99.0;

/// Percentile with linear interpolation between closest ranks
/// (`q` in `[0, 100]`, position `q/100 * (n - 1)` in sorted order).
pub fn percentile_linear(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Caps outliers at the 99th percentile (joint over all modalities), drops
/// negative evidence, and rescales to `[0, 1]`.
pub fn postprocess(raw: &SaliencyMap) -> Result<SaliencyMap> {
    let values = raw.data();
    let cap = percentile_linear(values, CAP_PERCENTILE);
    let capped: Vec<f64> = values.iter().map(|&v| v.min(cap).max(0.0)).collect();
    let max = capped.iter().copied().fold(0.0, f64::max);
    let data = if max > 0.0 {
        capped.iter().map(|&v| (v / max).min(1.0)).collect()
    } else {
        capped
    };
    SaliencyMap::new(raw.layout().clone(), data)?.into_postprocessed()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::{Dims, Layout};
    use rand::{Rng, SeedableRng};

    fn map(values: Vec<f64>) -> SaliencyMap {
        let layout = Layout::new(vec!["a"], Dims::new_2d(1, values.len())).unwrap();
        SaliencyMap::new(layout, values).unwrap()
    }

    #[test]
    fn three_values() {
        let out = postprocess(&map(vec![-1.0, 0.5, 2.0])).unwrap();
        // p99 of [-1, .5, 2] sits at 1.97, so 2.0 is capped there
        let cap = 0.5 + (2.0 - 0.5) * 0.98;
        assert_eq!(out.data(), &[0.0, 0.5 / cap, 1.0]);
        assert!((out.data()[1] - 0.25).abs() < 0.01);
        assert!(out.is_postprocessed());
    }

    #[test]
    fn zeros_pass_through() {
        let out = postprocess(&map(vec![0.0; 5])).unwrap();
        assert_eq!(out.data(), &[0.0; 5]);
        assert!(out.is_postprocessed());
    }

    #[test]
    fn percentile_matches_numpy_linear() {
        // numpy.percentile([1, 2, 3, 4], 99) == 3.97
        assert!((percentile_linear(&[4.0, 1.0, 3.0, 2.0], 99.0) - 3.97).abs() < 1e-12);
        assert_eq!(percentile_linear(&[7.0], 99.0), 7.0);
    }

    /// Reference: sort, locate the cap by hand, clamp, then normalize.
    fn reference(values: &[f64]) -> Vec<f64> {
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = 0.99 * (s.len() as f64 - 1.0);
        let i = pos as usize;
        let cap = if i + 1 < s.len() {
            s[i] * (1.0 - (pos - i as f64)) + s[i + 1] * (pos - i as f64)
        } else {
            s[i]
        };
        let c: Vec<f64> = values.iter().map(|&v| if v > cap { cap } else { v }).collect();
        let c: Vec<f64> = c.iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect();
        let m = c.iter().cloned().fold(f64::MIN, f64::max);
        c.iter().map(|v| v / m).collect()
    }

    #[test]
    fn outlier_is_capped() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut values: Vec<f64> = (0..199).map(|_| rng.random::<f64>()).collect();
        values.push(100.0);
        let out = postprocess(&map(values.clone())).unwrap();
        let expect = reference(&values);
        for (a, b) in out.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // the outlier no longer dominates: the largest ordinary value is near 1
        let top = out.data()[..199].iter().cloned().fold(0.0, f64::max);
        assert!(top > 0.98, "top {top}");
        assert_eq!(out.data()[199], 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn range_and_order(values in proptest::collection::vec(-10.0f64..10.0, 1..200)) {
                let out = postprocess(&map(values.clone())).unwrap();
                prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
                for i in 0..values.len() {
                    for j in 0..values.len() {
                        if values[i] <= values[j] {
                            prop_assert!(out.data()[i] <= out.data()[j]);
                        }
                    }
                }
            }

            /// A second pass is the identity once the 99th percentile already
            /// sits at the maximum (the top 1% tied at 1).
            #[test]
            fn idempotent_when_top_is_saturated(
                values in proptest::collection::vec(0.0f64..1.0, 1..150),
                top in 3usize..6,
            ) {
                let mut v = values;
                v.extend(std::iter::repeat(5.0).take(top));
                let once = postprocess(&map(v)).unwrap();
                let twice = postprocess(&once).unwrap();
                prop_assert_eq!(once.data(), twice.data());
            }
        }

        #[test]
        fn second_pass_can_move_values() {
            // [0.5, 1]: the cap lands at 0.995, so pass two rescales 0.5
            let once = postprocess(&map(vec![0.5, 1.0])).unwrap();
            let twice = postprocess(&once).unwrap();
            assert!(twice.data()[0] > once.data()[0]);
        }
    }
}
