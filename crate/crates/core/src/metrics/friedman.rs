use crate::error::{Error, Result};
use crate::metrics::rank::average_ranks;
use crate::metrics::special::chi2_sf;

/// Complete table of scores: one row per sample (block), one column per
/// method (treatment).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: Vec<String>,
    methods: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(rows: Vec<String>, methods: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != rows.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} row labels for {} rows",
                rows.len(),
                values.len()
            )));
        }
        if let Some((i, r)) = values.iter().enumerate().find(|(_, r)| r.len() != methods.len()) {
            return Err(Error::Stats(format!(
                "row {:?} has {} values for {} methods",
                rows[i],
                r.len(),
                methods.len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Stats("score matrix has non-finite cells".into()));
        }
        Ok(ScoreMatrix { rows, methods, values })
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_methods(&self) -> usize {
        self.methods.len()
    }

    /// Mean within-row rank per method. Rank 1 is the highest score; ties
    /// share the average rank.
    pub fn mean_ranks(&self) -> Vec<f64> {
        let k = self.n_methods();
        let mut sums = vec![0.0; k];
        for row in &self.values {
            let negated: Vec<f64> = row.iter().map(|v| -v).collect();
            for (s, r) in sums.iter_mut().zip(average_ranks(&negated)) {
                *s += r;
            }
        }
        let n = self.n_rows() as f64;
        sums.iter().map(|s| s / n).collect()
    }

    fn check_dims(&self) -> Result<()> {
        if self.n_rows() < 2 || self.n_methods() < 2 {
            return Err(Error::Stats(format!(
                "Friedman test needs N >= 2 samples and k >= 2 methods, got N={} k={}",
                self.n_rows(),
                self.n_methods()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanResult {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    pub mean_ranks: Vec<f64>,
}

/// Friedman rank test with the chi-square approximation (no tie
/// correction).
pub fn friedman(scores: &ScoreMatrix) -> Result<FriedmanResult> {
    scores.check_dims()?;
    let (n, k) = (scores.n_rows() as f64, scores.n_methods() as f64);
    let mean_ranks = scores.mean_ranks();
    // 12N/(k(k+1)) * sum(R_j^2) - 3N(k+1), written around the mean rank so
    // that equal mean ranks give exactly 0
    let centre = (k + 1.0) / 2.0;
    let spread: f64 = mean_ranks.iter().map(|r| (r - centre).powi(2)).sum();
    let chi2 = 12.0 * n / (k * (k + 1.0)) * spread;
    let df = scores.n_methods() - 1;
    Ok(FriedmanResult {
        chi2,
        df,
        p_value: chi2_sf(chi2, df as f64),
        mean_ranks,
    })
}

/// Two-tailed studentized range quantiles divided by sqrt(2), alpha = 0.05,
/// for k = 2..=20 groups.
const Q_05: [f64; 19] = [
    1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164, 3.219, 3.268, 3.313, 3.354,
    3.391, 3.426, 3.458, 3.489, 3.517, 3.544,
];

pub fn nemenyi_q05(k: usize) -> Result<f64> {
    k.checked_sub(2)
        .and_then(|i| Q_05.get(i))
        .copied()
        .ok_or_else(|| Error::Stats(format!("Nemenyi table covers k = 2..=20, got {k}")))
}

/// Critical difference of mean ranks for `k` methods over `n` samples.
pub fn critical_difference(k: usize, n: usize) -> Result<f64> {
    let q = nemenyi_q05(k)?;
    Ok(q * ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NemenyiResult {
    pub critical_difference: f64,
    pub mean_ranks: Vec<f64>,
    /// `significant[i][j]`: methods i and j differ (gap >= CD).
    pub significant: Vec<Vec<bool>>,
}

/// The boundary is closed: a gap of exactly CD counts.
fn ranks_differ(gap: f64, cd: f64) -> bool {
    gap >= cd
}

/// Nemenyi post-hoc comparison at alpha = 0.05. Whether the Friedman test
/// rejected first is left to the caller.
pub fn nemenyi(scores: &ScoreMatrix) -> Result<NemenyiResult> {
    scores.check_dims()?;
    let k = scores.n_methods();
    let cd = critical_difference(k, scores.n_rows())?;
    let mean_ranks = scores.mean_ranks();
    let significant = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| i != j && ranks_differ((mean_ranks[i] - mean_ranks[j]).abs(), cd))
                .collect()
        })
        .collect();
    Ok(NemenyiResult { critical_difference: cd, mean_ranks, significant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(values: Vec<Vec<f64>>) -> ScoreMatrix {
        let rows = (0..values.len()).map(|i| format!("s{i}")).collect();
        let methods = (0..values[0].len()).map(|j| format!("m{j}")).collect();
        ScoreMatrix::new(rows, methods, values).unwrap()
    }

    #[test]
    fn fixed_ordering_example() {
        let m = matrix(vec![
            vec![0.9, 0.5, 0.1],
            vec![0.8, 0.6, 0.2],
            vec![0.7, 0.4, 0.3],
            vec![0.95, 0.55, 0.05],
        ]);
        let f = friedman(&m).unwrap();
        assert_eq!(f.mean_ranks, vec![1.0, 2.0, 3.0]);
        assert!((f.chi2 - 8.0).abs() < 1e-9);
        assert_eq!(f.df, 2);
        // chi2 with 2 df: sf(8) = exp(-4)
        assert!((f.p_value - (-4.0f64).exp()).abs() < 1e-12);
        assert!((f.p_value - 0.0183).abs() < 1e-3);
    }

    #[test]
    fn identical_columns() {
        let m = matrix(vec![vec![0.3; 4], vec![0.7; 4], vec![0.1; 4]]);
        let f = friedman(&m).unwrap();
        assert_eq!(f.chi2, 0.0);
        assert_eq!(f.p_value, 1.0);
        let nem = nemenyi(&m).unwrap();
        assert!(nem.significant.iter().flatten().all(|&s| !s));
    }

    #[test]
    fn cd_two_methods() {
        let cd = critical_difference(2, 100).unwrap();
        assert!((cd - 0.196).abs() < 1e-12);
        assert!(critical_difference(21, 10).is_err());
        assert!(critical_difference(1, 10).is_err());
    }

    #[test]
    fn gap_equal_to_cd_is_significant() {
        assert!(ranks_differ(0.98, 0.98));
        assert!(!ranks_differ(0.98 - 1e-12, 0.98));
        // k=2, N=4: CD = 1.96 * sqrt(6/24) = 0.98 < gap 1.0
        let m = matrix(vec![vec![1.0, 0.0]; 4]);
        let nem = nemenyi(&m).unwrap();
        assert_eq!(nem.mean_ranks, vec![1.0, 2.0]);
        assert!(nem.significant[0][1] && nem.significant[1][0]);
        assert!(!nem.significant[0][0]);
    }

    #[test]
    fn dimension_errors() {
        assert!(friedman(&matrix(vec![vec![1.0, 2.0]])).is_err());
        assert!(friedman(&matrix(vec![vec![1.0], vec![2.0]])).is_err());
        let bad = ScoreMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![vec![1.0, 2.0], vec![1.0]],
        );
        assert!(bad.is_err());
    }

    /// Ranks from an explicit count of strictly better and tied entries.
    fn counting_ranks(row: &[f64]) -> Vec<f64> {
        row.iter()
            .map(|&v| {
                let better = row.iter().filter(|&&o| o > v).count() as f64;
                let tied = row.iter().filter(|&&o| o == v).count() as f64;
                better + (tied + 1.0) / 2.0
            })
            .collect()
    }

    proptest! {
        #[test]
        fn ranks_match_counting_oracle(
            rows in proptest::collection::vec(proptest::collection::vec(0i32..5, 4), 2..20)
        ) {
            let values: Vec<Vec<f64>> =
                rows.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
            let m = matrix(values.clone());
            let mut expect = [0.0; 4];
            for r in &values {
                for (e, x) in expect.iter_mut().zip(counting_ranks(r)) {
                    *e += x;
                }
            }
            for (a, e) in m.mean_ranks().iter().zip(expect) {
                prop_assert!((a - e / values.len() as f64).abs() < 1e-12);
            }
        }

        /// For two methods without ties, chi2 = (wins - losses)^2 / N.
        #[test]
        fn two_methods_sign_relation(
            rows in proptest::collection::vec((0.0f64..1.0, 1.0f64..2.0, any::<bool>()), 2..60)
        ) {
            let values: Vec<Vec<f64>> = rows
                .iter()
                .map(|&(lo, hi, flip)| if flip { vec![hi, lo] } else { vec![lo, hi] })
                .collect();
            let wins = rows.iter().filter(|r| r.2).count() as f64;
            let n = rows.len() as f64;
            let f = friedman(&matrix(values)).unwrap();
            let sign = (wins - (n - wins)).powi(2) / n;
            prop_assert!((f.chi2 - sign).abs() < 1e-9, "{} vs {}", f.chi2, sign);
        }
    }
}
