use crate::error::{Error, Result};
use crate::metrics::special::student_t_two_sided;

fn check_pair(a: &[f64], b: &[f64], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min_len {
        return Err(Error::Stats(format!(
            "need at least {min_len} pairs, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Stats("non-finite value in rank statistic input".into()));
    }
    Ok(())
}

/// 1-based ranks in ascending order; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| (values[i] + 0.0).total_cmp(&(values[j] + 0.0)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Number of pairs within runs of equal adjacent elements.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort that returns the number of inversions.
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_counting_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's tau-b, O(n log n) (Knight's algorithm).
///
/// Returns 0 when either vector is constant (zero denominator).
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    let n = a.len() as u64;
    // `+ 0.0` folds -0.0 into 0.0 so total_cmp agrees with ==
    let mut pairs: Vec<(f64, f64)> = a.iter().zip(b).map(|(&x, &y)| (x + 0.0, y + 0.0)).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));

    let a_sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tie_a = tied_pairs(&a_sorted);
    let tie_both = tied_pairs(&pairs);
    let mut bs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; bs.len()];
    let discordant = sort_counting_swaps(&mut bs, &mut buf);
    let tie_b = tied_pairs(&bs);

    let total = n * (n - 1) / 2;
    // concordant - discordant
    let numer = total as i64 - tie_a as i64 - tie_b as i64 + tie_both as i64
        - 2 * discordant as i64;
    let (da, db) = (total - tie_a, total - tie_b);
    Ok(tau_from_counts(numer, da, db))
}

/// `(P - Q) / sqrt(da * db)` with the zero-denominator convention.
pub(crate) fn tau_from_counts(numer: i64, da: u64, db: u64) -> f64 {
    if da == 0 || db == 0 {
        return 0.0;
    }
    numer as f64 / (da as f64 * db as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Spearman's rank correlation with a two-sided t-approximation p-value.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Correlation> {
    check_pair(a, b, 3)?;
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Stats(
            "Spearman correlation undefined: a vector has zero variance".into(),
        ));
    }
    let rho = (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0);
    let df = n - 2.0;
    let p_value = if rho.abs() == 1.0 {
        0.0
    } else {
        student_t_two_sided(rho * (df / (1.0 - rho * rho)).sqrt(), df)
    };
    Ok(Correlation { rho, p_value, n: a.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct O(n^2) pair classification.
    fn brute_tau(a: &[f64], b: &[f64]) -> f64 {
        let (mut p, mut q, mut ta, mut tb) = (0i64, 0i64, 0u64, 0u64);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                let da = a[i] - a[j];
                let db = b[i] - b[j];
                match (da == 0.0, db == 0.0) {
                    (true, true) => {}
                    (true, false) => ta += 1,
                    (false, true) => tb += 1,
                    _ if (da > 0.0) == (db > 0.0) => p += 1,
                    _ => q += 1,
                }
            }
        }
        let pq = (p + q) as u64;
        tau_from_counts(p - q, pq + tb, pq + ta)
    }

    #[test]
    fn four_element_example() {
        let a = [0.03, 0.55, -0.04, 0.16];
        let b = [0.10, 0.40, 0.05, 0.50];
        let t = kendall_tau_b(&a, &b).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(t, brute_tau(&a, &b));
    }

    #[test]
    fn degenerate_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau_b(&a, &a).unwrap(), 1.0);
        assert_eq!(kendall_tau_b(&a, &[2.0; 4]).unwrap(), 0.0);
        assert_eq!(kendall_tau_b(&[5.0; 4], &[2.0; 4]).unwrap(), 0.0);
        assert!(kendall_tau_b(&a, &a[..3]).is_err());
        assert!(kendall_tau_b(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_perfect() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let c = spearman(&a, &a).unwrap();
        assert_eq!(c.rho, 1.0);
        assert!(c.p_value < 0.05);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        let c = spearman(&a, &neg).unwrap();
        assert_eq!(c.rho, -1.0);
        assert!(c.p_value < 0.05);
        assert!(spearman(&a, &[1.0; 5]).is_err());
        assert!(spearman(&a[..2], &a[..2]).is_err());
    }

    #[test]
    fn spearman_reference() {
        // scipy.stats.spearmanr([1,2,3,4,5,6], [2,1,4,3,6,5]) -> 0.8285714285714287, 0.0415626...
        let c = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2.0, 1.0, 4.0, 3.0, 6.0, 5.0]).unwrap();
        assert!((c.rho - 0.828_571_428_571_428_7).abs() < 1e-12);
        let t = c.rho * (4.0 / (1.0 - c.rho * c.rho)).sqrt();
        assert!((c.p_value - student_t_two_sided(t, 4.0)).abs() < 1e-15);
        assert!((c.p_value - 0.041_562_7).abs() < 1e-6, "{}", c.p_value);
    }

    fn tied_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec((-3i32..3).prop_map(f64::from), n)
    }

    #[test]
    fn signed_zero_is_a_tie() {
        let a = [-0.0, 0.0, 1.0];
        let b = [5.0, 1.0, 2.0];
        assert_eq!(kendall_tau_b(&a, &b).unwrap(), brute_tau(&a, &b));
        assert_eq!(average_ranks(&[0.0, -0.0]), vec![1.5, 1.5]);
    }

    proptest! {
        #[test]
        fn tau_matches_brute_force(
            (a, b) in (2usize..50).prop_flat_map(|n| (tied_vec(n), tied_vec(n)))
        ) {
            let t = kendall_tau_b(&a, &b).unwrap();
            prop_assert_eq!(t, brute_tau(&a, &b));
            prop_assert_eq!(t, kendall_tau_b(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&t));
        }
    }
}
