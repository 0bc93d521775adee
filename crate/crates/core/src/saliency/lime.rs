use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::{mask_segments, paint_segments, MethodConfig, SegmentGrid, TargetScore};
use crate::error::{Error, Result};
use crate::tensorio::{MultiModalVolume, SaliencyMap};
use crate::util::rng_for;

/// Weighted ridge regression with an unpenalized intercept.
///
/// Minimizes `sum_i w_i (y_i - b - x_i . beta)^2 + lambda |beta|^2` and
/// returns `beta`.
pub(crate) fn weighted_ridge(
    rows: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    let w_sum: f64 = w.iter().sum();
    if w_sum <= 0.0 {
        return Err(Error::Singular("all sample weights are zero".into()));
    }
    let mean_x: Vec<f64> = (0..k)
        .map(|j| (0..n).map(|i| w[i] * rows[i][j]).sum::<f64>() / w_sum)
        .collect();
    let mean_y = (0..n).map(|i| w[i] * y[i]).sum::<f64>() / w_sum;

    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..n {
        let xc: Vec<f64> = (0..k).map(|j| rows[i][j] - mean_x[j]).collect();
        let yc = y[i] - mean_y;
        for a in 0..k {
            rhs[a] += w[i] * xc[a] * yc;
            for b in 0..=a {
                gram[(a, b)] += w[i] * xc[a] * xc[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
        gram[(a, a)] += lambda;
    }
    solve_spd(gram, &rhs, "ridge normal equations")
}

/// Cholesky solve that also rejects numerically rank-deficient systems
/// (a pivot below `1e-12` of the largest diagonal entry).
pub(crate) fn solve_spd(gram: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<Vec<f64>> {
    let n = gram.nrows();
    let scale = (0..n).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let singular = || Error::Singular(format!("{what} ({n} unknowns)"));
    let chol = gram.cholesky().ok_or_else(singular)?;
    let l = chol.l_dirty();
    if (0..n).any(|i| l[(i, i)] * l[(i, i)] <= 1e-12 * scale) {
        return Err(singular());
    }
    Ok(chol.solve(rhs).iter().copied().collect())
}

/// LIME with binary segment-presence features.
///
/// The first draw is the unperturbed input; the rest switch each segment on
/// with probability 1/2. Draws are weighted by an exponential kernel on the
/// fraction of removed segments, and a ridge surrogate is fitted. Each
/// segment's coefficient becomes its attribution.
pub fn lime(
    volume: &MultiModalVolume,
    target: &dyn TargetScore,
    cfg: &MethodConfig,
    grid: &SegmentGrid,
) -> Result<SaliencyMap> {
    volume.layout().ensure_same(grid.layout(), "segment grid")?;
    cfg.validate(volume.layout())?;
    let k = grid.n_segments();
    if cfg.n_samples < k {
        return Err(Error::Config(format!(
            "LIME needs n_samples >= {k} segments, got {}",
            cfg.n_samples
        )));
    }
    let mut rng = rng_for(cfg.seed, 0);
    let mut draws = vec![vec![true; k]];
    while draws.len() < cfg.n_samples {
        draws.push((0..k).map(|_| rng.random_bool(0.5)).collect());
    }
    let y = draws
        .par_iter()
        .map(|z| target.score(&mask_segments(volume, grid, |j| z[j])))
        .collect::<Result<Vec<f64>>>()?;
    let rows: Vec<Vec<f64>> = draws
        .iter()
        .map(|z| z.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
        .collect();
    let weights: Vec<f64> = draws
        .iter()
        .map(|z| {
            let distance = 1.0 - z.iter().filter(|&&b| b).count() as f64 / k as f64;
            (-(distance * distance) / (cfg.kernel_width * cfg.kernel_width)).exp()
        })
        .collect();
    let coef = weighted_ridge(&rows, &y, &weights, cfg.ridge_lambda)?;
    paint_segments(volume, grid, &coef)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::Method;
    use crate::tensorio::{Dims, Layout};

    fn volume() -> MultiModalVolume {
        let layout = Layout::new(vec!["a", "b"], Dims::new_2d(4, 4)).unwrap();
        MultiModalVolume::new(layout, (0..32).map(|i| 1.0 + i as f32).collect()).unwrap()
    }

    fn cfg(n: usize, lambda: f64, seed: u64) -> MethodConfig {
        let mut c = MethodConfig::new(Method::Lime).with_seed(seed);
        c.n_samples = n;
        c.ridge_lambda = lambda;
        c
    }

    /// Gaussian elimination with partial pivoting on the weighted normal
    /// equations of `[1, x]`, independent of the Cholesky path.
    fn reference_wls(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
        let p = rows[0].len() + 1;
        let mut a = vec![vec![0.0; p + 1]; p];
        for ((r, &yi), &wi) in rows.iter().zip(y).zip(w) {
            let x: Vec<f64> = std::iter::once(1.0).chain(r.iter().copied()).collect();
            for i in 0..p {
                for j in 0..p {
                    a[i][j] += wi * x[i] * x[j];
                }
                a[i][p] += wi * x[i] * yi;
            }
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for j in c..=p {
                        a[r][j] -= f * a[c][j];
                    }
                }
            }
        }
        (1..p).map(|i| a[i][p] / a[i][i]).collect()
    }

    #[test]
    fn recovers_linear_coefficients() {
        let v = volume();
        let grid = SegmentGrid::blocks(v.layout(), [2, 2, 1], true).unwrap();
        let c: Vec<f64> = (0..grid.n_segments()).map(|k| (k as f64 * 0.37).sin()).collect();
        let g = grid.clone();
        let coefs = c.clone();
        let target = move |x: &MultiModalVolume| {
            (0..g.n_segments())
                .map(|k| if x.data()[g.members(k)[0]] != 0.0 { coefs[k] } else { 0.0 })
                .sum::<f64>()
        };
        let s = lime(&v, &target, &cfg(200, 1e-10, 4), &grid).unwrap();
        for k in 0..grid.n_segments() {
            let got = s.data()[grid.members(k)[0]];
            assert!((got - c[k]).abs() < 1e-6, "segment {k}: {got} vs {}", c[k]);
        }
    }

    #[test]
    fn ridge_matches_reference_solver() {
        let mut rng = rng_for(1, 2);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..5).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect())
            .collect();
        let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let w: Vec<f64> = (0..40).map(|_| 0.1 + rng.random::<f64>()).collect();
        let got = weighted_ridge(&rows, &y, &w, 0.0).unwrap();
        let expect = reference_wls(&rows, &y, &w);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_target_near_zero() {
        let v = volume();
        let grid = SegmentGrid::blocks(v.layout(), [2, 2, 1], true).unwrap();
        let s = lime(&v, &|_: &MultiModalVolume| 0.42, &cfg(64, 0.01, 0), &grid).unwrap();
        assert!(s.data().iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn single_segment_closed_form() {
        let v = volume();
        let grid = SegmentGrid::from_ids(v.layout(), vec![0; 32], true).unwrap();
        let target = |x: &MultiModalVolume| 0.2 + 0.01 * f64::from(x.data()[9]);
        let s = lime(&v, &target, &cfg(20, 0.0, 3), &grid).unwrap();
        let expect = target(&v) - 0.2;
        assert!((s.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples_rejected() {
        let v = volume();
        let grid = SegmentGrid::blocks(v.layout(), [2, 2, 1], true).unwrap();
        assert!(lime(&v, &|_: &MultiModalVolume| 0.0, &cfg(4, 0.01, 0), &grid).is_err());
    }

    #[test]
    fn singular_without_ridge() {
        // two segments that always co-occur in a 2-draw design
        let rows = vec![vec![1.0, 1.0], vec![0.0, 0.0]];
        assert!(weighted_ridge(&rows, &[1.0, 0.0], &[1.0, 1.0], 0.0).is_err());
    }
}
