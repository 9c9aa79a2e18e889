use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::linear::{LinearKind, LinearModel};
use super::{check_xy, Classifier};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shrinkage {
    /// Ledoit–Wolf analytic estimate.
    Auto,
    Fixed(f64),
}

/// Shrinkage LDA. The covariance is `(1−γ)·S + γ·(tr S / d)·I` with `S`
/// the pooled within-class covariance (divisor `n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SldaModel {
    pub means: Array2<f64>,
    pub priors: Array1<f64>,
    pub covariance: Array2<f64>,
    pub gamma: f64,
    pub linear: LinearModel,
}

impl Classifier for SldaModel {
    fn scores(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.linear.scores(x)
    }
}

/// Ledoit–Wolf shrinkage intensity for centered rows `z` toward the scaled
/// identity, clipped to `[0, 1]`.
pub fn ledoit_wolf_shrinkage(z: &Array2<f64>) -> f64 {
    let (n, d) = z.dim();
    let s = z.t().dot(z) / n as f64;
    let mu = s.diag().sum() / d as f64;
    let mut delta2 = 0.0;
    for ((i, j), v) in s.indexed_iter() {
        let t = if i == j { mu } else { 0.0 };
        delta2 += (v - t) * (v - t);
    }
    if delta2 <= 0.0 {
        return 1.0;
    }
    // (1/n²) Σ_i ‖z_i z_iᵀ − S‖²_F, expanded to avoid d×d temporaries
    let s2: f64 = s.iter().map(|v| v * v).sum();
    let mut beta = 0.0;
    for row in z.rows() {
        let r2 = row.dot(&row);
        let quad = row.dot(&s.dot(&row));
        beta += r2 * r2 - 2.0 * quad + s2;
    }
    beta /= (n * n) as f64;
    (beta.min(delta2) / delta2).clamp(0.0, 1.0)
}

pub fn slda_fit(x: &Array2<f64>, y: &[usize], shrinkage: Shrinkage) -> Result<SldaModel> {
    let k = check_xy(x, y)?;
    let (n, d) = x.dim();
    let mut counts = vec![0usize; k];
    y.iter().for_each(|&c| counts[c] += 1);
    if let Some(c) = counts.iter().position(|&m| m < 2) {
        return Err(Error::Invalid(format!("class {c} has {} samples, at least 2 are needed", counts[c])));
    }
    let mut means = Array2::zeros((k, d));
    for (row, &c) in x.rows().into_iter().zip(y) {
        means.row_mut(c).scaled_add(1.0, &row);
    }
    for (c, mut m) in means.rows_mut().into_iter().enumerate() {
        m /= counts[c] as f64;
    }
    let mut z = x.clone();
    for (mut row, &c) in z.rows_mut().into_iter().zip(y) {
        row -= &means.row(c);
    }
    let s = z.t().dot(&z) / n as f64;
    let gamma = match shrinkage {
        Shrinkage::Auto => ledoit_wolf_shrinkage(&z),
        Shrinkage::Fixed(g) if (0.0..=1.0).contains(&g) => g,
        Shrinkage::Fixed(g) => return Err(Error::Config(format!("shrinkage {g} outside [0, 1]"))),
    };
    let mu = s.diag().sum() / d as f64;
    let mut cov = &s * (1.0 - gamma);
    for i in 0..d {
        cov[[i, i]] += gamma * mu;
    }
    let l = cholesky(cov.view()).map_err(|_| {
        Error::Numerical(format!("shrunk covariance is singular (gamma = {gamma}, {d} features, {n} samples)"))
    })?;
    let weights = cholesky_solve(&l, means.t());
    let priors = Array1::from_iter(counts.iter().map(|&c| c as f64 / n as f64));
    let bias = Array1::from_iter((0..k).map(|c| -0.5 * means.row(c).dot(&weights.column(c)) + priors[c].ln()));
    Ok(SldaModel {
        means,
        priors,
        covariance: cov,
        gamma,
        linear: LinearModel { weights, bias, kind: LinearKind::Slda, converged: true },
    })
}

impl SldaModel {
    pub fn n_classes(&self) -> usize {
        self.means.len_of(Axis(0))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testdata::{accuracy, blobs};
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    use crate::rng;

    fn correlated(n_per: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let (x, y) = blobs(&[[0.0, 0.0], [1.5, 0.5], [0.0, 2.0]], n_per, 1.0, seed);
        let mix = ndarray::array![[1.0, 0.6], [0.0, 0.8]];
        (x.dot(&mix), y)
    }

    /// Direct LDA discriminants with the pooled covariance.
    fn lda_oracle(x: &Array2<f64>, y: &[usize], q: &Array2<f64>) -> nalgebra::DMatrix<f64> {
        let (n, d) = x.dim();
        let k = 3;
        let mut mu = nalgebra::DMatrix::zeros(k, d);
        let mut cnt = [0.0; 3];
        for i in 0..n {
            cnt[y[i]] += 1.0;
            for j in 0..d {
                mu[(y[i], j)] += x[[i, j]];
            }
        }
        for c in 0..k {
            for j in 0..d {
                mu[(c, j)] /= cnt[c];
            }
        }
        let mut s = nalgebra::DMatrix::zeros(d, d);
        for i in 0..n {
            let z = nalgebra::DVector::from_fn(d, |j, _| x[[i, j]] - mu[(y[i], j)]);
            s += &z * z.transpose();
        }
        s /= n as f64;
        let inv = s.try_inverse().unwrap();
        nalgebra::DMatrix::from_fn(q.nrows(), k, |r, c| {
            let xr = nalgebra::DVector::from_fn(d, |j, _| q[[r, j]]);
            let m = mu.row(c).transpose();
            (xr.transpose() * &inv * &m)[0] - 0.5 * (m.transpose() * &inv * &m)[0] + (cnt[c] / n as f64).ln()
        })
    }

    #[test]
    fn gamma_zero_is_plain_lda() {
        let (x, y) = correlated(30, 1);
        let m = slda_fit(&x, &y, Shrinkage::Fixed(0.0)).unwrap();
        let (q, _) = correlated(5, 9);
        let got = m.scores(&q).unwrap();
        let want = lda_oracle(&x, &y, &q);
        for r in 0..q.nrows() {
            for c in 0..3 {
                assert!((got[[r, c]] - want[(r, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gamma_one_is_nearest_mean() {
        let (x, y) = correlated(20, 2);
        let m = slda_fit(&x, &y, Shrinkage::Fixed(1.0)).unwrap();
        let (q, _) = correlated(30, 3);
        let pred = m.predict(&q).unwrap();
        for (r, &p) in pred.iter().enumerate() {
            let dist = |c: usize| (&q.row(r) - &m.means.row(c)).mapv(|v| v * v).sum();
            let nearest = (0..3).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap();
            assert_eq!(p, nearest);
        }
    }

    #[test]
    fn near_bayes_on_shared_covariance() {
        let mean = [[0.0, 0.0], [1.0, 1.0]];
        let chol = ndarray::array![[1.0, 0.0], [0.5, 0.8]];
        let draw = |n: usize, seed: u64| {
            let mut r = rng::seeded(seed);
            let mut x = Array2::zeros((2 * n, 2));
            let mut y = Vec::new();
            for i in 0..2 * n {
                let c = i % 2;
                let e = Array1::from_shape_fn(2, |_| StandardNormal.sample(&mut r));
                let v = chol.dot(&e);
                x[[i, 0]] = mean[c][0] + v[0];
                x[[i, 1]] = mean[c][1] + v[1];
                y.push(c);
            }
            (x, y)
        };
        let (x, y) = draw(500, 4);
        let (xt, yt) = draw(5000, 5);
        let m = slda_fit(&x, &y, Shrinkage::Auto).unwrap();
        let acc = accuracy(&m.predict(&xt).unwrap(), &yt);
        // Bayes rule from the true parameters: Σ⁻¹(μ1 − μ0)·x > threshold
        let sigma = chol.dot(&chol.t());
        let det = sigma[[0, 0]] * sigma[[1, 1]] - sigma[[0, 1]] * sigma[[1, 0]];
        let inv = ndarray::array![[sigma[[1, 1]], -sigma[[0, 1]]], [-sigma[[1, 0]], sigma[[0, 0]]]] / det;
        let w = inv.dot(&ndarray::array![1.0, 1.0]);
        let thr = 0.5 * w.dot(&ndarray::array![1.0, 1.0]);
        let bayes: Vec<usize> = xt.rows().into_iter().map(|r| usize::from(r.dot(&w) > thr)).collect();
        let acc_bayes = accuracy(&bayes, &yt);
        assert!((acc - acc_bayes).abs() < 0.02, "{acc} vs {acc_bayes}");
    }

    #[test]
    fn affine_invariance_without_shrinkage() {
        let (x, y) = correlated(25, 6);
        let a = ndarray::array![[2.0, -1.0], [0.5, 3.0]];
        let shift = ndarray::array![4.0, -7.0];
        let xt = x.dot(&a) + &shift;
        let (q, _) = correlated(20, 7);
        let qt = q.dot(&a) + &shift;
        let s1 = slda_fit(&x, &y, Shrinkage::Fixed(0.0)).unwrap().scores(&q).unwrap();
        let s2 = slda_fit(&xt, &y, Shrinkage::Fixed(0.0)).unwrap().scores(&qt).unwrap();
        for r in 0..q.nrows() {
            // scores shift by a per-row constant; class differences agree
            for c in 1..3 {
                assert!(((s1[[r, c]] - s1[[r, 0]]) - (s2[[r, c]] - s2[[r, 0]])).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn singular_without_shrinkage_is_reported() {
        let (x2, y) = correlated(2, 1);
        let x = ndarray::concatenate(Axis(1), &[x2.view(), x2.view(), x2.view(), x2.view()]).unwrap();
        assert!(matches!(slda_fit(&x, &y, Shrinkage::Fixed(0.0)), Err(Error::Numerical(_))));
        let m = slda_fit(&x, &y, Shrinkage::Auto).unwrap();
        assert!(m.gamma > 0.0 && m.gamma <= 1.0);
    }

    #[test]
    fn auto_shrinkage_in_unit_interval() {
        for seed in 0..5 {
            let (x, y) = correlated(10, seed);
            let g = slda_fit(&x, &y, Shrinkage::Auto).unwrap().gamma;
            assert!((0.0..=1.0).contains(&g));
        }
    }
}
