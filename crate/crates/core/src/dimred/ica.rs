use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EpochSet;
use crate::linalg::{column_means, covariance, inv_sqrt_symmetric, symmetric_eigen};
use crate::rng;

pub const DEFAULT_ICA_COMPONENTS: usize = 20;

/// Eigenvalues below this fraction of the largest are treated as null
/// directions by [`whiten`].
pub const WHITEN_EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitening {
    pub mean: Array1<f64>,
    /// `k × d`; rows are principal directions scaled by `1/√λ`.
    pub matrix: Array2<f64>,
}

impl Whitening {
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::Shape(format!("{} columns, whitening fitted on {}", x.ncols(), self.mean.len())));
        }
        Ok((&x - &self.mean).dot(&self.matrix.t()))
    }
}

/// PCA whitening onto at most `max_components` directions (all retained
/// directions when `None`). Covariance uses the `n − 1` divisor.
pub fn whiten_to(x: ArrayView2<f64>, max_components: Option<usize>) -> Result<(Array2<f64>, Whitening)> {
    if x.nrows() < 2 {
        return Err(Error::Invalid("whitening needs at least two rows".into()));
    }
    let mean = column_means(x);
    let cov = covariance(x, 1);
    let (vals, vecs) = symmetric_eigen(cov.view())?;
    let top = vals.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::Invalid("input has zero variance".into()));
    }
    let mut k = vals.iter().take_while(|&&l| l > WHITEN_EIGEN_FLOOR * top).count();
    if let Some(m) = max_components {
        k = k.min(m);
    }
    let mut matrix = Array2::zeros((k, x.ncols()));
    for i in 0..k {
        let s = 1.0 / vals[i].sqrt();
        matrix.row_mut(i).assign(&vecs.column(i).mapv(|v| v * s));
    }
    let w = Whitening { mean, matrix };
    let xw = w.apply(x)?;
    Ok((xw, w))
}

pub fn whiten(x: ArrayView2<f64>) -> Result<(Array2<f64>, Whitening)> {
    whiten_to(x, None)
}

/// Symmetric FastICA model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaModel {
    pub whitening: Whitening,
    /// Orthonormal unmixing matrix in whitened space (`k × k`).
    pub unmixing: Array2<f64>,
    pub n_components: usize,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaParams {
    pub n_components: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for IcaParams {
    fn default() -> Self {
        IcaParams {
            n_components: DEFAULT_ICA_COMPONENTS,
            tol: 1e-6,
            max_iter: 500,
            seed: 0,
        }
    }
}

/// `W ← (W Wᵀ)^{-1/2} W`.
fn symmetric_decorrelation(w: &Array2<f64>) -> Result<Array2<f64>> {
    let s = inv_sqrt_symmetric(w.dot(&w.t()).view())?;
    Ok(s.dot(w))
}

/// Symmetric FastICA with the `tanh` contrast.
///
/// Non-convergence is not an error: the last iterate is returned with
/// `converged = false`.
pub fn ica_fit(x: ArrayView2<f64>, p: &IcaParams) -> Result<IcaModel> {
    let (rows, cols) = x.dim();
    if p.n_components == 0 || p.n_components > cols || p.n_components + 1 > rows {
        return Err(Error::Invalid(format!(
            "{} components requested from a {rows}x{cols} matrix",
            p.n_components
        )));
    }
    let (z, whitening) = whiten_to(x, Some(p.n_components))?;
    let k = whitening.matrix.nrows();
    if k < p.n_components {
        return Err(Error::Invalid(format!(
            "data has only {k} non-degenerate directions, {} requested",
            p.n_components
        )));
    }
    let mut r = rng::seeded(p.seed);
    let init = Array2::from_shape_simple_fn((k, k), || StandardNormal.sample(&mut r));
    let mut w = symmetric_decorrelation(&init)?;
    let n = rows as f64;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..p.max_iter {
        iterations = it + 1;
        let wx = z.dot(&w.t());
        let g = wx.mapv(f64::tanh);
        let g_prime_mean = g.mapv(|v| 1.0 - v * v).mean_axis(Axis(0)).expect("non-empty");
        let mut w_new = g.t().dot(&z) / n;
        for (i, mut row) in w_new.rows_mut().into_iter().enumerate() {
            row.scaled_add(-g_prime_mean[i], &w.row(i));
        }
        let w_new = symmetric_decorrelation(&w_new)?;
        let lim = w_new
            .rows()
            .into_iter()
            .zip(w.rows())
            .map(|(a, b)| (1.0 - a.dot(&b).abs()).abs())
            .fold(0.0f64, f64::max);
        w = w_new;
        if lim < p.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("FastICA did not converge in {} iterations", p.max_iter);
    }
    Ok(IcaModel {
        whitening,
        unmixing: w,
        n_components: k,
        converged,
        iterations,
    })
}

/// `(X − mean) · W_whiteᵀ · Wᵀ`.
pub fn ica_transform(m: &IcaModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(m.whitening.apply(x)?.dot(&m.unmixing.t()))
}

impl IcaModel {
    /// Full unmixing from centered observations to sources, `W · W_white`.
    pub fn full_unmixing(&self) -> Array2<f64> {
        self.unmixing.dot(&self.whitening.matrix)
    }
}

/// Rows are the time steps of the selected trials, columns the streams.
pub fn stack_time_steps(es: &EpochSet, trials: &[usize]) -> Array2<f64> {
    let (_, n_streams, n_samples) = es.data.dim();
    let mut out = Array2::zeros((trials.len() * n_samples, n_streams));
    for (i, &t) in trials.iter().enumerate() {
        let block = es.data.index_axis(Axis(0), t);
        out.slice_mut(ndarray::s![i * n_samples..(i + 1) * n_samples, ..])
            .assign(&block.t());
    }
    out
}

/// Fits ICA on the time steps of `train_trials` only.
pub fn ica_fit_epochs(es: &EpochSet, train_trials: &[usize], p: &IcaParams) -> Result<IcaModel> {
    let x = stack_time_steps(es, train_trials);
    ica_fit(x.view(), p)
}

/// Applies the model independently at every time step; streams become
/// `ic01`, `ic02`, …. Trial order and labels are unchanged.
pub fn ica_reduce_epochs(m: &IcaModel, es: &EpochSet) -> Result<EpochSet> {
    let all: Vec<usize> = (0..es.n_trials()).collect();
    let x = stack_time_steps(es, &all);
    let s = ica_transform(m, x.view())?;
    let (n_trials, _, n_samples) = es.data.dim();
    let k = m.n_components;
    let mut data = ndarray::Array3::zeros((n_trials, k, n_samples));
    for t in 0..n_trials {
        let block = s.slice(ndarray::s![t * n_samples..(t + 1) * n_samples, ..]);
        data.index_axis_mut(Axis(0), t).assign(&block.t());
    }
    let names = (1..=k).map(|i| format!("ic{i:02}")).collect();
    EpochSet::new(es.fs, es.labels.clone(), data, names, es.epoch_window_s)
}

/// Amari distance of `P` from a scaled permutation, normalized to `[0, 1]`.
pub fn amari_index(p: &Array2<f64>) -> f64 {
    let n = p.nrows();
    if n < 2 {
        return 0.0;
    }
    let a = p.mapv(f64::abs);
    let rows: f64 = a
        .rows()
        .into_iter()
        .map(|r| r.sum() / r.fold(0.0f64, |m, v| m.max(*v)) - 1.0)
        .sum();
    let cols: f64 = a
        .columns()
        .into_iter()
        .map(|c| c.sum() / c.fold(0.0f64, |m, v| m.max(*v)) - 1.0)
        .sum();
    (rows + cols) / (2.0 * n as f64 * (n as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::class::Class;
    use ndarray::array;
    use rand::Rng as _;

    fn two_sources(seed: u64, n: usize) -> Array2<f64> {
        let mut r = rng::seeded(seed);
        let mut s = Array2::zeros((n, 2));
        for i in 0..n {
            s[[i, 0]] = r.random::<f64>() * 2.0 - 1.0;
            let u: f64 = r.random::<f64>() - 0.5;
            s[[i, 1]] = -u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
        s
    }

    #[test]
    fn whitened_covariance_is_identity() {
        let mut r = rng::seeded(5);
        let base = Array2::from_shape_simple_fn((500, 3), || StandardNormal.sample(&mut r));
        let mix = array![[1.0, 0.8, 0.0], [0.0, 1.0, 0.3], [0.2, 0.0, 2.0]];
        let x = base.dot(&mix);
        let (xw, _) = whiten(x.view()).unwrap();
        let c = covariance(xw.view(), 1);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((c[[i, j]] - e).abs() < 1e-8);
            }
        }
        assert!(column_means(xw.view()).iter().all(|m| m.abs() < 1e-10));
    }

    #[test]
    fn correlated_pair_is_decorrelated() {
        let mut r = rng::seeded(12);
        let x = Array2::from_shape_fn((300, 2), |_| StandardNormal.sample(&mut r));
        let x = x.dot(&array![[1.0, 0.9], [0.0, 0.4]]);
        let (xw, _) = whiten(x.view()).unwrap();
        assert!(covariance(xw.view(), 1)[[0, 1]].abs() < 1e-8);
    }

    #[test]
    fn white_input_gives_orthogonal_whitening() {
        let mut r = rng::seeded(13);
        let raw = Array2::from_shape_fn((200, 3), |_| StandardNormal.sample(&mut r));
        let (white, _) = whiten(raw.view()).unwrap();
        let (_, w) = whiten(white.view()).unwrap();
        let p = w.matrix.dot(&w.matrix.t());
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p[[i, j]] - e).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn independent_white_input_gives_signed_permutation() {
        let s = two_sources(21, 4000);
        let (z, _) = whiten(s.view()).unwrap();
        let m = ica_fit(z.view(), &IcaParams { n_components: 2, seed: 1, ..IcaParams::default() }).unwrap();
        assert!(amari_index(&m.unmixing) < 0.05);
    }

    #[test]
    fn zero_variance_rejected() {
        let x = Array2::from_elem((10, 3), 4.0);
        assert!(whiten(x.view()).is_err());
    }

    #[test]
    fn recovers_two_sources() {
        let s = two_sources(11, 4000);
        let a = array![[1.0, 0.5], [0.5, 1.0]];
        let x = s.dot(&a.t());
        let m = ica_fit(x.view(), &IcaParams { n_components: 2, seed: 3, ..IcaParams::default() }).unwrap();
        assert!(m.converged);
        let p = m.full_unmixing().dot(&a);
        assert!(amari_index(&p) < 0.05, "{}", amari_index(&p));
        let wwt = m.unmixing.dot(&m.unmixing.t());
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((wwt[[i, j]] - e).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let x = two_sources(2, 1000);
        let p = IcaParams { n_components: 2, seed: 9, ..IcaParams::default() };
        assert_eq!(ica_fit(x.view(), &p).unwrap(), ica_fit(x.view(), &p).unwrap());
    }

    #[test]
    fn transformed_training_data_has_unit_variance() {
        let s = two_sources(4, 2000);
        let m = ica_fit(s.view(), &IcaParams { n_components: 2, ..IcaParams::default() }).unwrap();
        let y = ica_transform(&m, s.view()).unwrap();
        for v in y.var_axis(Axis(0), 1.0) {
            assert!((v - 1.0).abs() < 0.05);
        }
        let zero = ica_transform(&m, Array2::zeros((1, 2)).view()).unwrap();
        assert!(zero.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn epoch_reduction_keeps_labels() {
        let mut r = rng::seeded(8);
        let data = ndarray::Array3::from_shape_simple_fn((6, 32, 40), || StandardNormal.sample(&mut r));
        let labels: Vec<Class> = (0..6).map(|i| Class::ALL[i % 3]).collect();
        let names = (1..=16).flat_map(|c| [format!("ch{c:02}_HbO"), format!("ch{c:02}_HbR")]).collect();
        let es = EpochSet::new(10.0, labels.clone(), data, names, (-1.0, 3.0)).unwrap();
        let m = ica_fit_epochs(&es, &[0, 1, 2, 3], &IcaParams::default()).unwrap();
        let red = ica_reduce_epochs(&m, &es).unwrap();
        assert_eq!(red.n_streams(), 20);
        assert_eq!(red.labels, labels);
        assert_eq!(red.n_samples(), 40);
        // trial 5, step 7 equals the transform of that single row
        let row = es.data.slice(ndarray::s![5, .., 7]).to_owned().insert_axis(Axis(0));
        let direct = ica_transform(&m, row.view()).unwrap();
        for c in 0..20 {
            assert!((direct[[0, c]] - red.data[[5, c, 7]]).abs() < 1e-12);
        }
    }

    #[test]
    fn amari_of_permutation_is_zero() {
        assert_eq!(amari_index(&array![[0.0, -2.0], [3.0, 0.0]]), 0.0);
        assert!(amari_index(&array![[1.0, 1.0], [1.0, 1.0]]) > 0.4);
    }
}
