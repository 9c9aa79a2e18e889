//! Linear and shallow baselines on flat feature matrices, plus repeated
//! stratified cross-validation.

mod ann;
mod cv;
mod linear;
mod slda;

use ndarray::Array2;

pub use ann::{ann_baseline_fit, AnnConfig, AnnModel};
pub use cv::{crossval, stratified_folds, CvResult};
pub use linear::{logreg_fit, svm_ovr_fit, LinearKind, LinearModel, LogRegParams, SvmParams};
pub use slda::{ledoit_wolf_shrinkage, slda_fit, Shrinkage, SldaModel};

use crate::error::{Error, Result};

pub trait Classifier {
    /// One score per class; larger means more likely.
    fn scores(&self, x: &Array2<f64>) -> Result<Array2<f64>>;

    fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        Ok(self
            .scores(x)?
            .rows()
            .into_iter()
            .map(|r| crate::nn::argmax(r.iter().copied()))
            .collect())
    }
}

/// Number of classes, requiring at least two distinct labels.
pub(crate) fn check_xy(x: &Array2<f64>, y: &[usize]) -> Result<usize> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows, {} labels", x.nrows(), y.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("feature matrix contains non-finite values".into()));
    }
    let k = y.iter().copied().max().map_or(0, |m| m + 1);
    let present = (0..k).filter(|c| y.contains(c)).count();
    if present < 2 {
        return Err(Error::Invalid("at least two classes must be present".into()));
    }
    Ok(k)
}

#[cfg(test)]
pub(crate) mod testdata {
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    use crate::rng;

    /// `n` points per class around `centers`, isotropic noise `sd`.
    pub fn blobs(centers: &[[f64; 2]], n: usize, sd: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let mut x = Array2::zeros((centers.len() * n, 2));
        let mut y = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for i in 0..n {
                for j in 0..2 {
                    let e: f64 = StandardNormal.sample(&mut r);
                    x[[k * n + i, j]] = c[j] + sd * e;
                }
                y.push(k);
            }
        }
        (x, y)
    }

    pub fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
        pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }
}
