use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub mean: f64,
    /// Sample standard deviation (divisor `m − 1`) of the fold accuracies.
    pub std: f64,
    pub fold_accuracies: Vec<f64>,
}

/// Fold index per sample: each class is shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes differ by at most one.
pub fn stratified_folds(y: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = y.len();
    if k < 2 || k > n {
        return Err(Error::Config(format!("{k} folds for {n} samples")));
    }
    let n_classes = y.iter().copied().max().map_or(0, |m| m + 1);
    let mut r = rng::seeded(seed);
    let mut fold = vec![0; n];
    let mut next = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| y[i] == c).collect();
        if !members.is_empty() && members.len() < k {
            log::warn!("class {c} has {} members, fewer than {k} folds", members.len());
        }
        members.shuffle(&mut r);
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

/// Repeated stratified k-fold cross-validation. `fit_predict(train_x,
/// train_y, test_x)` returns predicted labels; repeat `r` shuffles with seed
/// `seed + r`.
pub fn crossval<F>(mut fit_predict: F, x: &Array2<f64>, y: &[usize], k: usize, repeats: usize, seed: u64) -> Result<CvResult>
where
    F: FnMut(&Array2<f64>, &[usize], &Array2<f64>) -> Result<Vec<usize>>,
{
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows, {} labels", x.nrows(), y.len())));
    }
    if repeats == 0 {
        return Err(Error::Config("at least one repeat is required".into()));
    }
    let mut accs = Vec::with_capacity(k * repeats);
    for rep in 0..repeats {
        let fold = stratified_folds(y, k, seed.wrapping_add(rep as u64))?;
        for f in 0..k {
            let test: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == f).collect();
            let train: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != f).collect();
            let xt = x.select(ndarray::Axis(0), &train);
            let yt: Vec<usize> = train.iter().map(|&i| y[i]).collect();
            let pred = fit_predict(&xt, &yt, &x.select(ndarray::Axis(0), &test))?;
            if pred.len() != test.len() {
                return Err(Error::Shape(format!("{} predictions for {} test rows", pred.len(), test.len())));
            }
            let hits = pred.iter().zip(&test).filter(|(p, &i)| **p == y[i]).count();
            accs.push(hits as f64 / test.len() as f64);
        }
    }
    let m = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / m;
    let std = if accs.len() > 1 {
        (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(CvResult { mean, std, fold_accuracies: accs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{slda_fit, Classifier, Shrinkage};

    fn balanced(n_per: usize) -> (Array2<f64>, Vec<usize>) {
        let y: Vec<usize> = (0..3 * n_per).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((y.len(), 2), |(i, j)| (i * (j + 1)) as f64);
        (x, y)
    }

    #[test]
    fn constant_predictor_scores_a_third() {
        let (x, y) = balanced(30);
        let r = crossval(|_, _, t| Ok(vec![0; t.nrows()]), &x, &y, 10, 10, 3).unwrap();
        assert_eq!(r.fold_accuracies.len(), 100);
        assert!((r.mean - 1.0 / 3.0).abs() < 1e-12);
        assert!(r.std < 1e-12);
    }

    #[test]
    fn leave_one_out() {
        let (x, y) = balanced(4);
        let r = crossval(|_, _, t| Ok(vec![1; t.nrows()]), &x, &y, 12, 1, 0).unwrap();
        assert_eq!(r.fold_accuracies.len(), 12);
        assert!(r.fold_accuracies.iter().all(|&a| a == 0.0 || a == 1.0));
    }

    #[test]
    fn repeats_use_consecutive_seeds() {
        let (x, y) = balanced(10);
        let fp = |xt: &Array2<f64>, yt: &[usize], q: &Array2<f64>| slda_fit(xt, yt, Shrinkage::Auto)?.predict(q);
        let both = crossval(fp, &x, &y, 5, 2, 40).unwrap();
        let a = crossval(fp, &x, &y, 5, 1, 40).unwrap();
        let b = crossval(fp, &x, &y, 5, 1, 41).unwrap();
        assert_eq!(both.fold_accuracies, [a.fold_accuracies, b.fold_accuracies].concat());
    }

    #[test]
    fn folds_are_stratified() {
        let (_, y) = balanced(10);
        let f = stratified_folds(&y, 10, 1).unwrap();
        for k in 0..10 {
            let members: Vec<usize> = (0..30).filter(|&i| f[i] == k).collect();
            assert_eq!(members.len(), 3);
        }
        assert!(stratified_folds(&y, 31, 1).is_err());
    }
}
