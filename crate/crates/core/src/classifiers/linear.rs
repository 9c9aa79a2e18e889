use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_xy, Classifier};
use crate::error::{Error, Result};
use crate::nn::softmax_rows;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Logreg,
    SvmOvr,
    Slda,
}

/// `scores = X·W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub kind: LinearKind,
    pub converged: bool,
}

impl Classifier for LinearModel {
    fn scores(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weights.nrows() {
            return Err(Error::Shape(format!("{} features, model fitted on {}", x.ncols(), self.weights.nrows())));
        }
        Ok(x.dot(&self.weights) + &self.bias)
    }
}

impl LinearModel {
    /// Softmax of the scores (calibrated only for logistic regression).
    pub fn probabilities(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.scores(x)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegParams {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        LogRegParams { l2: 1e-2, max_iter: 2000, tol: 1e-6 }
    }
}

fn logreg_objective(x: &Array2<f64>, onehot: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>, l2: f64) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let p = softmax_rows(&(x.dot(w) + b));
    let ce = -(&p.mapv(|v| v.max(1e-300).ln()) * onehot).sum() / n;
    let f = ce + l2 * w.iter().map(|v| v * v).sum::<f64>();
    let d = (&p - onehot) / n;
    let gw = x.t().dot(&d) + &(w * (2.0 * l2));
    let gb = d.sum_axis(Axis(0));
    (f, gw, gb)
}

/// Multinomial logistic regression (L2 on weights, not on biases) by
/// full-batch gradient descent with Armijo backtracking. Stops when the
/// gradient ∞-norm drops below `tol`; otherwise returns the last iterate with
/// `converged = false`.
pub fn logreg_fit(x: &Array2<f64>, y: &[usize], p: &LogRegParams) -> Result<LinearModel> {
    let k = check_xy(x, y)?;
    if !(p.l2 >= 0.0) {
        return Err(Error::Config("l2 must be non-negative".into()));
    }
    let d = x.ncols();
    let onehot = Array2::from_shape_fn((y.len(), k), |(i, c)| if y[i] == c { 1.0 } else { 0.0 });
    let mut w = Array2::zeros((d, k));
    // Start at the intercept-only optimum: log class frequencies.
    let counts = onehot.sum_axis(Axis(0));
    let mut b = counts.mapv(|c: f64| (c.max(0.5) / y.len() as f64).ln());
    b -= b.mean().unwrap_or(0.0);
    let mut step: f64 = 1.0;
    let mut converged = false;
    let (mut f, mut gw, mut gb) = logreg_objective(x, &onehot, &w, &b, p.l2);
    for _ in 0..p.max_iter {
        let gnorm = gw.iter().chain(gb.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm < p.tol {
            converged = true;
            break;
        }
        let g2: f64 = gw.iter().chain(gb.iter()).map(|v| v * v).sum();
        step = (step * 2.0).min(1e6);
        loop {
            let w_new = &w - &(&gw * step);
            let b_new = &b - &(&gb * step);
            let (f_new, gw_new, gb_new) = logreg_objective(x, &onehot, &w_new, &b_new, p.l2);
            if f_new <= f - 0.5 * step * g2 || step < 1e-16 {
                w = w_new;
                b = b_new;
                f = f_new;
                gw = gw_new;
                gb = gb_new;
                break;
            }
            step *= 0.5;
        }
    }
    if !converged {
        log::warn!("logistic regression stopped after {} iterations", p.max_iter);
    }
    Ok(LinearModel { weights: w, bias: b, kind: LinearKind::Logreg, converged })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { c: 1.0, epochs: 200, seed: 0 }
    }
}

/// One-vs-rest linear SVMs minimising `mean hinge + ‖w‖²/(2C)` by averaged
/// Pegasos subgradient steps (step `C/t`); the bias is not regularized.
pub fn svm_ovr_fit(x: &Array2<f64>, y: &[usize], p: &SvmParams) -> Result<LinearModel> {
    let k = check_xy(x, y)?;
    if !(p.c > 0.0) || p.epochs == 0 {
        return Err(Error::Config("C must be positive and epochs at least 1".into()));
    }
    let lambda = 1.0 / p.c;
    let (n, d) = x.dim();
    let mut weights = Array2::zeros((d, k));
    let mut bias = Array1::zeros(k);
    for c in 0..k {
        let mut r = rng::derived(p.seed, c as u64);
        let mut w = Array1::<f64>::zeros(d);
        let mut b = 0.0;
        let mut w_avg = Array1::<f64>::zeros(d);
        let mut b_avg = 0.0;
        let mut order: Vec<usize> = (0..n).collect();
        let mut t = 0usize;
        for _ in 0..p.epochs {
            order.shuffle(&mut r);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let yi = if y[i] == c { 1.0 } else { -1.0 };
                let margin = yi * (x.row(i).dot(&w) + b);
                w *= 1.0 - eta * lambda;
                if margin < 1.0 {
                    w.scaled_add(eta * yi, &x.row(i));
                    b += eta * yi;
                }
                // running mean of the iterates
                let a = 1.0 / t as f64;
                w_avg *= 1.0 - a;
                w_avg.scaled_add(a, &w);
                b_avg += a * (b - b_avg);
            }
        }
        weights.column_mut(c).assign(&w_avg);
        bias[c] = b_avg;
    }
    Ok(LinearModel { weights, bias, kind: LinearKind::SvmOvr, converged: true })
}
