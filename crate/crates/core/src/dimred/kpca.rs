use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    /// RBF with `gamma = 1 / (n_features · mean column variance)`.
    pub fn rbf_scaled(x: ArrayView2<f64>) -> Kernel {
        let d = x.ncols().max(1) as f64;
        let var = x.var_axis(Axis(0), 0.0).mean().unwrap_or(1.0);
        let gamma = if var > 0.0 { 1.0 / (d * var) } else { 1.0 / d };
        Kernel::Rbf { gamma }
    }

    fn eval(&self, a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
        match *self {
            Kernel::Linear => a.dot(&b),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    pub fn matrix(&self, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
        let mut k = Array2::zeros((a.nrows(), b.nrows()));
        for (i, ra) in a.rows().into_iter().enumerate() {
            for (j, rb) in b.rows().into_iter().enumerate() {
                k[[i, j]] = self.eval(ra, rb);
            }
        }
        k
    }
}

/// Fitted kernel PCA.
///
/// `alphas` columns are scaled so that `λ_i · α_iᵀα_i = 1`, which makes
/// projections onto them unit-norm feature-space directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpcaModel {
    pub kernel: Kernel,
    pub x_train: Array2<f64>,
    pub alphas: Array2<f64>,
    pub eigenvalues: Array1<f64>,
    pub n_components: usize,
    /// Number of components asked for; larger than `n_components` when the
    /// positive spectrum was shorter.
    pub requested_components: usize,
    train_col_means: Array1<f64>,
    train_mean: f64,
}

/// Removes row, column and grand means from a square kernel matrix.
pub fn double_center(k: &Array2<f64>) -> Array2<f64> {
    let n = k.nrows() as f64;
    let col = k.sum_axis(Axis(0)) / n;
    let row = k.sum_axis(Axis(1)) / n;
    let all = k.sum() / (n * n);
    let mut out = k.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = *v - row[i] - col[j] + all;
    }
    out
}

pub fn kpca_fit(x: ArrayView2<f64>, kernel: Kernel, n_components: usize) -> Result<KpcaModel> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Invalid("kernel PCA needs at least two rows".into()));
    }
    if n_components == 0 || n_components > n - 1 {
        return Err(Error::Invalid(format!(
            "requested {n_components} components from {n} rows (at most {})",
            n - 1
        )));
    }
    let k = kernel.matrix(x, x);
    let col_means = k.sum_axis(Axis(0)) / n as f64;
    let mean = k.sum() / (n * n) as f64;
    let kc = double_center(&k);
    let (vals, vecs) = symmetric_eigen(kc.view())?;
    if let Some(&lowest) = vals.iter().last() {
        let floor = -1e-10 * vals[0].abs().max(1.0);
        if lowest < floor {
            return Err(Error::Numerical(format!("centered kernel has eigenvalue {lowest:e}")));
        }
    }
    let retained = vals.iter().take(n_components).take_while(|&&l| l > 1e-12).count();
    if retained < n_components {
        log::warn!("kernel PCA: only {retained} of {n_components} requested components have positive eigenvalues");
    }
    if retained == 0 {
        return Err(Error::Numerical("centered kernel matrix has no positive eigenvalues".into()));
    }
    let eigenvalues = vals.slice(ndarray::s![..retained]).to_owned();
    let mut alphas = vecs.slice(ndarray::s![.., ..retained]).to_owned();
    for (mut col, &l) in alphas.columns_mut().into_iter().zip(eigenvalues.iter()) {
        col.mapv_inplace(|v| v / l.sqrt());
    }
    Ok(KpcaModel {
        kernel,
        x_train: x.to_owned(),
        alphas,
        eigenvalues,
        n_components: retained,
        requested_components: n_components,
        train_col_means: col_means,
        train_mean: mean,
    })
}

pub fn kpca_transform(m: &KpcaModel, x_new: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x_new.ncols() != m.x_train.ncols() {
        return Err(Error::Shape(format!(
            "{} features, model trained on {}",
            x_new.ncols(),
            m.x_train.ncols()
        )));
    }
    let mut k = m.kernel.matrix(x_new, m.x_train.view());
    let n = m.x_train.nrows() as f64;
    let row_means = k.sum_axis(Axis(1)) / n;
    for ((i, j), v) in k.indexed_iter_mut() {
        *v = *v - m.train_col_means[j] - row_means[i] + m.train_mean;
    }
    Ok(k.dot(&m.alphas))
}

impl KpcaModel {
    /// Scores of the training rows, `K′α`.
    pub fn training_scores(&self) -> Result<Array2<f64>> {
        kpca_transform(self, self.x_train.view())
    }
}
