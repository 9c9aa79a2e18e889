use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng;

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let p = softmax(row.as_slice().expect("standard layout"));
        row.iter_mut().zip(p).for_each(|(o, v)| *o = v);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Selu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => relu(x),
            Activation::Selu => selu(x),
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "selu" => Ok(Activation::Selu),
            other => Err(Error::Config(format!("unknown activation {other:?} (linear, relu, selu)"))),
        }
    }
}

/// I.i.d. `N(0, 1/fan_in)` weights.
pub fn lecun_normal_init(shape: (usize, usize), fan_in: usize, seed: u64) -> Array2<f64> {
    assert!(fan_in >= 1, "fan_in must be positive");
    let d = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite std");
    let mut r = rng::seeded(seed);
    Array2::from_shape_simple_fn(shape, || d.sample(&mut r))
}

/// Matrix with orthonormal rows (when `rows <= cols`) or columns, from
/// Gram–Schmidt on a seeded Gaussian draw.
pub fn orthogonal_init(shape: (usize, usize), seed: u64) -> Array2<f64> {
    let (r, c) = shape;
    let tall = r > c;
    let (m, n) = if tall { (c, r) } else { (r, c) };
    let mut rg = rng::seeded(seed);
    let mut q = Array2::<f64>::zeros((m, n));
    let mut i = 0;
    while i < m {
        let mut v: ndarray::Array1<f64> = (0..n).map(|_| StandardNormal.sample(&mut rg)).collect();
        for j in 0..i {
            let p = q.row(j).dot(&v);
            v.scaled_add(-p, &q.row(j));
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            q.row_mut(i).assign(&(v / norm));
            i += 1;
        }
    }
    if tall {
        q.reversed_axes()
    } else {
        q
    }
}
