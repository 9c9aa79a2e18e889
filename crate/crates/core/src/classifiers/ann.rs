use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{check_xy, Classifier};
use crate::error::{Error, Result};
use crate::eval::{round_half_up, stratified_partition};
use crate::nn::{self, Activation, Dataset, LayerSpec, ModelSpec, ParamStore, TrainConfig, TrainReport};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnConfig {
    pub hidden: usize,
    /// Fraction of the training rows used for internal training; the rest
    /// drive early stopping.
    pub inner_train_fraction: f64,
    pub train: TrainConfig,
}

impl Default for AnnConfig {
    fn default() -> Self {
        AnnConfig {
            hidden: 32,
            inner_train_fraction: 0.7,
            train: TrainConfig::default(),
        }
    }
}

/// Dense(hidden, SELU) → softmax on flat features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnModel {
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub report: TrainReport,
}

impl Classifier for AnnModel {
    fn scores(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        nn::predict(&self.spec, &self.params, &x.clone().insert_axis(ndarray::Axis(1)))
    }
}

pub fn ann_baseline_fit(x: &Array2<f64>, y: &[usize], cfg: &AnnConfig) -> Result<AnnModel> {
    if cfg.hidden == 0 {
        return Err(Error::Config("hidden layer width must be at least 1".into()));
    }
    if !(cfg.inner_train_fraction > 0.0 && cfg.inner_train_fraction < 1.0) {
        return Err(Error::Config("inner_train_fraction must lie in (0, 1)".into()));
    }
    let k = check_xy(x, y)?.max(2);
    let spec = ModelSpec {
        input_width: x.ncols(),
        layers: vec![
            LayerSpec::DensePooled { units: cfg.hidden, activation: Activation::Selu },
            LayerSpec::Output { classes: k },
        ],
        l2: cfg.train.l2,
    };
    let n_fit = round_half_up(cfg.inner_train_fraction * y.len() as f64).clamp(2, y.len().saturating_sub(1));
    let (fit_idx, val_idx) = stratified_partition(y, n_fit, &mut rng::derived(cfg.train.seed, 77));
    let all = Dataset::from_features(x.view(), y.to_vec())?;
    let (params, report) = nn::train(&spec, &all.select(&fit_idx), &all.select(&val_idx), &cfg.train)?;
    Ok(AnnModel { spec, params, report })
}
