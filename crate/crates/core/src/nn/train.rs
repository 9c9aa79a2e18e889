use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{backward, cross_entropy, forward, l2_penalty, predict_tensor, Mode, ModelSpec, ParamStore, Tensor3};
use super::optim::nadam_step;
use crate::error::{Error, Result};
use crate::io::EpochSet;
use crate::rng;

pub const DEFAULT_STRIDE: usize = 3;

/// Network inputs with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor3,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(x: Tensor3, labels: Vec<usize>) -> Result<Dataset> {
        if x.dim().0 != labels.len() {
            return Err(Error::Shape(format!("{} samples, {} labels", x.dim().0, labels.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("network input contains non-finite values".into()));
        }
        Ok(Dataset { x, labels })
    }

    /// `(trial, time, stream)` tensor keeping every `stride`-th sample.
    pub fn from_epochs(es: &EpochSet, stride: usize) -> Result<Dataset> {
        if stride == 0 {
            return Err(Error::Config("decimation stride must be at least 1".into()));
        }
        let x = es.data.slice(s![.., .., ..;stride]).permuted_axes([0, 2, 1]).as_standard_layout().into_owned();
        Dataset::new(x, es.labels.iter().map(|c| c.index()).collect())
    }

    /// Flat features as sequences of length one.
    pub fn from_features(values: ArrayView2<f64>, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(values.to_owned().insert_axis(Axis(1)), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub min_delta: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub noise_sigma: f64,
    pub dropout: f64,
    pub recurrent_dropout: f64,
    pub l2: f64,
    pub units: usize,
    pub stride: usize,
    /// Rescale each batch gradient so its global L2 norm is at most this;
    /// 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 4,
            max_epochs: 100,
            early_stop_patience: 10,
            min_delta: 1e-4,
            plateau_factor: 0.5,
            plateau_patience: 5,
            min_lr: 1e-5,
            noise_sigma: 0.1,
            dropout: 0.1,
            recurrent_dropout: 0.1,
            l2: super::model::DEFAULT_L2,
            units: 32,
            stride: DEFAULT_STRIDE,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")))
            }
        };
        rate("dropout", self.dropout)?;
        rate("recurrent_dropout", self.recurrent_dropout)?;
        rate("plateau_factor", self.plateau_factor)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.units == 0 || self.stride == 0 {
            return Err(Error::Config("batch_size, max_epochs, units and stride must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.l2 >= 0.0 && self.min_lr >= 0.0 && self.min_delta >= 0.0 && self.clip_norm >= 0.0) {
            return Err(Error::Config("noise_sigma, l2, min_lr, min_delta and clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    /// The default recurrent architecture for `input_width` streams.
    pub fn default_spec(&self, input_width: usize) -> ModelSpec {
        ModelSpec::default_architecture(
            input_width,
            self.units,
            self.dropout,
            self.recurrent_dropout,
            self.noise_sigma,
            self.l2,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub checksum: String,
}

impl TrainReport {
    pub fn to_csv_string(&self) -> String {
        use crate::numfmt::fmt_f64;
        let mut out = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch,
                fmt_f64(e.train_loss),
                fmt_f64(e.train_accuracy),
                fmt_f64(e.val_loss),
                fmt_f64(e.val_accuracy),
                fmt_f64(e.lr)
            ));
        }
        out
    }
}

/// Shuffled index batches; a trailing batch of one joins the previous batch
/// so that batch statistics are always defined.
fn batches(n: usize, size: usize, rng: &mut rng::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

pub fn accuracy_of(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = probs
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

fn check_data(spec: &ModelSpec, d: &Dataset, what: &str) -> Result<()> {
    if d.x.dim().2 != spec.input_width {
        return Err(Error::Shape(format!("{what} set has {} features, model expects {}", d.x.dim().2, spec.input_width)));
    }
    if let Some(&bad) = d.labels.iter().find(|&&y| y >= spec.n_classes()) {
        return Err(Error::Invalid(format!("{what} label {bad} out of range")));
    }
    Ok(())
}

/// Mini-batch Nadam with early stopping on validation loss (best weights
/// restored) and learning-rate reduction on plateaus.
pub fn train(spec: &ModelSpec, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(ParamStore, TrainReport)> {
    cfg.validate()?;
    spec.validate()?;
    check_data(spec, train, "training")?;
    check_data(spec, val, "validation")?;
    if train.len() < 2 {
        return Err(Error::Invalid("training needs at least two samples".into()));
    }
    if val.is_empty() {
        return Err(Error::Invalid("validation set is empty".into()));
    }
    let mut store = spec.init(rng::derive_seed(cfg.seed, 0))?;
    let mut shuffle = rng::derived(cfg.seed, 1);
    let mut lr = cfg.lr;
    let mut best = (f64::INFINITY, store.clone(), 0usize);
    let mut wait = 0;
    let mut plateau_best = f64::INFINITY;
    let mut plateau_wait = 0;
    let mut stopped_early = false;
    let mut records = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0.0, 0usize);
        let bs = batches(train.len(), cfg.batch_size, &mut shuffle);
        for (bi, idx) in bs.iter().enumerate() {
            let batch = train.select(idx);
            let seed = rng::derive_seed(cfg.seed, 2 + ((epoch as u64) << 24 | bi as u64));
            let fwd = forward(spec, &store, &batch.x, Mode::Train { seed })?;
            let l = cross_entropy(&fwd.probs, &batch.labels) + l2_penalty(&store, spec.l2);
            if !l.is_finite() {
                return Err(Error::Numerical(format!("training loss became {l} at epoch {}", epoch + 1)));
            }
            loss_sum += l * idx.len() as f64;
            hits += accuracy_of(&fwd.probs, &batch.labels) * idx.len() as f64;
            seen += idx.len();
            let mut grads = backward(spec, &store, &fwd, &batch.labels)?;
            clip_global_norm(&mut grads, cfg.clip_norm);
            nadam_step(&mut store.params, &grads, &mut store.optimizer, lr);
            store.update_running(spec, &fwd.batch_stats);
        }
        let vp = predict_tensor(spec, &store, &val.x, 64)?;
        let val_loss = cross_entropy(&vp, &val.labels) + l2_penalty(&store, spec.l2);
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("validation loss became {val_loss} at epoch {}", epoch + 1)));
        }
        records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            train_accuracy: hits / seen as f64,
            val_loss,
            val_accuracy: accuracy_of(&vp, &val.labels),
            lr,
        });
        log::debug!("epoch {} val_loss {val_loss:.5} lr {lr:.2e}", epoch + 1);
        if val_loss < plateau_best - cfg.min_delta {
            plateau_best = val_loss;
            plateau_wait = 0;
        } else {
            plateau_wait += 1;
            if plateau_wait >= cfg.plateau_patience {
                lr = (lr * cfg.plateau_factor).max(cfg.min_lr);
                plateau_wait = 0;
            }
        }
        if val_loss < best.0 - cfg.min_delta {
            best = (val_loss, store.clone(), epoch + 1);
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (_, store, best_epoch) = best;
    let report = TrainReport {
        epochs: records,
        best_epoch,
        stopped_early,
        checksum: store.checksum(),
    };
    Ok((store, report))
}

/// Inference-mode probabilities, one row per sample.
fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| g.mapv_inplace(|v| v * k));
    }
}

pub fn predict(spec: &ModelSpec, store: &ParamStore, data: &Tensor3) -> Result<Array2<f64>> {
    predict_tensor(spec, store, data, 64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lr: Vec<f64>,
    pub dropout: Vec<f64>,
    pub units: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lr: f64,
    pub dropout: f64,
    pub units: usize,
    /// Validation classification error of the restored weights; 1 when the
    /// run diverged.
    pub val_error: f64,
    pub diverged: bool,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: usize,
    pub rows: Vec<GridRow>,
}

impl GridResult {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

/// Lowest validation error; ties go to smaller units, then larger dropout,
/// then smaller lr.
fn select_best(rows: &[GridRow]) -> usize {
    (0..rows.len())
        .min_by(|&a, &b| {
            let (x, y) = (&rows[a], &rows[b]);
            x.diverged
                .cmp(&y.diverged)
                .then(x.val_error.total_cmp(&y.val_error))
                .then(x.units.cmp(&y.units))
                .then(y.dropout.total_cmp(&x.dropout))
                .then(x.lr.total_cmp(&y.lr))
        })
        .expect("non-empty grid")
}

/// Trains one model per grid point and picks the lowest validation error,
/// breaking ties by smaller units, then larger dropout, then smaller lr.
/// Runs that produce non-finite values are recorded as diverged.
pub fn grid_search(template: &ModelSpec, grid: &Grid, train_set: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<GridResult> {
    if grid.lr.is_empty() || grid.dropout.is_empty() || grid.units.is_empty() {
        return Err(Error::Config("grid has an empty axis".into()));
    }
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &lr in &grid.lr {
        for &dropout in &grid.dropout {
            for &units in &grid.units {
                let spec = template.clone().with_units(units).with_dropout(dropout);
                let c = TrainConfig {
                    lr,
                    dropout,
                    recurrent_dropout: dropout,
                    units,
                    seed: rng::derive_seed(cfg.seed, 1000 + cell),
                    ..cfg.clone()
                };
                cell += 1;
                let row = match train(&spec, train_set, val, &c) {
                    Ok((store, report)) => {
                        let p = predict(&spec, &store, &val.x)?;
                        GridRow {
                            lr,
                            dropout,
                            units,
                            val_error: 1.0 - accuracy_of(&p, &val.labels),
                            diverged: false,
                            best_epoch: report.best_epoch,
                        }
                    }
                    Err(Error::NonFinite { .. } | Error::Numerical(_)) => GridRow {
                        lr,
                        dropout,
                        units,
                        val_error: 1.0,
                        diverged: true,
                        best_epoch: 0,
                    },
                    Err(e) => return Err(e),
                };
                rows.push(row);
            }
        }
    }
    let best = select_best(&rows);
    Ok(GridResult { best, rows })
}
