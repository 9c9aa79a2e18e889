use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::act::{lecun_normal_init, orthogonal_init, sigmoid, softmax_rows, Activation};
use super::optim::NadamState;
use crate::error::{Error, Result};
use crate::rng;

/// `(batch, time, feature)`.
pub type Tensor3 = Array3<f64>;

pub const DEFAULT_L2: f64 = 0.1;
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;
pub const DEFAULT_CELL_CLIP: f64 = 3.0;
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    GaussianNoise { sigma: f64 },
    TimeDense { units: usize, activation: Activation },
    /// `cell_clip` bounds the cell state to `[-clip, clip]` after every
    /// update; `None` leaves it unbounded.
    BiLstm {
        units: usize,
        return_sequences: bool,
        recurrent_dropout: f64,
        #[serde(default)]
        cell_clip: Option<f64>,
    },
    BatchNorm { momentum: f64, eps: f64 },
    Dropout { rate: f64 },
    /// Mean over time, then an affine map and activation.
    DensePooled { units: usize, activation: Activation },
    /// Mean over time, affine map, softmax.
    Output { classes: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::GaussianNoise { .. } => "gaussian_noise",
            LayerSpec::TimeDense { .. } => "time_dense",
            LayerSpec::BiLstm { .. } => "bilstm",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::DensePooled { .. } => "dense",
            LayerSpec::Output { .. } => "output",
        }
    }

    fn n_params(&self) -> usize {
        match self {
            LayerSpec::TimeDense { .. } | LayerSpec::DensePooled { .. } | LayerSpec::Output { .. } => 2,
            LayerSpec::BiLstm { .. } => 6,
            LayerSpec::BatchNorm { .. } => 2,
            LayerSpec::GaussianNoise { .. } | LayerSpec::Dropout { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
    pub l2: f64,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    first_param: usize,
    in_width: usize,
}

impl ModelSpec {
    /// Noise → TD(units, SELU) → BiLSTM(units, sequences) → BN →
    /// BiLSTM(units, final state) → Dense(16, SELU) → Dropout → Output(3).
    pub fn default_architecture(
        input_width: usize,
        units: usize,
        dropout: f64,
        recurrent_dropout: f64,
        noise_sigma: f64,
        l2: f64,
    ) -> ModelSpec {
        ModelSpec {
            input_width,
            layers: vec![
                LayerSpec::GaussianNoise { sigma: noise_sigma },
                LayerSpec::TimeDense { units, activation: Activation::Selu },
                LayerSpec::BiLstm { units, return_sequences: true, recurrent_dropout, cell_clip: Some(DEFAULT_CELL_CLIP) },
                LayerSpec::BatchNorm { momentum: BN_MOMENTUM, eps: BN_EPS },
                LayerSpec::BiLstm { units, return_sequences: true, recurrent_dropout, cell_clip: Some(DEFAULT_CELL_CLIP) },
                LayerSpec::DensePooled { units: 16, activation: Activation::Selu },
                LayerSpec::Dropout { rate: dropout },
                LayerSpec::Output { classes: crate::Class::COUNT },
            ],
            l2,
        }
    }

    /// Sets the width of every time-distributed and recurrent layer.
    pub fn with_units(mut self, units: usize) -> ModelSpec {
        for l in &mut self.layers {
            match l {
                LayerSpec::TimeDense { units: u, .. } | LayerSpec::BiLstm { units: u, .. } => *u = units,
                _ => {}
            }
        }
        self
    }

    /// Sets every dropout and recurrent-dropout rate.
    pub fn with_dropout(mut self, rate: f64) -> ModelSpec {
        for l in &mut self.layers {
            match l {
                LayerSpec::Dropout { rate: r } | LayerSpec::BiLstm { recurrent_dropout: r, .. } => *r = rate,
                _ => {}
            }
        }
        self
    }

    pub fn n_classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Output { classes }) => *classes,
            _ => 0,
        }
    }

    fn slots(&self) -> Result<Vec<Slot>> {
        if self.input_width == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 strength {} must be non-negative", self.l2)));
        }
        let n_out = self.layers.iter().filter(|l| matches!(l, LayerSpec::Output { .. })).count();
        if n_out != 1 || !matches!(self.layers.last(), Some(LayerSpec::Output { .. })) {
            return Err(Error::Config("exactly one output layer is required, and it must be last".into()));
        }
        let rate_ok = |r: f64| (0.0..1.0).contains(&r);
        let mut slots = Vec::with_capacity(self.layers.len());
        let mut width = self.input_width;
        let mut first = 0;
        for (i, l) in self.layers.iter().enumerate() {
            let out = match *l {
                LayerSpec::GaussianNoise { sigma } if sigma >= 0.0 && sigma.is_finite() => width,
                LayerSpec::Dropout { rate } if rate_ok(rate) => width,
                LayerSpec::BatchNorm { momentum, eps } if rate_ok(momentum) && eps > 0.0 => width,
                LayerSpec::TimeDense { units, .. } | LayerSpec::DensePooled { units, .. } if units > 0 => units,
                LayerSpec::BiLstm { units, recurrent_dropout, cell_clip, .. }
                    if units > 0 && rate_ok(recurrent_dropout) && cell_clip.is_none_or(|c| c > 0.0 && c.is_finite()) =>
                {
                    2 * units
                }
                LayerSpec::Output { classes } if classes >= 2 => classes,
                _ => return Err(Error::Config(format!("layer {i} ({}) has invalid settings", l.kind()))),
            };
            slots.push(Slot { first_param: first, in_width: width });
            first += l.n_params();
            width = out;
        }
        Ok(slots)
    }

    pub fn validate(&self) -> Result<()> {
        self.slots().map(|_| ())
    }

    /// LeCun-normal kernels, zero biases (forget-gate bias 1), BN scale 1.
    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let slots = self.slots()?;
        let mut params = Vec::new();
        let mut running = Vec::new();
        for (i, (l, sl)) in self.layers.iter().zip(&slots).enumerate() {
            let stream = |k: u64| rng::derive_seed(seed, (i as u64) << 8 | k);
            let mut bn = None;
            match *l {
                LayerSpec::TimeDense { units, .. } | LayerSpec::DensePooled { units, .. } | LayerSpec::Output { classes: units } => {
                    params.push(Param::kernel(format!("{i}.{}.w", l.kind()), lecun_normal_init((sl.in_width, units), sl.in_width, stream(0))));
                    params.push(Param::bias(format!("{i}.{}.b", l.kind()), Array2::zeros((1, units))));
                }
                LayerSpec::BiLstm { units, .. } => {
                    for (d, dir) in ["fwd", "bwd"].iter().enumerate() {
                        let d = d as u64 * 2;
                        params.push(Param::kernel(
                            format!("{i}.bilstm.{dir}.wx"),
                            lecun_normal_init((sl.in_width, 4 * units), sl.in_width, stream(d)),
                        ));
                        params.push(Param {
                            name: format!("{i}.bilstm.{dir}.wh"),
                            value: orthogonal_init((units, 4 * units), stream(d + 1)),
                            regularized: false,
                        });
                        let mut b = Array2::zeros((1, 4 * units));
                        b.slice_mut(s![.., units..2 * units]).fill(1.0);
                        params.push(Param::bias(format!("{i}.bilstm.{dir}.b"), b));
                    }
                }
                LayerSpec::BatchNorm { .. } => {
                    params.push(Param::bias(format!("{i}.batch_norm.gamma"), Array2::ones((1, sl.in_width))));
                    params.push(Param::bias(format!("{i}.batch_norm.beta"), Array2::zeros((1, sl.in_width))));
                    bn = Some(RunningStats {
                        mean: Array1::zeros(sl.in_width),
                        var: Array1::ones(sl.in_width),
                    });
                }
                LayerSpec::GaussianNoise { .. } | LayerSpec::Dropout { .. } => {}
            }
            running.push(bn);
        }
        let optimizer = NadamState::new(&params);
        Ok(ParamStore { params, running, optimizer })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    /// Included in the L2 penalty (dense kernels and LSTM input kernels).
    pub regularized: bool,
}

impl Param {
    fn kernel(name: String, value: Array2<f64>) -> Param {
        Param { name, value, regularized: true }
    }

    fn bias(name: String, value: Array2<f64>) -> Param {
        Param { name, value, regularized: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// Trainable parameters, batch-norm running statistics (one slot per layer)
/// and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub params: Vec<Param>,
    pub running: Vec<Option<RunningStats>>,
    pub optimizer: NadamState,
}

impl ParamStore {
    /// SHA-256 over parameter values and running statistics.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            p.value.iter().for_each(|v| h.update(v.to_le_bytes()));
        }
        for r in self.running.iter().flatten() {
            r.mean.iter().chain(r.var.iter()).for_each(|v| h.update(v.to_le_bytes()));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn n_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect()
    }

    /// Exponential moving average update of batch-norm statistics.
    pub fn update_running(&mut self, spec: &ModelSpec, batch_stats: &[Option<(Array1<f64>, Array1<f64>)>]) {
        for ((l, slot), st) in spec.layers.iter().zip(self.running.iter_mut()).zip(batch_stats) {
            if let (LayerSpec::BatchNorm { momentum, .. }, Some(r), Some((m, v))) = (l, slot, st) {
                r.mean.zip_mut_with(m, |a, &b| *a = momentum * *a + (1.0 - momentum) * b);
                r.var.zip_mut_with(v, |a, &b| *a = momentum * *a + (1.0 - momentum) * b);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Noise, dropout and batch statistics active; all random draws are
    /// derived from `seed`.
    Train { seed: u64 },
    Infer,
}

struct DirCache {
    z: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    c: Vec<Array2<f64>>,
    /// Cell state before clipping; only kept when clipping is on.
    c_raw: Vec<Array2<f64>>,
    hin: Vec<Array2<f64>>,
    mask: Option<Array2<f64>>,
}

enum Cache {
    Identity,
    Mask(Tensor3),
    Dense { x: Array2<f64>, z: Array2<f64>, time: usize },
    Lstm { x: Tensor3, fwd: DirCache, bwd: DirCache, return_sequences: bool },
    Norm { xhat: Array2<f64>, inv_std: Array1<f64>, batch_stats: bool, dims: (usize, usize) },
    Output { x: Array2<f64>, time: usize },
}

pub struct Forward {
    pub probs: Array2<f64>,
    /// Batch mean and biased variance of every batch-norm layer (train mode).
    pub batch_stats: Vec<Option<(Array1<f64>, Array1<f64>)>>,
    caches: Vec<Cache>,
}

fn to_rows(x: &Tensor3) -> Array2<f64> {
    let (b, t, f) = x.dim();
    x.as_standard_layout().into_owned().into_shape_with_order((b * t, f)).expect("contiguous")
}

fn from_rows(x: Array2<f64>, b: usize, t: usize) -> Tensor3 {
    let f = x.ncols();
    x.as_standard_layout().into_owned().into_shape_with_order((b, t, f)).expect("contiguous")
}

fn time_mean(x: &Tensor3) -> Array2<f64> {
    x.mean_axis(Axis(1)).expect("non-empty time axis")
}

fn dropout_mask(shape: (usize, usize, usize), rate: f64, seed: u64) -> Tensor3 {
    let mut r = rng::seeded(seed);
    let keep = 1.0 / (1.0 - rate);
    Array3::from_shape_simple_fn(shape, || if r.random::<f64>() < rate { 0.0 } else { keep })
}

/// Gate nonlinearities for pre-activations `z = [i | f | g | o]`:
/// sigmoid gates, ReLU candidate, `c = f⊙c_prev + i⊙g`, `h = o⊙ReLU(c)`.
fn cell_from_preactivation(
    z: &Array2<f64>,
    c_prev: &Array2<f64>,
    clip: Option<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Option<Array2<f64>>) {
    let (nb, u) = c_prev.dim();
    let mut gates = z.clone();
    let mut c = Array2::zeros((nb, u));
    let mut raw = clip.map(|_| Array2::zeros((nb, u)));
    let mut h = Array2::zeros((nb, u));
    for bi in 0..nb {
        for k in 0..u {
            let i = sigmoid(z[[bi, k]]);
            let f = sigmoid(z[[bi, u + k]]);
            let g = z[[bi, 2 * u + k]].max(0.0);
            let o = sigmoid(z[[bi, 3 * u + k]]);
            gates[[bi, k]] = i;
            gates[[bi, u + k]] = f;
            gates[[bi, 2 * u + k]] = g;
            gates[[bi, 3 * u + k]] = o;
            let mut cv = f * c_prev[[bi, k]] + i * g;
            if let (Some(m), Some(r)) = (clip, raw.as_mut()) {
                r[[bi, k]] = cv;
                cv = cv.clamp(-m, m);
            }
            c[[bi, k]] = cv;
            h[[bi, k]] = o * cv.max(0.0);
        }
    }
    (gates, c, h, raw)
}

/// Weights of one LSTM direction. `wx` is `in × 4u`, `wh` is `u × 4u`, `b`
/// is `1 × 4u`, gate blocks ordered `i, f, g, o`.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub wx: &'a Array2<f64>,
    pub wh: &'a Array2<f64>,
    pub b: &'a Array2<f64>,
}

/// One step for a batch of rows; returns `(h_t, c_t)`.
pub fn lstm_cell_forward(
    x_t: &Array2<f64>,
    h_prev: &Array2<f64>,
    c_prev: &Array2<f64>,
    w: LstmWeights<'_>,
) -> (Array2<f64>, Array2<f64>) {
    let z = x_t.dot(w.wx) + h_prev.dot(w.wh) + w.b;
    let (_, c, h, _) = cell_from_preactivation(&z, c_prev, None);
    (h, c)
}

/// Bidirectional LSTM without dropout or cell clipping. Output is `(b, T, 2u)` with
/// `return_sequences`, otherwise `(b, 1, 2u)` holding the forward state at
/// `T − 1` and the backward state at `t = 0`.
pub fn bilstm_forward(x: &Tensor3, fwd: LstmWeights<'_>, bwd: LstmWeights<'_>, return_sequences: bool) -> Tensor3 {
    let nt = x.dim().1;
    let xr = to_rows(x);
    let (hf, _) = lstm_dir_forward(x, &(xr.dot(fwd.wx) + fwd.b), fwd.wh, None, None, false);
    let (hb, _) = lstm_dir_forward(x, &(xr.dot(bwd.wx) + bwd.b), bwd.wh, None, None, true);
    if return_sequences {
        ndarray::concatenate(Axis(2), &[hf.view(), hb.view()]).expect("same batch and time")
    } else {
        ndarray::concatenate(Axis(2), &[hf.slice(s![.., nt - 1..nt, ..]), hb.slice(s![.., 0..1, ..])]).expect("same batch")
    }
}

fn lstm_dir_forward(
    x: &Tensor3,
    xw: &Array2<f64>,
    wh: &Array2<f64>,
    mask: Option<Array2<f64>>,
    clip: Option<f64>,
    reverse: bool,
) -> (Tensor3, DirCache) {
    let (nb, nt, _) = x.dim();
    let u = wh.nrows();
    let mut hs = Array3::zeros((nb, nt, u));
    let mut h = Array2::<f64>::zeros((nb, u));
    let mut c = Array2::<f64>::zeros((nb, u));
    let mut cache = DirCache {
        z: Vec::with_capacity(nt),
        gates: Vec::with_capacity(nt),
        c: Vec::with_capacity(nt),
        c_raw: Vec::new(),
        hin: Vec::with_capacity(nt),
        mask,
    };
    for step in 0..nt {
        let t = if reverse { nt - 1 - step } else { step };
        let hin = match &cache.mask {
            Some(m) => &h * m,
            None => h.clone(),
        };
        let mut z = hin.dot(wh);
        for bi in 0..nb {
            z.row_mut(bi).scaled_add(1.0, &xw.row(bi * nt + t));
        }
        let (gates, c_new, h_new, raw) = cell_from_preactivation(&z, &c, clip);
        cache.c_raw.extend(raw);
        hs.slice_mut(s![.., t, ..]).assign(&h_new);
        cache.z.push(z);
        cache.gates.push(gates);
        cache.c.push(c_new.clone());
        cache.hin.push(hin);
        h = h_new;
        c = c_new;
    }
    (hs, cache)
}

/// Returns `(dx, dwx, dwh, db)`.
fn lstm_dir_backward(
    x: &Tensor3,
    wx: &Array2<f64>,
    wh: &Array2<f64>,
    cache: &DirCache,
    dhs: &Tensor3,
    clip: Option<f64>,
    reverse: bool,
) -> (Tensor3, Array2<f64>, Array2<f64>, Array2<f64>) {
    let (nb, nt, nin) = x.dim();
    let u = wh.nrows();
    let mut dz_all = Array2::zeros((nb * nt, 4 * u));
    let mut dwh = Array2::zeros(wh.raw_dim());
    let mut dh_next = Array2::<f64>::zeros((nb, u));
    let mut dc_next = Array2::<f64>::zeros((nb, u));
    let zeros = Array2::<f64>::zeros((nb, u));
    for step in (0..nt).rev() {
        let t = if reverse { nt - 1 - step } else { step };
        let gates = &cache.gates[step];
        let c = &cache.c[step];
        let c_prev = if step > 0 { &cache.c[step - 1] } else { &zeros };
        let mut dz = Array2::zeros((nb, 4 * u));
        let mut dc_prev = Array2::zeros((nb, u));
        for bi in 0..nb {
            for k in 0..u {
                let i = gates[[bi, k]];
                let f = gates[[bi, u + k]];
                let g = gates[[bi, 2 * u + k]];
                let o = gates[[bi, 3 * u + k]];
                let cv = c[[bi, k]];
                let dh = dhs[[bi, t, k]] + dh_next[[bi, k]];
                let d_o = dh * cv.max(0.0);
                let mut dc = dc_next[[bi, k]] + if cv > 0.0 { dh * o } else { 0.0 };
                if clip.is_some_and(|m| cache.c_raw[step][[bi, k]].abs() > m) {
                    dc = 0.0;
                }
                dz[[bi, k]] = dc * g * i * (1.0 - i);
                dz[[bi, u + k]] = dc * c_prev[[bi, k]] * f * (1.0 - f);
                dz[[bi, 2 * u + k]] = if cache.z[step][[bi, 2 * u + k]] > 0.0 { dc * i } else { 0.0 };
                dz[[bi, 3 * u + k]] = d_o * o * (1.0 - o);
                dc_prev[[bi, k]] = dc * f;
            }
            dz_all.row_mut(bi * nt + t).assign(&dz.row(bi));
        }
        dwh += &cache.hin[step].t().dot(&dz);
        let mut dh = dz.dot(&wh.t());
        if let Some(m) = &cache.mask {
            dh *= m;
        }
        dh_next = dh;
        dc_next = dc_prev;
    }
    let xr = to_rows(x);
    let dwx = xr.t().dot(&dz_all);
    let db = dz_all.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dx = from_rows(dz_all.dot(&wx.t()), nb, nt);
    debug_assert_eq!(dx.dim().2, nin);
    (dx, dwx, dwh, db)
}

fn check_finite(x: &Tensor3, index: usize, l: &LayerSpec) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { index, name: l.kind().into() })
    }
}

pub fn forward(spec: &ModelSpec, store: &ParamStore, x: &Tensor3, mode: Mode) -> Result<Forward> {
    let slots = spec.slots()?;
    if x.dim().2 != spec.input_width {
        return Err(Error::Shape(format!("input has {} features, model expects {}", x.dim().2, spec.input_width)));
    }
    if x.dim().0 == 0 || x.dim().1 == 0 {
        return Err(Error::Shape("empty input batch".into()));
    }
    if store.params.len() != slots.last().map(|s| s.first_param).unwrap_or(0) + spec.layers.last().map_or(0, |l| l.n_params()) {
        return Err(Error::Shape("parameter store does not match the model".into()));
    }
    let layer_seed = |i: usize| match mode {
        Mode::Train { seed } => Some(rng::derive_seed(seed, i as u64)),
        Mode::Infer => None,
    };
    let mut h = x.clone();
    let mut caches = Vec::with_capacity(spec.layers.len());
    let mut batch_stats = Vec::with_capacity(spec.layers.len());
    let mut probs = None;
    for (i, (l, sl)) in spec.layers.iter().zip(&slots).enumerate() {
        let p = &store.params[sl.first_param..sl.first_param + l.n_params()];
        let (nb, nt, _) = h.dim();
        let mut stats = None;
        let cache = match *l {
            LayerSpec::GaussianNoise { sigma } => {
                if let (Some(seed), true) = (layer_seed(i), sigma > 0.0) {
                    let mut r = rng::seeded(seed);
                    h.mapv_inplace(|v| {
                        let e: f64 = StandardNormal.sample(&mut r);
                        v + sigma * e
                    });
                }
                Cache::Identity
            }
            LayerSpec::Dropout { rate } => match layer_seed(i) {
                Some(seed) if rate > 0.0 => {
                    let m = dropout_mask(h.dim(), rate, seed);
                    h *= &m;
                    Cache::Mask(m)
                }
                _ => Cache::Identity,
            },
            LayerSpec::TimeDense { activation, .. } => {
                let xr = to_rows(&h);
                let z = xr.dot(&p[0].value) + &p[1].value;
                h = from_rows(z.mapv(|v| activation.apply(v)), nb, nt);
                Cache::Dense { x: xr, z, time: nt }
            }
            LayerSpec::DensePooled { activation, .. } => {
                let xm = time_mean(&h);
                let z = xm.dot(&p[0].value) + &p[1].value;
                h = z.mapv(|v| activation.apply(v)).insert_axis(Axis(1));
                Cache::Dense { x: xm, z, time: nt }
            }
            LayerSpec::Output { .. } => {
                let xm = time_mean(&h);
                let z = xm.dot(&p[0].value) + &p[1].value;
                let pr = softmax_rows(&z);
                h = pr.clone().insert_axis(Axis(1));
                probs = Some(pr);
                Cache::Output { x: xm, time: nt }
            }
            LayerSpec::BiLstm { units, return_sequences, recurrent_dropout, cell_clip } => {
                let (mf, mb) = match layer_seed(i) {
                    Some(seed) if recurrent_dropout > 0.0 => {
                        let m = dropout_mask((2, nb, units), recurrent_dropout, seed);
                        (Some(m.index_axis(Axis(0), 0).to_owned()), Some(m.index_axis(Axis(0), 1).to_owned()))
                    }
                    _ => (None, None),
                };
                let xr = to_rows(&h);
                let xwf = xr.dot(&p[0].value) + &p[2].value;
                let xwb = xr.dot(&p[3].value) + &p[5].value;
                let (hf, cf) = lstm_dir_forward(&h, &xwf, &p[1].value, mf, cell_clip, false);
                let (hb, cb) = lstm_dir_forward(&h, &xwb, &p[4].value, mb, cell_clip, true);
                let out = if return_sequences {
                    ndarray::concatenate(Axis(2), &[hf.view(), hb.view()]).expect("same batch and time")
                } else {
                    let last = hf.slice(s![.., nt - 1..nt, ..]);
                    let first = hb.slice(s![.., 0..1, ..]);
                    ndarray::concatenate(Axis(2), &[last, first]).expect("same batch")
                };
                let x_in = std::mem::replace(&mut h, out);
                Cache::Lstm { x: x_in, fwd: cf, bwd: cb, return_sequences }
            }
            LayerSpec::BatchNorm { eps, .. } => {
                let xr = to_rows(&h);
                let (mean, var, batch) = match mode {
                    Mode::Train { .. } => {
                        if nb < 2 {
                            return Err(Error::Invalid(format!(
                                "layer {i} (batch_norm): train mode needs a batch of at least two"
                            )));
                        }
                        let m = xr.mean_axis(Axis(0)).expect("rows");
                        let v = xr.var_axis(Axis(0), 0.0);
                        stats = Some((m.clone(), v.clone()));
                        (m, v, true)
                    }
                    Mode::Infer => {
                        let r = store.running[i].as_ref().ok_or_else(|| Error::Shape(format!("layer {i} has no running statistics")))?;
                        (r.mean.clone(), r.var.clone(), false)
                    }
                };
                let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
                let xhat = (&xr - &mean) * &inv_std;
                let y = &xhat * &p[0].value + &p[1].value;
                h = from_rows(y, nb, nt);
                Cache::Norm { xhat, inv_std, batch_stats: batch, dims: (nb, nt) }
            }
        };
        check_finite(&h, i, l)?;
        caches.push(cache);
        batch_stats.push(stats);
    }
    Ok(Forward {
        probs: probs.expect("output layer is last"),
        batch_stats,
        caches,
    })
}

/// Mean categorical cross-entropy with probabilities floored at
/// [`PROB_FLOOR`].
pub fn cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len().max(1) as f64;
    labels.iter().enumerate().map(|(r, &y)| -probs[[r, y]].max(PROB_FLOOR).ln()).sum::<f64>() / n
}

pub fn l2_penalty(store: &ParamStore, l2: f64) -> f64 {
    l2 * store
        .params
        .iter()
        .filter(|p| p.regularized)
        .map(|p| p.value.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
}

pub fn loss(probs: &Array2<f64>, labels: &[usize], store: &ParamStore, l2: f64) -> f64 {
    cross_entropy(probs, labels) + l2_penalty(store, l2)
}

/// Reverse-mode gradients of [`loss`] for the batch that produced `fwd`.
pub fn backward(spec: &ModelSpec, store: &ParamStore, fwd: &Forward, labels: &[usize]) -> Result<Vec<Array2<f64>>> {
    let slots = spec.slots()?;
    let nb = fwd.probs.nrows();
    if labels.len() != nb {
        return Err(Error::Shape(format!("{} labels for a batch of {nb}", labels.len())));
    }
    let mut grads = store.zeros_like();
    let mut dh: Option<Tensor3> = None;
    for (i, (l, sl)) in spec.layers.iter().zip(&slots).enumerate().rev() {
        let p = &store.params[sl.first_param..sl.first_param + l.n_params()];
        let g0 = sl.first_param;
        let next = match (&fwd.caches[i], l) {
            (Cache::Output { x, time }, _) => {
                let mut dz = fwd.probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    dz[[r, y]] -= 1.0;
                }
                dz /= nb as f64;
                grads[g0] = x.t().dot(&dz);
                grads[g0 + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dx = dz.dot(&p[0].value.t()) / *time as f64;
                broadcast_time(dx, *time)
            }
            (Cache::Dense { x, z, time }, LayerSpec::DensePooled { activation, .. }) => {
                let dy = dh.take().expect("upstream gradient").index_axis_move(Axis(1), 0);
                let dz = &dy * &z.mapv(|v| activation.derivative(v));
                grads[g0] = x.t().dot(&dz);
                grads[g0 + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dx = dz.dot(&p[0].value.t()) / *time as f64;
                broadcast_time(dx, *time)
            }
            (Cache::Dense { x, z, time }, LayerSpec::TimeDense { activation, .. }) => {
                let dy = to_rows(&dh.take().expect("upstream gradient"));
                let dz = &dy * &z.mapv(|v| activation.derivative(v));
                grads[g0] = x.t().dot(&dz);
                grads[g0 + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
                from_rows(dz.dot(&p[0].value.t()), x.nrows() / time, *time)
            }
            (Cache::Identity, _) => dh.take().expect("upstream gradient"),
            (Cache::Mask(m), _) => dh.take().expect("upstream gradient") * m,
            (Cache::Norm { xhat, inv_std, batch_stats, dims }, _) => {
                let dy = to_rows(&dh.take().expect("upstream gradient"));
                grads[g0] = (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                grads[g0 + 1] = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dxhat = &dy * &p[0].value;
                let dx = if *batch_stats {
                    let n = dy.nrows() as f64;
                    let s1 = dxhat.sum_axis(Axis(0));
                    let s2 = (&dxhat * xhat).sum_axis(Axis(0));
                    ((&dxhat * n - &s1) - &(xhat * &s2)) * &(inv_std / n)
                } else {
                    dxhat * inv_std
                };
                from_rows(dx, dims.0, dims.1)
            }
            (Cache::Lstm { x, fwd: cf, bwd: cb, return_sequences }, LayerSpec::BiLstm { units, cell_clip, .. }) => {
                let u = *units;
                let dout = dh.take().expect("upstream gradient");
                let (bsz, nt, _) = x.dim();
                let (dhf, dhb) = if *return_sequences {
                    (dout.slice(s![.., .., ..u]).to_owned(), dout.slice(s![.., .., u..]).to_owned())
                } else {
                    let mut f = Array3::zeros((bsz, nt, u));
                    let mut b = Array3::zeros((bsz, nt, u));
                    f.slice_mut(s![.., nt - 1, ..]).assign(&dout.slice(s![.., 0, ..u]));
                    b.slice_mut(s![.., 0, ..]).assign(&dout.slice(s![.., 0, u..]));
                    (f, b)
                };
                let (dxf, dwxf, dwhf, dbf) = lstm_dir_backward(x, &p[0].value, &p[1].value, cf, &dhf, *cell_clip, false);
                let (dxb, dwxb, dwhb, dbb) = lstm_dir_backward(x, &p[3].value, &p[4].value, cb, &dhb, *cell_clip, true);
                grads[g0] = dwxf;
                grads[g0 + 1] = dwhf;
                grads[g0 + 2] = dbf;
                grads[g0 + 3] = dwxb;
                grads[g0 + 4] = dwhb;
                grads[g0 + 5] = dbb;
                dxf + dxb
            }
            _ => unreachable!("cache matches layer"),
        };
        dh = Some(next);
    }
    for (g, p) in grads.iter_mut().zip(&store.params) {
        if p.regularized && spec.l2 > 0.0 {
            g.scaled_add(2.0 * spec.l2, &p.value);
        }
    }
    Ok(grads)
}

fn broadcast_time(dx: Array2<f64>, time: usize) -> Tensor3 {
    let (b, f) = dx.dim();
    dx.insert_axis(Axis(1)).broadcast((b, time, f)).expect("broadcast").to_owned()
}

impl Forward {
    /// Smallest distance of any ReLU or SELU pre-activation (and ReLU'd cell
    /// state) from its kink; finite differences are reliable only when this
    /// is comfortably larger than the step.
    pub fn kink_margin(&self, spec: &ModelSpec) -> f64 {
        let mut m = f64::INFINITY;
        for (c, l) in self.caches.iter().zip(&spec.layers) {
            match (c, l) {
                (Cache::Dense { z, .. }, LayerSpec::TimeDense { activation, .. } | LayerSpec::DensePooled { activation, .. })
                    if *activation != Activation::Linear =>
                {
                    m = z.iter().fold(m, |a, v| a.min(v.abs()));
                }
                (Cache::Lstm { fwd, bwd, .. }, LayerSpec::BiLstm { units, cell_clip, .. }) => {
                    for d in [fwd, bwd] {
                        for (z, c) in d.z.iter().zip(&d.c) {
                            m = z.slice(s![.., 2 * units..3 * units]).iter().fold(m, |a, v| a.min(v.abs()));
                            // exact zeros come from a clipped candidate and stay zero nearby
                            m = c.iter().filter(|v| **v != 0.0).fold(m, |a, v| a.min(v.abs()));
                        }
                        if let Some(cl) = cell_clip {
                            m = d.c_raw.iter().flatten().fold(m, |a, v| a.min((cl - v.abs()).abs()));
                        }
                    }
                }
                _ => {}
            }
        }
        m
    }
}

/// Inference-mode class probabilities, processed in chunks of `chunk` rows.
pub fn predict_tensor(spec: &ModelSpec, store: &ParamStore, x: &Tensor3, chunk: usize) -> Result<Array2<f64>> {
    let n = x.dim().0;
    let mut out = Array2::zeros((n, spec.n_classes()));
    let chunk = chunk.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let part = x.slice(s![start..end, .., ..]).to_owned();
        let f = forward(spec, store, &part, Mode::Infer)?;
        out.slice_mut(s![start..end, ..]).assign(&f.probs);
        start = end;
    }
    Ok(out)
}
