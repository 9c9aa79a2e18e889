//! Optical density to hemoglobin conversion, band-pass filtering, epoching
//! and baseline correction.

mod filter;
mod mbll;

use ndarray::{s, Array2, Array3};

use crate::error::{Error, Result};
use crate::io::{EpochSet, EventList};
use crate::numfmt::{ceil_tol, floor_tol};

pub use filter::{design_butterworth_bandpass, filtfilt, FilterSpec, Sos};
pub use mbll::{mbll_convert, parse_keyed, MbllParams};

pub const DEFAULT_FILTER_ORDER: usize = 3;
pub const DEFAULT_BAND_HZ: (f64, f64) = (0.01, 0.09);
pub const DEFAULT_EPOCH_WINDOW_S: (f64, f64) = (-5.0, 25.0);
pub const BASELINE_START_S: f64 = -1.0;

/// Hemoglobin concentration changes (mM), columns `chNN_HbO`, `chNN_HbR`.
#[derive(Debug, Clone, PartialEq)]
pub struct HemoSeries {
    pub fs: f64,
    pub streams: Array2<f64>,
    pub names: Vec<String>,
}

impl HemoSeries {
    pub fn new(fs: f64, streams: Array2<f64>, names: Vec<String>) -> Result<Self> {
        if streams.ncols() != names.len() {
            return Err(Error::Shape(format!("{} columns, {} names", streams.ncols(), names.len())));
        }
        if streams.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("hemoglobin series contains non-finite values".into()));
        }
        Ok(HemoSeries { fs, streams, names })
    }

    /// Zero-phase filters every stream independently.
    pub fn filtered(&self, spec: &FilterSpec) -> Result<HemoSeries> {
        let mut out = self.streams.clone();
        for mut col in out.columns_mut() {
            let x = col.to_vec();
            let y = filtfilt(spec, &x)?;
            col.assign(&ndarray::ArrayView1::from(&y));
        }
        Ok(HemoSeries {
            fs: self.fs,
            streams: out,
            names: self.names.clone(),
        })
    }
}

/// Onset-relative sample offsets `[ceil(a·fs), floor(b·fs)]` of an epoch window.
pub fn epoch_offsets(window_s: (f64, f64), fs: f64) -> (i64, i64) {
    (ceil_tol(window_s.0 * fs), floor_tol(window_s.1 * fs))
}

/// Cuts one epoch per event. Onset sample is `round(onset_s·fs)`; the
/// extracted samples are exact copies of the series.
pub fn segment_epochs(h: &HemoSeries, ev: &EventList, window_s: (f64, f64)) -> Result<EpochSet> {
    let (k0, k1) = epoch_offsets(window_s, h.fs);
    if k1 < k0 {
        return Err(Error::Invalid(format!("epoch window {window_s:?} holds no samples")));
    }
    let len = (k1 - k0 + 1) as usize;
    let n = h.streams.nrows() as i64;
    let n_streams = h.streams.ncols();
    let mut data = Array3::<f64>::zeros((ev.len(), n_streams, len));
    for (t, e) in ev.events().iter().enumerate() {
        let o = (e.onset_s * h.fs).round() as i64;
        if o + k0 < 0 || o + k1 >= n {
            return Err(Error::Invalid(format!(
                "trial {} (onset {} s) window exceeds recording bounds",
                t + 1,
                e.onset_s
            )));
        }
        let start = (o + k0) as usize;
        let block = h.streams.slice(s![start..start + len, ..]);
        data.slice_mut(s![t, .., ..]).assign(&block.t());
    }
    EpochSet::new(h.fs, ev.labels(), data, h.names.clone(), window_s)
}

/// Offsets `[ceil(−1·fs), −1]` of the strictly pre-onset reference window.
pub fn baseline_offsets(fs: f64) -> (i64, i64) {
    (ceil_tol(BASELINE_START_S * fs), -1)
}

/// Subtracts each trial/stream's mean over the pre-onset reference window.
pub fn baseline_correct(es: &EpochSet) -> Result<EpochSet> {
    let (k0, k1) = baseline_offsets(es.fs);
    let (j0, j1) = match (es.index_of_offset(k0), es.index_of_offset(k1)) {
        (Some(a), Some(b)) if a <= b => (a, b),
        _ => {
            return Err(Error::Invalid(
                "epoch window does not contain the [-1, 0) s reference interval".into(),
            ))
        }
    };
    let mut out = es.clone();
    for mut trace in out.data.rows_mut() {
        let m = trace.slice(s![j0..=j1]).mean().unwrap_or(0.0);
        trace.mapv_inplace(|v| v - m);
    }
    Ok(out)
}
