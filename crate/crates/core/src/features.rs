//! Windowed statistical and spectral features and the temporal-mean feature
//! vectors.
//!
//! Column names encode their provenance and parse back with
//! [`parse_feature_name`]:
//!
//! * `chNN_HbO_wWW_{mean,peak,skew,kurt}` – window statistics
//! * `chNN_HbO_wWW_{bp1,bp2}` – band power in the first/second band
//! * `chNN_HbO_{w1,w2}` – temporal means over 5–10 s and 10–15 s

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2};
use rustfft::{num_complex::Complex64, FftPlanner};

use crate::class::Class;
use crate::error::{Error, Result};
use crate::io::EpochSet;
use crate::numfmt::{ceil_tol, fmt_f64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub length_s: f64,
    pub overlap_frac: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            length_s: 2.0,
            overlap_frac: 0.5,
        }
    }
}

impl WindowSpec {
    /// `(L, hop)` in samples.
    pub fn lengths(&self, fs: f64) -> Result<(usize, usize)> {
        if !(self.length_s > 0.0) || !(0.0..1.0).contains(&self.overlap_frac) {
            return Err(Error::Invalid(format!("invalid window spec {self:?}")));
        }
        let len = (self.length_s * fs + 1e-9).floor() as usize;
        if len < 2 {
            return Err(Error::Invalid(format!("window of {} s at {fs} Hz is shorter than 2 samples", self.length_s)));
        }
        let hop = len - (self.overlap_frac * len as f64 + 1e-9).floor() as usize;
        Ok((len, hop))
    }
}

pub const DEFAULT_BANDS_HZ: [(f64, f64); 2] = [(1.0, 3.0), (4.0, 6.0)];
pub const TEMPORAL_WINDOWS_S: [(f64, f64); 2] = [(5.0, 10.0), (10.0, 15.0)];

/// Start indices of every full window in a trace of `n` samples.
pub fn window_starts(n: usize, w: &WindowSpec, fs: f64) -> Result<(Vec<usize>, usize)> {
    let (len, hop) = w.lengths(fs)?;
    if n < len {
        return Err(Error::Invalid(format!("trace of {n} samples is shorter than one {len}-sample window")));
    }
    let count = (n - len) / hop + 1;
    Ok(((0..count).map(|i| i * hop).collect(), len))
}

/// Sliding windows over one trace.
pub fn sliding_windows<'a>(x: &'a [f64], w: &WindowSpec, fs: f64) -> Result<Vec<&'a [f64]>> {
    let (starts, len) = window_starts(x.len(), w, fs)?;
    Ok(starts.into_iter().map(|s| &x[s..s + len]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub mean: f64,
    pub peak: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// Mean, maximum absolute value, skewness `m3/m2^1.5` and excess kurtosis
/// `m4/m2² − 3` from biased central moments. Both shape statistics are 0 when
/// `m2 < 1e-15`.
pub fn stat_features(x: &[f64]) -> WindowStats {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 < 1e-15 {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    WindowStats {
        mean,
        peak,
        skewness,
        kurtosis,
    }
}

/// Periodic Hann window of length `n`.
fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Hann-windowed periodogram `P[k] = |X[k]|² / (U·L)` with `U = Σw²/L`, over
/// all `L` DFT bins.
pub fn periodogram(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let w = hann(n);
    let u_l: f64 = w.iter().map(|v| v * v).sum();
    let mut buf: Vec<Complex64> = x.iter().zip(&w).map(|(v, wi)| Complex64::new(v * wi, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().map(|c| c.norm_sqr() / u_l).collect()
}

/// Sum of periodogram bins with `f1 ≤ k·fs/L ≤ f2` for `0 ≤ k ≤ L/2`.
pub fn band_power(x: &[f64], band: (f64, f64), fs: f64) -> Result<f64> {
    if x.len() < 4 {
        return Err(Error::Invalid("band power needs at least 4 samples".into()));
    }
    if !(band.0 >= 0.0 && band.0 <= band.1 && band.1 <= fs / 2.0) {
        return Err(Error::Invalid(format!("band {band:?} outside [0, {}] Hz", fs / 2.0)));
    }
    let n = x.len();
    let p = periodogram(x);
    let df = fs / n as f64;
    Ok((0..=n / 2)
        .filter(|&k| {
            let f = k as f64 * df;
            f >= band.0 - 1e-12 && f <= band.1 + 1e-12
        })
        .map(|k| p[k])
        .sum())
}

/// Trials × named features, one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub values: Array2<f64>,
    pub labels: Vec<Class>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, values: Array2<f64>, labels: Vec<Class>) -> Result<Self> {
        if names.len() != values.ncols() || labels.len() != values.nrows() {
            return Err(Error::Shape(format!(
                "{} names / {} labels for a {}x{} matrix",
                names.len(),
                labels.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Invalid(format!("duplicate feature name {dup}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("feature matrix contains non-finite values".into()));
        }
        Ok(FeatureMatrix { names, values, labels })
    }

    /// Horizontal concatenation of matrices over the same trials.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        let first = parts.first().ok_or_else(|| Error::Invalid("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.labels != first.labels) {
            return Err(Error::Shape("feature sets describe different trials".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.values.view()).collect();
        let values = ndarray::concatenate(ndarray::Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let names = parts.iter().flat_map(|p| p.names.iter().cloned()).collect();
        FeatureMatrix::new(names, values, first.labels.clone())
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            values: self.values.select(ndarray::Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("trial,label");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, row) in self.values.rows().into_iter().enumerate() {
            let _ = write!(out, "{i},{}", self.labels[i]);
            for v in row {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("").trim_end_matches('\r');
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "trial" || cols[1] != "label" {
            return Err(Error::parse(0, None, "feature header must start with `trial,label`"));
        }
        let names: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = i + 1;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != cols.len() {
                return Err(Error::parse(row, None, format!("expected {} columns", cols.len())));
            }
            labels.push(cells[1].parse::<Class>().map_err(|e| Error::parse(row, Some(2), e.to_string()))?);
            for (j, c) in cells[2..].iter().enumerate() {
                let v: f64 = c
                    .parse()
                    .map_err(|_| Error::parse(row, Some(j + 3), format!("non-numeric cell {c:?}")))?;
                values.push(v);
            }
        }
        let values = Array2::from_shape_vec((labels.len(), names.len()), values).map_err(|e| Error::Shape(e.to_string()))?;
        FeatureMatrix::new(names, values, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_text(path.as_ref(), &self.to_csv_string())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    Stats,
    BandPower,
    TemporalMean,
    Union,
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stats" => Ok(FeatureSet::Stats),
            "bandpower" => Ok(FeatureSet::BandPower),
            "temporal_mean" => Ok(FeatureSet::TemporalMean),
            "union" => Ok(FeatureSet::Union),
            other => Err(Error::Config(format!(
                "unknown feature set {other:?}; expected stats, bandpower, temporal_mean or union"
            ))),
        }
    }
}

impl FeatureSet {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Stats => "stats",
            FeatureSet::BandPower => "bandpower",
            FeatureSet::TemporalMean => "temporal_mean",
            FeatureSet::Union => "union",
        }
    }
}

pub const STAT_KINDS: [&str; 4] = ["mean", "peak", "skew", "kurt"];
pub const BAND_KINDS: [&str; 2] = ["bp1", "bp2"];

/// Decoded feature column name.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureName {
    Window { stream: String, window: usize, kind: String },
    TemporalMean { stream: String, window: usize },
}

pub fn parse_feature_name(name: &str) -> Option<FeatureName> {
    let mut parts = name.rsplitn(3, '_');
    let last = parts.next()?;
    let mid = parts.next()?;
    let rest = parts.next();
    match (last, rest) {
        ("w1" | "w2", _) => {
            let stream = match rest {
                Some(r) => format!("{r}_{mid}"),
                None => mid.to_string(),
            };
            Some(FeatureName::TemporalMean {
                stream,
                window: if last == "w1" { 1 } else { 2 },
            })
        }
        (kind, Some(stream)) if STAT_KINDS.contains(&kind) || BAND_KINDS.contains(&kind) => {
            let w = mid.strip_prefix('w')?.parse().ok()?;
            Some(FeatureName::Window {
                stream: stream.to_string(),
                window: w,
                kind: kind.to_string(),
            })
        }
        _ => None,
    }
}

fn trace(es: &EpochSet, t: usize, s: usize) -> Vec<f64> {
    es.data.slice(s![t, s, ..]).to_vec()
}

/// Window statistics for every stream: stream-major, window, then statistic.
pub fn stats_matrix(es: &EpochSet, w: &WindowSpec) -> Result<FeatureMatrix> {
    let (starts, len) = window_starts(es.n_samples(), w, es.fs)?;
    let mut names = Vec::with_capacity(es.n_streams() * starts.len() * 4);
    for stream in &es.stream_names {
        for wi in 0..starts.len() {
            for kind in STAT_KINDS {
                names.push(format!("{stream}_w{wi:02}_{kind}"));
            }
        }
    }
    let mut values = Array2::<f64>::zeros((es.n_trials(), names.len()));
    for t in 0..es.n_trials() {
        let mut col = 0;
        for s in 0..es.n_streams() {
            let x = trace(es, t, s);
            for &st in &starts {
                let f = stat_features(&x[st..st + len]);
                for v in [f.mean, f.peak, f.skewness, f.kurtosis] {
                    values[[t, col]] = v;
                    col += 1;
                }
            }
        }
    }
    FeatureMatrix::new(names, values, es.labels.clone())
}

/// Band powers for every stream: stream-major, window, then band.
pub fn bandpower_matrix(es: &EpochSet, w: &WindowSpec, bands: &[(f64, f64); 2]) -> Result<FeatureMatrix> {
    let (starts, len) = window_starts(es.n_samples(), w, es.fs)?;
    let mut names = Vec::with_capacity(es.n_streams() * starts.len() * 2);
    for stream in &es.stream_names {
        for wi in 0..starts.len() {
            for kind in BAND_KINDS {
                names.push(format!("{stream}_w{wi:02}_{kind}"));
            }
        }
    }
    let mut values = Array2::<f64>::zeros((es.n_trials(), names.len()));
    for t in 0..es.n_trials() {
        let mut col = 0;
        for s in 0..es.n_streams() {
            let x = trace(es, t, s);
            for &st in &starts {
                for band in bands {
                    values[[t, col]] = band_power(&x[st..st + len], *band, es.fs)?;
                    col += 1;
                }
            }
        }
    }
    FeatureMatrix::new(names, values, es.labels.clone())
}

/// Epoch-sample index range `[ceil(a·fs), ceil(b·fs) − 1]` of a temporal window.
pub fn temporal_window_indices(es: &EpochSet, window_s: (f64, f64)) -> Result<(usize, usize)> {
    let k0 = ceil_tol(window_s.0 * es.fs);
    let k1 = ceil_tol(window_s.1 * es.fs) - 1;
    match (es.index_of_offset(k0), es.index_of_offset(k1)) {
        (Some(a), Some(b)) if a <= b => Ok((a, b)),
        _ => Err(Error::Invalid(format!("temporal window {window_s:?} s lies outside the epoch"))),
    }
}

/// Mean of each stream over 5–10 s and 10–15 s after onset.
pub fn temporal_mean_features(es: &EpochSet) -> Result<FeatureMatrix> {
    let ranges = TEMPORAL_WINDOWS_S
        .iter()
        .map(|w| temporal_window_indices(es, *w))
        .collect::<Result<Vec<_>>>()?;
    let mut names = Vec::with_capacity(es.n_streams() * 2);
    for stream in &es.stream_names {
        names.push(format!("{stream}_w1"));
        names.push(format!("{stream}_w2"));
    }
    let mut values = Array2::<f64>::zeros((es.n_trials(), names.len()));
    for t in 0..es.n_trials() {
        for s in 0..es.n_streams() {
            for (wi, &(a, b)) in ranges.iter().enumerate() {
                let m = es.data.slice(s![t, s, a..=b]).mean().unwrap_or(0.0);
                values[[t, 2 * s + wi]] = m;
            }
        }
    }
    FeatureMatrix::new(names, values, es.labels.clone())
}

pub fn assemble_feature_matrix(es: &EpochSet, which: FeatureSet) -> Result<FeatureMatrix> {
    let w = WindowSpec::default();
    match which {
        FeatureSet::Stats => stats_matrix(es, &w),
        FeatureSet::BandPower => bandpower_matrix(es, &w, &DEFAULT_BANDS_HZ),
        FeatureSet::TemporalMean => temporal_mean_features(es),
        FeatureSet::Union => FeatureMatrix::concat(&[
            stats_matrix(es, &w)?,
            bandpower_matrix(es, &w, &DEFAULT_BANDS_HZ)?,
            temporal_mean_features(es)?,
        ]),
    }
}

/// Column-wise z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Standardizer {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
        let scale = x
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, m)| {
                let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                if var > 1e-30 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::Shape(format!("{} features, standardizer fitted on {}", x.ncols(), self.mean.len())));
        }
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.scale[j]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    #[test]
    fn window_arithmetic_at_13_3_hz() {
        let (starts, len) = window_starts(399, &WindowSpec::default(), 13.3).unwrap();
        assert_eq!((len, starts[1] - starts[0], starts.len()), (26, 13, 29));
    }

    #[test]
    fn window_edge_cases() {
        let w = WindowSpec::default();
        let (len, _) = w.lengths(13.3).unwrap();
        assert_eq!(window_starts(len, &w, 13.3).unwrap().0.len(), 1);
        let no_overlap = WindowSpec {
            length_s: 2.0,
            overlap_frac: 0.0,
        };
        assert_eq!(window_starts(4 * len, &no_overlap, 13.3).unwrap().0.len(), 4);
        assert!(window_starts(len - 1, &w, 13.3).is_err());
        let x: Vec<f64> = (0..40).map(f64::from).collect();
        let wins = sliding_windows(&x, &w, 13.3).unwrap();
        assert_eq!(wins[1][0], 13.0);
    }

    #[test]
    fn stats_constant() {
        let f = stat_features(&[2.0; 8]);
        assert_eq!((f.mean, f.peak, f.skewness, f.kurtosis), (2.0, 2.0, 0.0, 0.0));
    }

    #[test]
    fn stats_two_points() {
        let f = stat_features(&[-1.0, 1.0]);
        assert_eq!((f.mean, f.peak, f.skewness), (0.0, 1.0, 0.0));
        assert!((f.kurtosis + 2.0).abs() < 1e-15);
    }

    #[test]
    fn stats_skewed() {
        // central moments of [0,0,0,4]: m2 = 3, m3 = 6, m4 = 21
        let f = stat_features(&[0.0, 0.0, 0.0, 4.0]);
        assert_eq!((f.mean, f.peak), (1.0, 4.0));
        assert!((f.skewness - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((f.kurtosis + 2.0 / 3.0).abs() < 1e-12);
    }

    /// Direct O(L²) DFT, independent of the FFT path.
    fn dft_band_power(x: &[f64], band: (f64, f64), fs: f64) -> f64 {
        let n = x.len();
        let w: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
        let u: f64 = w.iter().map(|v| v * v).sum();
        (0..=n / 2)
            .filter(|&k| {
                let f = k as f64 * fs / n as f64;
                f >= band.0 && f <= band.1
            })
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, (xi, wi)) in x.iter().zip(&w).enumerate() {
                    let ang = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += xi * wi * ang.cos();
                    im += xi * wi * ang.sin();
                }
                (re * re + im * im) / u
            })
            .sum()
    }

    #[test]
    fn band_power_zero_and_sine() {
        assert_eq!(band_power(&[0.0; 26], (1.0, 3.0), 13.3).unwrap(), 0.0);
        let fs = 13.3;
        let x: Vec<f64> = (0..26).map(|i| (2.0 * PI * 2.0 * i as f64 / fs).sin()).collect();
        let low = band_power(&x, (1.0, 3.0), fs).unwrap();
        let high = band_power(&x, (4.0, 6.0), fs).unwrap();
        assert!(low > 10.0 * high, "{low} vs {high}");
        assert!((low - dft_band_power(&x, (1.0, 3.0), fs)).abs() < 1e-10 * low.max(1.0));
        assert!((high - dft_band_power(&x, (4.0, 6.0), fs)).abs() < 1e-10);
    }

    #[test]
    fn band_power_bounded_by_total() {
        let mut r = crate::rng::seeded(3);
        let x: Vec<f64> = (0..26).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r)).collect();
        let total: f64 = periodogram(&x).iter().sum();
        let parts = band_power(&x, (1.0, 3.0), 13.3).unwrap() + band_power(&x, (4.0, 6.0), 13.3).unwrap();
        assert!(parts <= total);
    }

    #[test]
    fn band_power_rejects_nyquist() {
        assert!(band_power(&[0.0; 26], (4.0, 7.0), 13.3).is_err());
    }

    fn epochs(n_trials: usize, n_channels: usize, fs: f64, f: impl Fn(f64) -> f64) -> EpochSet {
        let k0 = ceil_tol(-5.0 * fs);
        let k1 = crate::numfmt::floor_tol(25.0 * fs);
        let len = (k1 - k0 + 1) as usize;
        let data = Array3::from_shape_fn((n_trials, 2 * n_channels, len), |(_, _, j)| f((k0 + j as i64) as f64 / fs));
        let names = (1..=n_channels)
            .flat_map(|c| [format!("ch{c:02}_HbO"), format!("ch{c:02}_HbR")])
            .collect();
        let labels = (0..n_trials).map(|i| Class::ALL[i % 3]).collect();
        EpochSet::new(fs, labels, data, names, (-5.0, 25.0)).unwrap()
    }

    #[test]
    fn temporal_means() {
        let es = epochs(2, 16, 13.3, |_| 1.0);
        let fm = temporal_mean_features(&es).unwrap();
        assert_eq!(fm.names.len(), 64);
        assert!(fm.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let ramp = epochs(1, 1, 13.3, |t| t);
        let fm = temporal_mean_features(&ramp).unwrap();
        let dt = 1.0 / 13.3;
        assert!((fm.values[[0, 0]] - 7.5).abs() < dt, "{}", fm.values[[0, 0]]);
        assert!((fm.values[[0, 1]] - 12.5).abs() < dt, "{}", fm.values[[0, 1]]);
        assert_eq!(fm.names[..2], ["ch01_HbO_w1", "ch01_HbO_w2"]);
    }

    #[test]
    fn assembled_column_counts() {
        let es = epochs(3, 16, 13.3, |t| (t * 0.7).sin());
        let stats = assemble_feature_matrix(&es, FeatureSet::Stats).unwrap();
        assert_eq!(stats.names.len(), 3712);
        let bp = assemble_feature_matrix(&es, FeatureSet::BandPower).unwrap();
        assert_eq!(bp.names.len(), 1856);
        let tm = assemble_feature_matrix(&es, FeatureSet::TemporalMean).unwrap();
        let all = assemble_feature_matrix(&es, FeatureSet::Union).unwrap();
        assert_eq!(all.names.len(), 3712 + 1856 + tm.names.len());
        assert_eq!(stats.names[..5], ["ch01_HbO_w00_mean", "ch01_HbO_w00_peak", "ch01_HbO_w00_skew", "ch01_HbO_w00_kurt", "ch01_HbO_w01_mean"]);
        assert_eq!(all.labels, es.labels);
    }

    #[test]
    fn names_parse_back() {
        let es = epochs(1, 2, 13.3, |t| t.cos());
        let all = assemble_feature_matrix(&es, FeatureSet::Union).unwrap();
        let mut decoded = std::collections::HashSet::new();
        for n in &all.names {
            let parsed = parse_feature_name(n).unwrap_or_else(|| panic!("{n}"));
            let rebuilt = match &parsed {
                FeatureName::Window { stream, window, kind } => format!("{stream}_w{window:02}_{kind}"),
                FeatureName::TemporalMean { stream, window } => format!("{stream}_w{window}"),
            };
            assert_eq!(&rebuilt, n);
            assert!(decoded.insert(parsed));
        }
    }

    #[test]
    fn feature_csv_round_trip() {
        let es = epochs(4, 2, 13.3, |t| t.sin());
        let fm = temporal_mean_features(&es).unwrap();
        assert_eq!(FeatureMatrix::from_csv_str(&fm.to_csv_string()).unwrap(), fm);
    }

    proptest! {
        #[test]
        fn stats_translation_covariant(x in proptest::collection::vec(-10.0f64..10.0, 4..40), c in -50.0f64..50.0) {
            let a = stat_features(&x);
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let b = stat_features(&shifted);
            prop_assert!((b.mean - a.mean - c).abs() < 1e-9);
            let m2: f64 = x.iter().map(|v| (v - a.mean).powi(2)).sum::<f64>() / x.len() as f64;
            if m2 > 1e-6 {
                prop_assert!((b.skewness - a.skewness).abs() < 1e-6);
                prop_assert!((b.kurtosis - a.kurtosis).abs() < 1e-6);
            }
        }

        #[test]
        fn band_power_scale_quadratic(x in proptest::collection::vec(-5.0f64..5.0, 26), alpha in -4.0f64..4.0) {
            let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            for band in DEFAULT_BANDS_HZ {
                let p = band_power(&x, band, 13.3).unwrap();
                let q = band_power(&scaled, band, 13.3).unwrap();
                prop_assert!((q - alpha * alpha * p).abs() <= 1e-9 * (1.0 + q.abs()));
            }
        }

        #[test]
        fn windows_form_progression(n in 26usize..600, overlap in 0.0f64..0.95) {
            let w = WindowSpec { length_s: 2.0, overlap_frac: overlap };
            let (starts, len) = window_starts(n, &w, 13.3).unwrap();
            let hop = len - (overlap * len as f64 + 1e-9).floor() as usize;
            prop_assert_eq!(starts.len(), (n - len) / hop + 1);
            for (i, s) in starts.iter().enumerate() {
                prop_assert_eq!(*s, i * hop);
            }
            let max_cover = len.div_ceil(hop);
            for k in 0..n {
                let cover = starts.iter().filter(|&&s| s <= k && k < s + len).count();
                prop_assert!(cover <= max_cover);
            }
        }
    }
}
