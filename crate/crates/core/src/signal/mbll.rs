//! Modified Beer–Lambert conversion between optical density and chromophore
//! concentration changes.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::io::Recording;
use crate::numfmt::fmt_f64;

use super::HemoSeries;

/// Extinction coefficients and pathlength settings for one wavelength pair.
///
/// `extinction[w][c]` is the decadic molar extinction in 1/(mM·cm) of
/// chromophore `c` (0 = HbO, 1 = HbR) at wavelength `w` (0 = low, 1 = high).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbllParams {
    pub extinction: [[f64; 2]; 2],
    pub dpf_lo: f64,
    pub dpf_hi: f64,
    pub distance_cm: f64,
}

impl Default for MbllParams {
    /// Tabulated values for 760/850 nm, DPF 6 at both wavelengths, 3 cm.
    fn default() -> Self {
        MbllParams {
            extinction: [[0.586, 1.548_52], [1.058, 0.691_32]],
            dpf_lo: 6.0,
            dpf_hi: 6.0,
            distance_cm: 3.0,
        }
    }
}

impl MbllParams {
    pub fn validate(&self) -> Result<()> {
        let det = self.det();
        if !(det.abs() > 1e-12) {
            return Err(Error::Invalid(format!("extinction matrix is singular (det = {det:e})")));
        }
        if !(self.dpf_lo > 0.0 && self.dpf_hi > 0.0) {
            return Err(Error::Invalid("differential pathlength factors must be positive".into()));
        }
        if !(self.distance_cm > 0.0) {
            return Err(Error::Invalid("source-detector distance must be positive".into()));
        }
        if self.extinction.iter().flatten().any(|e| !e.is_finite()) {
            return Err(Error::Invalid("extinction coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn with_distance_cm(self, distance_cm: f64) -> Self {
        MbllParams { distance_cm, ..self }
    }

    fn det(&self) -> f64 {
        let e = &self.extinction;
        e[0][0] * e[1][1] - e[0][1] * e[1][0]
    }

    /// Optical-density changes at (low, high) wavelength for a concentration
    /// change `(hbo, hbr)` in mM.
    pub fn forward(&self, hbo: f64, hbr: f64) -> (f64, f64) {
        let e = &self.extinction;
        let l_lo = self.distance_cm * self.dpf_lo;
        let l_hi = self.distance_cm * self.dpf_hi;
        (
            (e[0][0] * hbo + e[0][1] * hbr) * l_lo,
            (e[1][0] * hbo + e[1][1] * hbr) * l_hi,
        )
    }

    /// Solves the 2×2 system for `(ΔHbO, ΔHbR)` in mM.
    pub fn invert(&self, od_lo: f64, od_hi: f64) -> (f64, f64) {
        let e = &self.extinction;
        let y0 = od_lo / (self.distance_cm * self.dpf_lo);
        let y1 = od_hi / (self.distance_cm * self.dpf_hi);
        let det = self.det();
        ((e[1][1] * y0 - e[0][1] * y1) / det, (e[0][0] * y1 - e[1][0] * y0) / det)
    }

    /// Reads the keyed constants file. Recognized keys are `epsilon_hbo_lo`,
    /// `epsilon_hbo_hi`, `epsilon_hbr_lo`, `epsilon_hbr_hi`, `dpf_lo`, `dpf_hi`
    /// and optionally `distance_cm`; missing keys keep their defaults.
    pub fn from_keyed_str(text: &str) -> Result<Self> {
        let map = parse_keyed(text)?;
        let mut p = MbllParams::default();
        for (key, value) in &map {
            let v: f64 = value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: not a number: {value:?}")))?;
            match key.as_str() {
                "epsilon_hbo_lo" => p.extinction[0][0] = v,
                "epsilon_hbr_lo" => p.extinction[0][1] = v,
                "epsilon_hbo_hi" => p.extinction[1][0] = v,
                "epsilon_hbr_hi" => p.extinction[1][1] = v,
                "dpf_lo" => p.dpf_lo = v,
                "dpf_hi" => p.dpf_hi = v,
                "distance_cm" => p.distance_cm = v,
                other => return Err(Error::Config(format!("unknown MBLL key {other:?}"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_keyed_string(&self) -> String {
        let e = &self.extinction;
        format!(
            "# decadic extinction in 1/(mM*cm); low/high wavelength\n\
             epsilon_hbo_lo = {}\nepsilon_hbr_lo = {}\nepsilon_hbo_hi = {}\nepsilon_hbr_hi = {}\n\
             dpf_lo = {}\ndpf_hi = {}\ndistance_cm = {}\n",
            fmt_f64(e[0][0]),
            fmt_f64(e[0][1]),
            fmt_f64(e[1][0]),
            fmt_f64(e[1][1]),
            fmt_f64(self.dpf_lo),
            fmt_f64(self.dpf_hi),
            fmt_f64(self.distance_cm)
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_keyed_str(&text)
    }
}

/// Parses `key = value` lines; `#` and `;` start comments and `[section]`
/// headers are ignored.
pub fn parse_keyed(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Converts every channel's wavelength pair to `(ΔHbO, ΔHbR)`.
///
/// The pathlength uses each channel's own source–detector distance from the
/// recording metadata; `p.distance_cm` is not consulted.
pub fn mbll_convert(rec: &Recording, p: &MbllParams) -> Result<HemoSeries> {
    p.validate()?;
    let samples = rec.samples();
    let n = rec.n_samples();
    let mut out = Array2::<f64>::zeros((n, samples.ncols()));
    let mut names = Vec::with_capacity(samples.ncols());
    for (c, ch) in rec.channels().iter().enumerate() {
        let pc = p.with_distance_cm(ch.source_detector_distance_mm / 10.0);
        for i in 0..n {
            let lo = samples[[i, 2 * c]];
            let hi = samples[[i, 2 * c + 1]];
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::Invalid(format!("non-finite optical density at sample {i}, channel {}", ch.id)));
            }
            let (hbo, hbr) = pc.invert(lo, hi);
            out[[i, 2 * c]] = hbo;
            out[[i, 2 * c + 1]] = hbr;
        }
        names.push(format!("ch{:02}_HbO", ch.id));
        names.push(format!("ch{:02}_HbR", ch.id));
    }
    HemoSeries::new(rec.fs(), out, names)
}
