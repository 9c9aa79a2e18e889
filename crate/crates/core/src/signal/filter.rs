//! Butterworth band-pass design and zero-phase application as cascaded
//! second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Sos {
    /// Roots of `z² + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = 1.0 + z_inv * (self.a[0] + z_inv * self.a[1]);
        num / den
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub sections: Vec<Sos>,
    pub fs: f64,
    pub order: usize,
    pub band_hz: (f64, f64),
}

impl FilterSpec {
    /// Complex frequency response at `f` Hz.
    pub fn response(&self, f: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f / self.fs);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, f: f64) -> f64 {
        self.response(f).norm()
    }

    /// Edge padding length used by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * 2 * self.order
    }

    /// Per-section direct-form-II-transposed states for a unit step held
    /// forever, chained through the cascade.
    fn step_steady_state(&self) -> Vec<[f64; 2]> {
        let mut gain_in = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let dc = (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[0] + s.a[1]);
                let x = gain_in;
                let y = dc * x;
                let s2 = s.b[2] * x - s.a[1] * y;
                let s1 = s.b[1] * x - s.a[0] * y + s2;
                gain_in = y;
                [s1, s2]
            })
            .collect()
    }

    /// Causal application of the cascade starting from `state`.
    fn run(&self, x: &mut [f64], mut state: Vec<[f64; 2]>) {
        for v in x.iter_mut() {
            let mut u = *v;
            for (s, st) in self.sections.iter().zip(state.iter_mut()) {
                let y = s.b[0] * u + st[0];
                st[0] = s.b[1] * u - s.a[0] * y + st[1];
                st[1] = s.b[2] * u - s.a[1] * y;
                u = y;
            }
            *v = u;
        }
    }
}

/// Designs an `order`-th order Butterworth band-pass (`2·order` poles).
///
/// The analog low-pass prototype is shifted to the band with the standard
/// low-pass to band-pass substitution at pre-warped edges, then discretized
/// with the bilinear transform so the −3 dB points land exactly on `f_lo` and
/// `f_hi`. Every section has zeros at `z = 1` and `z = −1`.
pub fn design_butterworth_bandpass(order: usize, f_lo: f64, f_hi: f64, fs: f64) -> Result<FilterSpec> {
    if order == 0 {
        return Err(Error::Invalid("filter order must be at least 1".into()));
    }
    if !(fs > 0.0 && f_lo > 0.0 && f_lo < f_hi && f_hi < fs / 2.0) {
        return Err(Error::Invalid(format!(
            "band edges must satisfy 0 < f_lo < f_hi < fs/2 (got {f_lo}, {f_hi}, fs = {fs})"
        )));
    }
    let k = 2.0 * fs;
    let w_lo = k * (PI * f_lo / fs).tan();
    let w_hi = k * (PI * f_hi / fs).tan();
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let mut analog = Vec::with_capacity(2 * order);
    for i in 0..order {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        analog.push((pb + disc) / 2.0);
        analog.push((pb - disc) / 2.0);
    }

    let mut gain = Complex64::new(bw.powi(order as i32) * k.powi(order as i32), 0.0);
    for p in &analog {
        gain /= k - p;
    }
    let digital: Vec<Complex64> = analog.iter().map(|p| (k + p) / (k - p)).collect();

    let tol = 1e-12;
    let mut complex: Vec<Complex64> = digital.iter().copied().filter(|p| p.im > tol).collect();
    let mut real: Vec<f64> = digital.iter().filter(|p| p.im.abs() <= tol).map(|p| p.re).collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(f64::total_cmp);
    if real.len() % 2 != 0 || complex.len() * 2 + real.len() != 2 * order {
        return Err(Error::Numerical("pole set does not factor into second-order sections".into()));
    }

    let mut sections = Vec::with_capacity(order);
    for p in &complex {
        sections.push(Sos {
            b: [1.0, 0.0, -1.0],
            a: [-2.0 * p.re, p.norm_sqr()],
        });
    }
    for pair in real.chunks(2) {
        sections.push(Sos {
            b: [1.0, 0.0, -1.0],
            a: [-(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }
    let g = gain.re;
    for c in &mut sections[0].b {
        *c *= g;
    }
    if let Some(bad) = sections.iter().position(|s| !s.is_stable()) {
        return Err(Error::Numerical(format!("section {bad} is unstable")));
    }
    Ok(FilterSpec {
        sections,
        fs,
        order,
        band_hz: (f_lo, f_hi),
    })
}

/// Zero-phase filtering.
///
/// The input is extended at both ends by odd reflection of
/// [`FilterSpec::pad_len`] samples and run forward then backward through the
/// cascade, each pass starting from the step steady state scaled by its first
/// sample. The result is the average of the forward-backward and
/// backward-forward orderings, which makes the operator exactly
/// time-reversal equivariant; both orderings have magnitude `|H|²` and zero
/// phase.
pub fn filtfilt(spec: &FilterSpec, x: &[f64]) -> Result<Vec<f64>> {
    let pad = spec.pad_len();
    if x.len() <= pad {
        return Err(Error::Invalid(format!(
            "series of {} samples is too short for edge padding of {pad}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("filter input contains non-finite values".into()));
    }
    let a = forward_backward(spec, x.iter().copied(), pad);
    let b = forward_backward(spec, x.iter().rev().copied(), pad);
    let n = x.len();
    Ok((0..n).map(|i| 0.5 * (a[i] + b[n - 1 - i])).collect())
}

fn forward_backward(spec: &FilterSpec, x: impl Iterator<Item = f64>, pad: usize) -> Vec<f64> {
    let x: Vec<f64> = x.collect();
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(&x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = spec.step_steady_state();
    let scaled = |v: f64| zi.iter().map(|s| [s[0] * v, s[1] * v]).collect::<Vec<_>>();
    let init = scaled(ext[0]);
    spec.run(&mut ext, init);
    ext.reverse();
    let init = scaled(ext[0]);
    spec.run(&mut ext, init);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_band(fs: f64) -> FilterSpec {
        design_butterworth_bandpass(3, 0.01, 0.09, fs).unwrap()
    }

    /// Squared magnitude of the bilinear-mapped analog Butterworth band-pass,
    /// evaluated from the closed form rather than the returned sections.
    fn analog_oracle(f: f64, f_lo: f64, f_hi: f64, fs: f64, order: i32) -> f64 {
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (wl, wh, w) = (warp(f_lo), warp(f_hi), warp(f));
        let ratio = (w * w - wl * wh) / (w * (wh - wl));
        (1.0 / (1.0 + ratio.powi(2 * order))).sqrt()
    }

    #[test]
    fn center_dc_nyquist() {
        let spec = default_band(13.3);
        let center = (0.01f64 * 0.09).sqrt();
        let m = spec.magnitude(center);
        assert!((1.0 / 2f64.sqrt()..=1.0 + 1e-12).contains(&m), "{m}");
        assert!(spec.magnitude(0.0) < 1e-6);
        assert!(spec.magnitude(13.3 / 2.0) < 1e-6);
    }

    #[test]
    fn edges_at_half_power() {
        let spec = default_band(13.3);
        for f in [0.01, 0.09] {
            let m = spec.magnitude(f);
            assert!((m * 2f64.sqrt() - 1.0).abs() < 0.02, "{f}: {m}");
        }
    }

    #[test]
    fn matches_closed_form_magnitude() {
        for (order, fl, fh, fs) in [(3, 0.01, 0.09, 13.3), (2, 1.0, 3.0, 20.0), (4, 0.5, 4.0, 10.0)] {
            let spec = design_butterworth_bandpass(order, fl, fh, fs).unwrap();
            for i in 1..200 {
                let f = fs / 2.0 * i as f64 / 200.0;
                let got = spec.magnitude(f);
                let want = analog_oracle(f, fl, fh, fs, order as i32);
                assert!((got - want).abs() < 1e-7, "order {order} f {f}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn sections_stable() {
        let spec = default_band(13.3);
        assert_eq!(spec.sections.len(), 3);
        for s in &spec.sections {
            for p in s.poles() {
                assert!(p.norm() < 1.0);
            }
        }
    }

    #[test]
    fn invalid_edges() {
        assert!(design_butterworth_bandpass(3, 0.09, 0.01, 13.3).is_err());
        assert!(design_butterworth_bandpass(3, 0.0, 0.09, 13.3).is_err());
        assert!(design_butterworth_bandpass(3, 0.01, 7.0, 13.3).is_err());
    }

    #[test]
    fn constant_is_rejected() {
        let spec = default_band(13.3);
        let c = 2.5;
        let y = filtfilt(&spec, &vec![c; 4000]).unwrap();
        let worst = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-3 * c, "{worst}");
    }

    #[test]
    fn passband_sine_preserved() {
        let fs = 13.3;
        let spec = default_band(fs);
        let n = (2000.0 * fs) as usize;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 0.03 * i as f64 / fs).sin()).collect();
        let y = filtfilt(&spec, &x).unwrap();
        let gain = spec.magnitude(0.03).powi(2);
        let central = &y[n / 4..3 * n / 4];
        let amp = central.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp - 1.0).abs() < 0.1, "amplitude {amp}, |H|^2 = {gain}");
    }

    #[test]
    fn too_short() {
        let spec = default_band(13.3);
        assert!(filtfilt(&spec, &[0.0; 18]).is_err());
        assert!(filtfilt(&spec, &[0.0; 19]).is_ok());
    }

    fn signal(seed: u64, n: usize) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mut r = crate::rng::seeded(seed);
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn time_reversal_symmetric(seed in 0u64..10_000, n in 40usize..600) {
            let spec = default_band(13.3);
            let x = signal(seed, n);
            let y = filtfilt(&spec, &x).unwrap();
            let rev: Vec<f64> = x.iter().rev().copied().collect();
            let yr = filtfilt(&spec, &rev).unwrap();
            let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, b) in y.iter().rev().zip(&yr) {
                proptest::prop_assert!((a - b).abs() <= 1e-10 * scale, "{} vs {}", a, b);
            }
        }

        #[test]
        fn linear(seed in 0u64..10_000, n in 40usize..600, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let spec = default_band(13.3);
            let (x, z) = (signal(seed, n), signal(seed + 1, n));
            let mix: Vec<f64> = x.iter().zip(&z).map(|(p, q)| a * p + b * q).collect();
            let (fx, fz, fm) = (filtfilt(&spec, &x).unwrap(), filtfilt(&spec, &z).unwrap(), filtfilt(&spec, &mix).unwrap());
            let scale = fm.iter().chain(&fx).chain(&fz).fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                proptest::prop_assert!((fm[i] - (a * fx[i] + b * fz[i])).abs() <= 1e-9 * scale);
            }
        }
    }
}
