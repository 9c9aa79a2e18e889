//! Deterministic synthetic fNIRS recordings.
//!
//! Trials follow an introduction / task / rest layout with a randomized task
//! order. Each task block adds a hemodynamic response (a task-length boxcar
//! convolved with a double-gamma kernel peaking near 6 s) to the HbO trace and
//! a scaled, inverted copy to HbR. Physiological oscillations, slow drift and
//! white noise are superimposed, and the concentrations are mapped to optical
//! density with the forward Beer–Lambert model so the full processing chain is
//! exercised from the first step.
//!
//! Randomness comes exclusively from [`crate::rng::seeded`] with the
//! configured seed; the output is a pure function of [`SynthConfig`].

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::class::Class;
use crate::error::{Error, Result};
use crate::rng;
use crate::signal::MbllParams;

use super::{ChannelMeta, Event, EventList, Recording};

/// Response injected for one class. `group_amplitudes[g]` is the peak ΔHbO
/// (mM) for channel group `g`; channels are split into equal contiguous groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassResponse {
    pub group_amplitudes: Vec<f64>,
    /// Latency of the response relative to task onset.
    pub delay_s: f64,
}

/// Noise amplitudes in mM of ΔHbO (HbR receives half of the physiological
/// components).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevels {
    pub drift: f64,
    pub cardiac: f64,
    pub respiratory: f64,
    pub mayer: f64,
    /// Spontaneous oscillations inside the 0.01–0.08 Hz band, independent
    /// per channel.
    pub lfo: f64,
    pub white: f64,
}

impl NoiseLevels {
    pub const ZERO: NoiseLevels = NoiseLevels {
        drift: 0.0,
        cardiac: 0.0,
        respiratory: 0.0,
        mayer: 0.0,
        lfo: 0.0,
        white: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_trials_per_class: usize,
    pub fs: f64,
    pub n_channels: usize,
    /// Indexed by [`Class::index`].
    pub responses: [ClassResponse; 3],
    /// Relative standard deviation of the per-trial response amplitude.
    pub amplitude_jitter: f64,
    /// Each trial's response starts an extra `U(0, latency_jitter_s)` seconds
    /// after the class delay.
    pub latency_jitter_s: f64,
    /// ΔHbR = −hbr_ratio · ΔHbO for the injected response.
    pub hbr_ratio: f64,
    pub noise: NoiseLevels,
    pub lead_s: f64,
    pub intro_s: f64,
    pub task_s: f64,
    pub rest_s: (f64, f64),
    pub tail_s: f64,
}

impl Default for SynthConfig {
    /// 30 trials per class, 13.3 Hz, 16 channels. MA drives every channel
    /// strongly, MI weakly and only in the lateral groups, IS not at all.
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_trials_per_class: 30,
            fs: 13.3,
            n_channels: 16,
            responses: [
                ClassResponse {
                    group_amplitudes: vec![1.8e-3, 1.8e-3, 1.5e-3, 1.5e-3],
                    delay_s: 0.0,
                },
                ClassResponse {
                    group_amplitudes: vec![0.0, 0.1e-3, 0.4e-3, 0.4e-3],
                    delay_s: 0.0,
                },
                ClassResponse {
                    group_amplitudes: vec![0.0; 4],
                    delay_s: 0.0,
                },
            ],
            amplitude_jitter: 0.3,
            latency_jitter_s: 0.0,
            hbr_ratio: 0.3,
            noise: NoiseLevels {
                drift: 2.0e-3,
                cardiac: 0.5e-3,
                respiratory: 0.3e-3,
                mayer: 0.3e-3,
                lfo: 1.0e-3,
                white: 0.2e-3,
            },
            lead_s: 10.0,
            intro_s: 2.0,
            task_s: 10.0,
            rest_s: (18.0, 20.0),
            tail_s: 30.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic config: {m}")));
        if self.n_trials_per_class == 0 || self.n_channels == 0 {
            return bad("trial and channel counts must be positive");
        }
        if !(self.fs > 0.0) {
            return bad("sampling rate must be positive");
        }
        let n = &self.noise;
        if [n.drift, n.cardiac, n.respiratory, n.mayer, n.lfo, n.white, self.amplitude_jitter, self.latency_jitter_s]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return bad("noise levels must be non-negative");
        }
        for r in &self.responses {
            if r.group_amplitudes.is_empty() || r.group_amplitudes.len() > self.n_channels {
                return bad("each class needs between 1 and n_channels amplitude groups");
            }
            if !(r.delay_s >= 0.0) {
                return bad("response delays must be non-negative");
            }
        }
        if !(self.task_s > 0.0 && self.intro_s >= 0.0 && self.rest_s.0 >= 0.0 && self.rest_s.0 <= self.rest_s.1) {
            return bad("block durations must be non-negative with rest min <= max");
        }
        if !(self.lead_s >= 0.0 && self.tail_s >= 0.0) {
            return bad("lead and tail padding must be non-negative");
        }
        Ok(())
    }
}

const LFO_TERMS: usize = 8;

/// Double-gamma kernel with its main lobe peaking at 6 s and a shallow late
/// undershoot.
fn hrf_kernel(fs: f64, duration_s: f64) -> Vec<f64> {
    fn gamma_pdf(t: f64, shape: f64, fact: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            t.powf(shape - 1.0) * (-t).exp() / fact
        }
    }
    // Γ(7) = 720, Γ(16) = 15!
    let fact7 = 720.0;
    let fact16 = (1..=15).map(f64::from).product::<f64>();
    let n = (duration_s * fs).ceil() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            gamma_pdf(t, 7.0, fact7) - gamma_pdf(t, 16.0, fact16) / 6.0
        })
        .collect()
}

/// Boxcar of `task_s` seconds convolved with the kernel, peak-normalized to 1.
fn response_template(fs: f64, task_s: f64) -> Vec<f64> {
    let kernel = hrf_kernel(fs, 32.0);
    let box_len = (task_s * fs).round() as usize;
    let len = box_len + kernel.len();
    let mut out = vec![0.0; len];
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(kernel.len() - 1);
        let hi = i.min(box_len.saturating_sub(1));
        if lo <= hi {
            *o = (lo..=hi).map(|j| kernel[i - j]).sum::<f64>();
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(*v));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    out
}

/// Generates a recording and its event list.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Recording, EventList)> {
    cfg.validate()?;
    let mut rng = rng::seeded(cfg.seed);
    let normal = |rng: &mut rng::Rng| -> f64 { StandardNormal.sample(rng) };

    let mut labels: Vec<Class> = Class::ALL
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, cfg.n_trials_per_class))
        .collect();
    labels.shuffle(&mut rng);

    let mut events = Vec::with_capacity(labels.len());
    let mut t = cfg.lead_s;
    for &label in &labels {
        let onset_s = t + cfg.intro_s;
        events.push(Event { onset_s, label });
        let rest = cfg.rest_s.0 + (cfg.rest_s.1 - cfg.rest_s.0) * rng.random::<f64>();
        t = onset_s + cfg.task_s + rest;
    }
    let total_s = t + cfg.tail_s;
    let n = (total_s * cfg.fs).ceil() as usize;
    let fs = cfg.fs;
    let nch = cfg.n_channels;

    let template = response_template(fs, cfg.task_s);
    let mut hbo = Array2::<f64>::zeros((n, nch));
    let mut hbr = Array2::<f64>::zeros((n, nch));

    for ev in &events {
        let resp = &cfg.responses[ev.label.index()];
        let groups = resp.group_amplitudes.len();
        let lag = cfg.latency_jitter_s * rng.random::<f64>();
        let start = ((ev.onset_s + resp.delay_s + lag) * fs).round() as usize;
        for c in 0..nch {
            let base = resp.group_amplitudes[c * groups / nch];
            let jitter = normal(&mut rng);
            let amp = (base * (1.0 + cfg.amplitude_jitter * jitter)).max(0.0);
            if amp == 0.0 {
                continue;
            }
            for (k, &v) in template.iter().enumerate() {
                let i = start + k;
                if i >= n {
                    break;
                }
                hbo[[i, c]] += amp * v;
                hbr[[i, c]] -= cfg.hbr_ratio * amp * v;
            }
        }
    }

    // Systemic oscillations share their phase across channels; each channel
    // scales them by its own coupling factor.
    let nz = &cfg.noise;
    let cardiac_f = 1.0 + 0.1 * (rng.random::<f64>() - 0.5);
    let resp_f = 0.3 + 0.04 * (rng.random::<f64>() - 0.5);
    let phases: [f64; 2] = [rng.random::<f64>() * 2.0 * PI, rng.random::<f64>() * 2.0 * PI];
    for c in 0..nch {
        let coupling = 0.8 + 0.4 * rng.random::<f64>();
        let mayer_f = 0.07 + 0.04 * rng.random::<f64>();
        let mayer_phase = rng.random::<f64>() * 2.0 * PI;
        let drift_f: [f64; 3] = [0.0008, 0.002, 0.005].map(|f| f * (0.7 + 0.6 * rng.random::<f64>()));
        let drift_phase: [f64; 3] = [0.0; 3].map(|_| rng.random::<f64>() * 2.0 * PI);
        let slope = normal(&mut rng) / total_s.max(1.0);
        let lfo: Vec<(f64, f64)> = (0..LFO_TERMS)
            .map(|_| (0.01 + 0.07 * rng.random::<f64>(), rng.random::<f64>() * 2.0 * PI))
            .collect();
        let lfo_scale = nz.lfo * (2.0 / LFO_TERMS as f64).sqrt();
        for i in 0..n {
            let t = i as f64 / fs;
            let systemic = nz.cardiac * (2.0 * PI * cardiac_f * t + phases[0]).sin()
                + nz.respiratory * (2.0 * PI * resp_f * t + phases[1]).sin();
            let mayer = nz.mayer * (2.0 * PI * mayer_f * t + mayer_phase).sin();
            let drift = nz.drift
                * (slope * t
                    + drift_f
                        .iter()
                        .zip(&drift_phase)
                        .map(|(f, p)| (2.0 * PI * f * t + p).sin())
                        .sum::<f64>()
                        / 3.0);
            let spont = lfo_scale * lfo.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>();
            let physio = coupling * (systemic + mayer) + drift + spont;
            hbo[[i, c]] += physio;
            hbr[[i, c]] += 0.5 * physio;
        }
        if nz.white > 0.0 {
            for i in 0..n {
                hbo[[i, c]] += nz.white * normal(&mut rng);
                hbr[[i, c]] += nz.white * normal(&mut rng);
            }
        }
    }

    let channels: Vec<ChannelMeta> = (1..=nch).map(ChannelMeta::with_defaults).collect();
    let mbll = MbllParams::default();
    let mut od = Array2::<f64>::zeros((n, 2 * nch));
    for (c, ch) in channels.iter().enumerate() {
        let p = mbll.with_distance_cm(ch.source_detector_distance_mm / 10.0);
        for i in 0..n {
            let (lo, hi) = p.forward(hbo[[i, c]], hbr[[i, c]]);
            od[[i, 2 * c]] = lo;
            od[[i, 2 * c + 1]] = hi;
        }
    }
    let rec = Recording::new(fs, 0.0, channels, od)?;
    Ok((rec, EventList::new(events)?))
}
