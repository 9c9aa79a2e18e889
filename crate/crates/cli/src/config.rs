//! Flat `key = value` configuration. Resolution order is built-in defaults,
//! then the config file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use fnirs_bci::classifiers::{AnnConfig, LogRegParams, Shrinkage, SvmParams};
use fnirs_bci::dimred::{IcaParams, Kernel};
use fnirs_bci::eval::DEFAULT_SPLIT_RATIOS;
use fnirs_bci::features::FeatureSet;
use fnirs_bci::io::SynthConfig;
use fnirs_bci::nn::{Grid, TrainConfig};
use fnirs_bci::signal::{MbllParams, DEFAULT_BAND_HZ, DEFAULT_EPOCH_WINDOW_S, DEFAULT_FILTER_ORDER};
use fnirs_bci::Class;

use crate::error::{CliError, CliResult};

pub const CONFIG_ENV: &str = "FNIRS_BCI_CONFIG";
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_KPCA_COMPONENTS: usize = 20;

/// Keys naming files. They stay out of the model snapshot so that a model's
/// checksum does not depend on where it was written.
pub const PATH_KEYS: [&str; 8] = ["out", "recording", "events", "channels", "epochs", "model", "features.input", "preprocess.mbll"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    RawIca,
    Features,
    FeaturesKpca,
}

impl FromStr for Pipeline {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "raw_ica" => Ok(Pipeline::RawIca),
            "features" => Ok(Pipeline::Features),
            "features_kpca" => Ok(Pipeline::FeaturesKpca),
            other => Err(CliError::usage(format!(
                "unknown pipeline {other:?}; expected raw_ica, features or features_kpca"
            ))),
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pipeline::RawIca => "raw_ica",
            Pipeline::Features => "features",
            Pipeline::FeaturesKpca => "features_kpca",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Bilstm,
    Slda,
    Logreg,
    Svm,
    Ann,
}

impl FromStr for ClassifierKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "bilstm" => Ok(ClassifierKind::Bilstm),
            "slda" => Ok(ClassifierKind::Slda),
            "logreg" => Ok(ClassifierKind::Logreg),
            "svm" => Ok(ClassifierKind::Svm),
            "ann" => Ok(ClassifierKind::Ann),
            other => Err(CliError::new(
                "config",
                format!("unknown classifier {other:?}; expected bilstm, slda, logreg, svm or ann"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice {
    Linear,
    /// `None` picks gamma from the training data.
    Rbf(Option<f64>),
}

impl KernelChoice {
    pub fn resolve(self, x: ndarray::ArrayView2<f64>) -> Kernel {
        match self {
            KernelChoice::Linear => Kernel::Linear,
            KernelChoice::Rbf(Some(gamma)) => Kernel::Rbf { gamma },
            KernelChoice::Rbf(None) => Kernel::rbf_scaled(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub out: PathBuf,
    pub recording: PathBuf,
    pub events: PathBuf,
    pub channels: Option<PathBuf>,
    pub epochs: PathBuf,
    pub model: PathBuf,
    /// A precomputed feature matrix used instead of the epochs file.
    pub features_input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSettings {
    pub fs: Option<f64>,
    pub filter_order: usize,
    pub band_hz: (f64, f64),
    pub epoch_window_s: (f64, f64),
    pub mbll: MbllParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Every resolved key, including defaults.
    pub entries: BTreeMap<String, String>,
    pub seed: u64,
    pub pipeline: Pipeline,
    pub classifier: ClassifierKind,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub preprocess: PreprocessSettings,
    pub feature_set: FeatureSet,
    pub split_ratios: (f64, f64),
    pub ica: IcaParams,
    pub kpca_components: usize,
    pub kpca_kernel: KernelChoice,
    pub train: TrainConfig,
    pub grid: Option<Grid>,
    pub logreg: LogRegParams,
    pub svm: SvmParams,
    pub ann: AnnConfig,
    pub slda: Shrinkage,
}

fn list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Built-in defaults for every recognized key. Empty values mean "unset".
pub fn defaults() -> BTreeMap<String, String> {
    let s = SynthConfig::default();
    let t = TrainConfig::default();
    let ica = IcaParams::default();
    let lr = LogRegParams::default();
    let svm = SvmParams::default();
    let ann = AnnConfig::default();
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("seed", DEFAULT_SEED.to_string());
    put("pipeline", "raw_ica".into());
    put("classifier", "auto".into());
    for k in PATH_KEYS {
        put(k, String::new());
    }
    put("out", "out".into());

    put("synth.trials_per_class", s.n_trials_per_class.to_string());
    put("synth.channels", s.n_channels.to_string());
    put("synth.fs", s.fs.to_string());
    put("synth.amplitude_jitter", s.amplitude_jitter.to_string());
    put("synth.latency_jitter_s", s.latency_jitter_s.to_string());
    put("synth.hbr_ratio", s.hbr_ratio.to_string());
    for c in Class::ALL {
        let r = &s.responses[c.index()];
        put(&format!("synth.response.{}", c.as_str().to_lowercase()), list(&r.group_amplitudes));
        put(&format!("synth.delay.{}", c.as_str().to_lowercase()), r.delay_s.to_string());
    }
    let n = s.noise;
    put("synth.noise.drift", n.drift.to_string());
    put("synth.noise.cardiac", n.cardiac.to_string());
    put("synth.noise.respiratory", n.respiratory.to_string());
    put("synth.noise.mayer", n.mayer.to_string());
    put("synth.noise.lfo", n.lfo.to_string());
    put("synth.noise.white", n.white.to_string());

    put("preprocess.fs", String::new());
    put("preprocess.filter_order", DEFAULT_FILTER_ORDER.to_string());
    put("preprocess.band_lo", DEFAULT_BAND_HZ.0.to_string());
    put("preprocess.band_hi", DEFAULT_BAND_HZ.1.to_string());
    put("preprocess.epoch_start", DEFAULT_EPOCH_WINDOW_S.0.to_string());
    put("preprocess.epoch_end", DEFAULT_EPOCH_WINDOW_S.1.to_string());

    put("features.set", FeatureSet::TemporalMean.as_str().into());
    put("split.train_val_fraction", DEFAULT_SPLIT_RATIOS.0.to_string());
    put("split.inner_train_fraction", DEFAULT_SPLIT_RATIOS.1.to_string());

    put("ica.components", ica.n_components.to_string());
    put("ica.tol", ica.tol.to_string());
    put("ica.max_iter", ica.max_iter.to_string());
    put("kpca.components", DEFAULT_KPCA_COMPONENTS.to_string());
    put("kpca.kernel", "rbf".into());
    put("kpca.gamma", "auto".into());

    put("train.lr", t.lr.to_string());
    put("train.batch_size", t.batch_size.to_string());
    put("train.max_epochs", t.max_epochs.to_string());
    put("train.early_stop_patience", t.early_stop_patience.to_string());
    put("train.min_delta", t.min_delta.to_string());
    put("train.plateau_factor", t.plateau_factor.to_string());
    put("train.plateau_patience", t.plateau_patience.to_string());
    put("train.min_lr", t.min_lr.to_string());
    put("train.noise_sigma", t.noise_sigma.to_string());
    put("train.dropout", t.dropout.to_string());
    put("train.recurrent_dropout", t.recurrent_dropout.to_string());
    put("train.l2", t.l2.to_string());
    put("train.units", t.units.to_string());
    put("train.stride", t.stride.to_string());
    put("train.clip_norm", t.clip_norm.to_string());
    put("grid.lr", String::new());
    put("grid.dropout", String::new());
    put("grid.units", String::new());

    put("logreg.l2", lr.l2.to_string());
    put("logreg.max_iter", lr.max_iter.to_string());
    put("logreg.tol", lr.tol.to_string());
    put("svm.c", svm.c.to_string());
    put("svm.epochs", svm.epochs.to_string());
    put("ann.hidden", ann.hidden.to_string());
    put("ann.inner_train_fraction", ann.inner_train_fraction.to_string());
    put("slda.shrinkage", "auto".into());
    m
}

/// Parses `key = value` lines. `[section]` headers prefix the keys that
/// follow with `section.`; `#` and `;` start comment lines.
pub fn parse_config_text(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| CliError::new("config", format!("line {}: unterminated section header", i + 1)))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::new("config", format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` command-line override.
pub fn parse_override(s: &str) -> CliResult<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--set expects key=value, got {s:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        self.map.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| CliError::new("config", format!("{key}: cannot parse {v:?}")))
    }

    fn opt<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| CliError::new("config", format!("{key}: cannot parse {p:?} in {v:?}")))
            })
            .collect()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }
}

impl PipelineConfig {
    /// Applies `layers` in order over the defaults and validates the result.
    pub fn resolve(layers: &[Vec<(String, String)>]) -> CliResult<PipelineConfig> {
        let mut entries = defaults();
        for layer in layers {
            for (k, v) in layer {
                match entries.get_mut(k) {
                    Some(slot) => *slot = v.clone(),
                    None => return Err(CliError::new("config", format!("unknown key {k:?}"))),
                }
            }
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> CliResult<PipelineConfig> {
        let r = Reader { map: &entries };
        let pipeline: Pipeline = r.raw("pipeline").parse()?;
        let classifier = match r.raw("classifier") {
            "auto" => match pipeline {
                Pipeline::RawIca => ClassifierKind::Bilstm,
                _ => ClassifierKind::Slda,
            },
            other => other.parse()?,
        };
        match (pipeline, classifier) {
            (Pipeline::RawIca, ClassifierKind::Bilstm) => {}
            (Pipeline::RawIca, _) => {
                return Err(CliError::new("config", "the raw_ica pipeline trains the bilstm classifier"));
            }
            (_, ClassifierKind::Bilstm) => {
                return Err(CliError::new("config", "bilstm needs the raw_ica pipeline"));
            }
            _ => {}
        }
        let seed: u64 = r.parse("seed")?;

        let out = r.path("out").unwrap_or_else(|| PathBuf::from("."));
        let in_out = |key: &str, name: &str| r.path(key).unwrap_or_else(|| out.join(name));
        let paths = Paths {
            recording: in_out("recording", "recording.csv"),
            events: in_out("events", "events.csv"),
            channels: r.path("channels"),
            epochs: in_out("epochs", "epochs.csv"),
            model: in_out("model", "model.fnirs"),
            features_input: r.path("features.input"),
            out: out.clone(),
        };

        let mut synth = SynthConfig {
            seed,
            n_trials_per_class: r.parse("synth.trials_per_class")?,
            n_channels: r.parse("synth.channels")?,
            fs: r.parse("synth.fs")?,
            amplitude_jitter: r.parse("synth.amplitude_jitter")?,
            latency_jitter_s: r.parse("synth.latency_jitter_s")?,
            hbr_ratio: r.parse("synth.hbr_ratio")?,
            ..SynthConfig::default()
        };
        for c in Class::ALL {
            let name = c.as_str().to_lowercase();
            synth.responses[c.index()].group_amplitudes = r.list(&format!("synth.response.{name}"))?;
            synth.responses[c.index()].delay_s = r.parse(&format!("synth.delay.{name}"))?;
        }
        synth.noise.drift = r.parse("synth.noise.drift")?;
        synth.noise.cardiac = r.parse("synth.noise.cardiac")?;
        synth.noise.respiratory = r.parse("synth.noise.respiratory")?;
        synth.noise.mayer = r.parse("synth.noise.mayer")?;
        synth.noise.lfo = r.parse("synth.noise.lfo")?;
        synth.noise.white = r.parse("synth.noise.white")?;
        synth.validate().map_err(|e| CliError::new("config", e.to_string()))?;

        let mbll = match r.path("preprocess.mbll") {
            Some(p) => MbllParams::load(&p).map_err(|e| CliError::new("config", e.to_string()))?,
            None => MbllParams::default(),
        };
        let preprocess = PreprocessSettings {
            fs: r.opt("preprocess.fs")?,
            filter_order: r.parse("preprocess.filter_order")?,
            band_hz: (r.parse("preprocess.band_lo")?, r.parse("preprocess.band_hi")?),
            epoch_window_s: (r.parse("preprocess.epoch_start")?, r.parse("preprocess.epoch_end")?),
            mbll,
        };
        let feature_set: FeatureSet = r
            .raw("features.set")
            .parse()
            .map_err(|e: fnirs_bci::Error| CliError::new("config", e.to_string()))?;

        let split_ratios = (r.parse("split.train_val_fraction")?, r.parse("split.inner_train_fraction")?);
        let ica = IcaParams {
            n_components: r.parse("ica.components")?,
            tol: r.parse("ica.tol")?,
            max_iter: r.parse("ica.max_iter")?,
            seed,
        };
        let kpca_components: usize = r.parse("kpca.components")?;
        if kpca_components == 0 {
            return Err(CliError::new("config", "kpca.components must be positive"));
        }
        let kpca_kernel = match (r.raw("kpca.kernel"), r.raw("kpca.gamma")) {
            ("linear", _) => KernelChoice::Linear,
            ("rbf", "auto") => KernelChoice::Rbf(None),
            ("rbf", _) => {
                let g: f64 = r.parse("kpca.gamma")?;
                if !(g > 0.0 && g.is_finite()) {
                    return Err(CliError::new("config", format!("kpca.gamma must be positive, got {g}")));
                }
                KernelChoice::Rbf(Some(g))
            }
            (other, _) => return Err(CliError::new("config", format!("unknown kernel {other:?}; expected rbf or linear"))),
        };

        let train = TrainConfig {
            lr: r.parse("train.lr")?,
            batch_size: r.parse("train.batch_size")?,
            max_epochs: r.parse("train.max_epochs")?,
            early_stop_patience: r.parse("train.early_stop_patience")?,
            min_delta: r.parse("train.min_delta")?,
            plateau_factor: r.parse("train.plateau_factor")?,
            plateau_patience: r.parse("train.plateau_patience")?,
            min_lr: r.parse("train.min_lr")?,
            noise_sigma: r.parse("train.noise_sigma")?,
            dropout: r.parse("train.dropout")?,
            recurrent_dropout: r.parse("train.recurrent_dropout")?,
            l2: r.parse("train.l2")?,
            units: r.parse("train.units")?,
            stride: r.parse("train.stride")?,
            clip_norm: r.parse("train.clip_norm")?,
            seed,
        };
        train.validate().map_err(|e| CliError::new("config", e.to_string()))?;

        let (g_lr, g_do, g_units): (Vec<f64>, Vec<f64>, Vec<usize>) =
            (r.list("grid.lr")?, r.list("grid.dropout")?, r.list("grid.units")?);
        let grid = if g_lr.is_empty() && g_do.is_empty() && g_units.is_empty() {
            None
        } else {
            let or = |v: Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v };
            Some(Grid {
                lr: or(g_lr, train.lr),
                dropout: or(g_do, train.dropout),
                units: if g_units.is_empty() { vec![train.units] } else { g_units },
            })
        };

        let logreg = LogRegParams {
            l2: r.parse("logreg.l2")?,
            max_iter: r.parse("logreg.max_iter")?,
            tol: r.parse("logreg.tol")?,
        };
        let svm = SvmParams { c: r.parse("svm.c")?, epochs: r.parse("svm.epochs")?, seed };
        let ann = AnnConfig {
            hidden: r.parse("ann.hidden")?,
            inner_train_fraction: r.parse("ann.inner_train_fraction")?,
            train: train.clone(),
        };
        let slda = match r.raw("slda.shrinkage") {
            "auto" => Shrinkage::Auto,
            _ => {
                let g: f64 = r.parse("slda.shrinkage")?;
                if !(0.0..=1.0).contains(&g) {
                    return Err(CliError::new("config", format!("slda.shrinkage must lie in [0, 1], got {g}")));
                }
                Shrinkage::Fixed(g)
            }
        };

        Ok(PipelineConfig {
            entries,
            seed,
            pipeline,
            classifier,
            paths,
            synth,
            preprocess,
            feature_set,
            split_ratios,
            ica,
            kpca_components,
            kpca_kernel,
            train,
            grid,
            logreg,
            svm,
            ann,
            slda,
        })
    }

    /// Resolved settings without file paths, as stored in model containers.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .filter(|(k, _)| !PATH_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.paths.out.join(name)
    }
}

/// Reads the config file, if any, into an override layer.
pub fn load_config_file(path: Option<&Path>) -> CliResult<Vec<(String, String)>> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::new("config", format!("{}: {e}", p.display())))?;
            parse_config_text(&text)
        }
    }
}
