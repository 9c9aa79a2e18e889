//! The six subcommands. Each returns the text it prints on stdout.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};

use fnirs_bci::classifiers::{ann_baseline_fit, logreg_fit, slda_fit, svm_ovr_fit, AnnConfig};
use fnirs_bci::dimred::{ica_fit_epochs, ica_reduce_epochs, kpca_fit, kpca_transform};
use fnirs_bci::eval::{eval_report, split_train_val_test, Split};
use fnirs_bci::features::{assemble_feature_matrix, FeatureMatrix, FeatureSet, Standardizer};
use fnirs_bci::io::{
    channels_from_csv_str, generate_synthetic, EpochSet, EventList, Recording, DEFAULT_DISTANCE_MM, DEFAULT_WL_HI_NM,
    DEFAULT_WL_LO_NM,
};
use fnirs_bci::nn::{grid_search, predict, train, Dataset, GridResult, TrainReport};
use fnirs_bci::numfmt::fmt_f64;
use fnirs_bci::signal::{baseline_correct, design_butterworth_bandpass, mbll_convert, segment_epochs};
use fnirs_bci::Class;

use crate::config::{ClassifierKind, Pipeline, PipelineConfig};
use crate::container::{self, sha256_hex, ClassifierModel, Payload, Reduction};
use crate::error::{CliError, CliResult, Stage};
use crate::output::{read_text, Outputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Train,
    Val,
    Test,
    All,
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            "all" => Ok(Subset::All),
            other => Err(format!("unknown subset {other:?}; expected train, val, test or all")),
        }
    }
}

fn display(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

pub fn cmd_synth(cfg: &PipelineConfig, force: bool) -> CliResult<String> {
    let mut out = Outputs::new(force);
    out.claim(&[&cfg.paths.recording, &cfg.paths.events])?;
    let (rec, ev) = generate_synthetic(&cfg.synth).stage("synth")?;
    out.write(&cfg.paths.recording, &rec.to_csv_string())?;
    out.write(&cfg.paths.events, &ev.to_csv_string())?;
    Ok(format!(
        "synth: {} trials ({} per class), {} channels, {} samples at {} Hz, seed {} -> {}\n",
        ev.len(),
        cfg.synth.n_trials_per_class,
        rec.n_channels(),
        rec.n_samples(),
        rec.fs(),
        cfg.seed,
        display(out.written())
    ))
}

fn timed<T>(stage: &'static str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
    let t = Instant::now();
    let v = f()?;
    eprintln!("timing: {stage} {:.3} s", t.elapsed().as_secs_f64());
    Ok(v)
}

pub fn cmd_preprocess(cfg: &PipelineConfig, force: bool) -> CliResult<String> {
    let p = &cfg.preprocess;
    let mut out = Outputs::new(force);
    out.claim(&[&cfg.paths.epochs])?;
    let (rec, ev) = timed("load", || {
        let mut rec = Recording::from_csv_str(&read_text(&cfg.paths.recording, "load")?)
            .map_err(|e| CliError::new("load", format!("{}: {e}", cfg.paths.recording.display())))?;
        let ev = EventList::from_csv_str(&read_text(&cfg.paths.events, "load")?)
            .map_err(|e| CliError::new("load", format!("{}: {e}", cfg.paths.events.display())))?;
        match &cfg.paths.channels {
            Some(path) => {
                let ch = channels_from_csv_str(&read_text(path, "load")?)
                    .map_err(|e| CliError::new("load", format!("{}: {e}", path.display())))?;
                rec = rec.with_channels(ch).stage("load")?;
            }
            None => log::warn!(
                "no channel sidecar given; using {DEFAULT_WL_LO_NM}/{DEFAULT_WL_HI_NM} nm and {DEFAULT_DISTANCE_MM} mm for every channel"
            ),
        }
        if let Some(fs) = p.fs {
            rec = rec.with_fs_override(fs).stage("load")?;
        }
        Ok((rec, ev))
    })?;
    let h = timed("mbll", || mbll_convert(&rec, &p.mbll).stage("mbll"))?;
    let h = timed("filter", || {
        let f = design_butterworth_bandpass(p.filter_order, p.band_hz.0, p.band_hz.1, h.fs).stage("filter")?;
        h.filtered(&f).stage("filter")
    })?;
    let es = timed("segment", || segment_epochs(&h, &ev, p.epoch_window_s).stage("segment"))?;
    let es = timed("baseline", || baseline_correct(&es).stage("baseline"))?;
    timed("write", || out.write(&cfg.paths.epochs, &es.to_csv_string()))?;
    Ok(format!(
        "preprocess: {} epochs x {} streams x {} samples -> {}\n",
        es.n_trials(),
        es.n_streams(),
        es.n_samples(),
        cfg.paths.epochs.display()
    ))
}

fn load_epochs(path: &Path) -> CliResult<(EpochSet, String)> {
    let text = read_text(path, "load")?;
    let es = EpochSet::from_csv_str(&text).map_err(|e| CliError::new("load", format!("{}: {e}", path.display())))?;
    Ok((es, sha256_hex(text.as_bytes())))
}

fn load_features(path: &Path) -> CliResult<(FeatureMatrix, String)> {
    let text = read_text(path, "load")?;
    let fm = FeatureMatrix::from_csv_str(&text).map_err(|e| CliError::new("load", format!("{}: {e}", path.display())))?;
    Ok((fm, sha256_hex(text.as_bytes())))
}

/// Feature rows for the flat pipelines, from a precomputed matrix when one is
/// configured and from the epochs file otherwise.
fn flat_data(cfg: &PipelineConfig, set: FeatureSet) -> CliResult<(FeatureMatrix, String)> {
    match &cfg.paths.features_input {
        Some(path) => load_features(path),
        None => {
            let (es, fp) = load_epochs(&cfg.paths.epochs)?;
            Ok((assemble_feature_matrix(&es, set).stage("features")?, fp))
        }
    }
}

pub fn cmd_features(cfg: &PipelineConfig, force: bool) -> CliResult<String> {
    let path = cfg.out_file("features.csv");
    let mut out = Outputs::new(force);
    out.claim(&[&path])?;
    let (es, _) = load_epochs(&cfg.paths.epochs)?;
    let fm = assemble_feature_matrix(&es, cfg.feature_set).stage("features")?;
    out.write(&path, &fm.to_csv_string())?;
    Ok(format!(
        "features: {} rows x {} columns ({}) -> {}\n",
        fm.values.nrows(),
        fm.values.ncols(),
        cfg.feature_set.as_str(),
        path.display()
    ))
}

fn label_indices(labels: &[Class], rows: &[usize]) -> Vec<usize> {
    rows.iter().map(|&i| labels[i].index()).collect()
}

fn grid_csv(g: &GridResult) -> String {
    let mut s = String::from("lr,dropout,units,val_error,diverged,best_epoch,selected\n");
    for (i, r) in g.rows.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f64(r.lr),
            fmt_f64(r.dropout),
            r.units,
            fmt_f64(r.val_error),
            u8::from(r.diverged),
            r.best_epoch,
            u8::from(i == g.best)
        ));
    }
    s
}

struct Trained {
    reduction: Reduction,
    classifier: ClassifierModel,
    report: Option<TrainReport>,
    grid: Option<GridResult>,
}

fn train_recurrent(cfg: &PipelineConfig, es: &EpochSet, split: &Split) -> CliResult<Trained> {
    let ica = ica_fit_epochs(es, &split.train, &cfg.ica).stage("ica")?;
    if !ica.converged {
        log::warn!("ICA stopped after {} iterations without converging", ica.iterations);
    }
    let reduced = ica_reduce_epochs(&ica, es).stage("ica")?;
    let ds = Dataset::from_epochs(&reduced, cfg.train.stride).stage("train")?;
    let (tr, va) = (ds.select(&split.train), ds.select(&split.val));
    let mut tc = cfg.train.clone();
    let mut grid = None;
    if let Some(g) = &cfg.grid {
        let result = grid_search(&tc.default_spec(reduced.n_streams()), g, &tr, &va, &tc).stage("grid")?;
        let best = result.best_row();
        if best.diverged {
            return Err(CliError::new("grid", "every grid cell diverged"));
        }
        tc.lr = best.lr;
        tc.dropout = best.dropout;
        tc.recurrent_dropout = best.dropout;
        tc.units = best.units;
        grid = Some(result);
    }
    let spec = tc.default_spec(reduced.n_streams());
    let (params, report) = train(&spec, &tr, &va, &tc).stage("train")?;
    Ok(Trained {
        reduction: Reduction::Ica(ica),
        classifier: ClassifierModel::Bilstm { spec, params, train: tc },
        report: Some(report),
        grid,
    })
}

/// Flat classifiers are fit on training and validation rows together; only
/// the ANN holds part of them back, for early stopping.
fn train_flat(cfg: &PipelineConfig, fm: &FeatureMatrix, split: &Split) -> CliResult<Trained> {
    let rows: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
    let y = label_indices(&fm.labels, &rows);
    let x = fm.values.select(Axis(0), &rows);
    let scaler = Standardizer::fit(&x);
    let z = scaler.transform(&x).stage("features")?;
    let (reduction, z) = match cfg.pipeline {
        Pipeline::FeaturesKpca => {
            let kernel = cfg.kpca_kernel.resolve(z.view());
            let kpca = kpca_fit(z.view(), kernel, cfg.kpca_components).stage("kpca")?;
            if kpca.n_components < kpca.requested_components {
                log::warn!(
                    "kernel PCA kept {} of {} requested components",
                    kpca.n_components,
                    kpca.requested_components
                );
            }
            let scores = kpca.training_scores().stage("kpca")?;
            (Reduction::Kpca { scaler, kpca }, scores)
        }
        _ => (Reduction::Standardize { scaler }, z),
    };
    let mut report = None;
    let classifier = match cfg.classifier {
        ClassifierKind::Slda => ClassifierModel::Slda(slda_fit(&z, &y, cfg.slda).stage("train")?),
        ClassifierKind::Logreg => {
            let m = logreg_fit(&z, &y, &cfg.logreg).stage("train")?;
            if !m.converged {
                log::warn!("logistic regression stopped at the iteration limit");
            }
            ClassifierModel::Logreg(m)
        }
        ClassifierKind::Svm => ClassifierModel::Svm(svm_ovr_fit(&z, &y, &cfg.svm).stage("train")?),
        ClassifierKind::Ann => {
            let ann = AnnConfig { train: cfg.train.clone(), ..cfg.ann.clone() };
            let m = ann_baseline_fit(&z, &y, &ann).stage("train")?;
            report = Some(m.report.clone());
            ClassifierModel::Ann(m)
        }
        ClassifierKind::Bilstm => unreachable!("rejected by config validation"),
    };
    Ok(Trained { reduction, classifier, report, grid: None })
}

pub fn cmd_train(cfg: &PipelineConfig, force: bool) -> CliResult<String> {
    let report_path = cfg.out_file("train_report.csv");
    let grid_path = cfg.out_file("grid.csv");
    let mut out = Outputs::new(force);
    let mut targets = vec![cfg.paths.model.as_path(), report_path.as_path()];
    if cfg.grid.is_some() {
        targets.push(&grid_path);
    }
    out.claim(&targets)?;

    let (trained, split, fingerprint) = match cfg.pipeline {
        Pipeline::RawIca => {
            if cfg.paths.features_input.is_some() {
                return Err(CliError::new("config", "the raw_ica pipeline reads epochs, not features.input"));
            }
            let (es, fp) = load_epochs(&cfg.paths.epochs)?;
            let split = split_train_val_test(&es.labels, cfg.split_ratios, cfg.seed).stage("split")?;
            (train_recurrent(cfg, &es, &split)?, split, fp)
        }
        Pipeline::Features | Pipeline::FeaturesKpca => {
            if cfg.grid.is_some() {
                log::warn!("grid.* keys only apply to the raw_ica pipeline");
            }
            let (fm, fp) = flat_data(cfg, cfg.feature_set)?;
            let split = split_train_val_test(&fm.labels, cfg.split_ratios, cfg.seed).stage("split")?;
            (train_flat(cfg, &fm, &split)?, split, fp)
        }
    };
    let sizes = split.sizes();
    let payload = Payload {
        config: cfg.snapshot(),
        pipeline: cfg.pipeline,
        seed: cfg.seed,
        data_fingerprint: fingerprint,
        split,
        reduction: trained.reduction,
        classifier: trained.classifier,
    };
    let (text, checksum) = container::encode(&payload)?;
    out.write(&cfg.paths.model, &text)?;
    let report = trained.report.unwrap_or(TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        checksum: String::new(),
    });
    out.write(&report_path, &report.to_csv_string())?;
    if let Some(g) = &trained.grid {
        out.write(&grid_path, &grid_csv(g))?;
    }
    let mut line = format!(
        "train: pipeline={} classifier={:?} train={} val={} test={}",
        cfg.pipeline, cfg.classifier, sizes.train, sizes.val, sizes.test
    )
    .to_lowercase();
    if let Some(best) = report.epochs.get(report.best_epoch.wrapping_sub(1)) {
        line.push_str(&format!(" best_epoch={} val_accuracy={}", report.best_epoch, best.val_accuracy));
    }
    line.push_str(&format!(" checksum={checksum} -> {}\n", display(out.written())));
    Ok(line)
}

fn subset_rows(split: &Split, subset: Subset, n: usize) -> Vec<usize> {
    match subset {
        Subset::Train => split.train.clone(),
        Subset::Val => split.val.clone(),
        Subset::Test => split.test.clone(),
        Subset::All => (0..n).collect(),
    }
}

fn flat_probabilities(payload: &Payload, x: &Array2<f64>) -> CliResult<Array2<f64>> {
    let z = match &payload.reduction {
        Reduction::Standardize { scaler } => scaler.transform(x).stage("predict")?,
        Reduction::Kpca { scaler, kpca } => {
            let z = scaler.transform(x).stage("predict")?;
            kpca_transform(kpca, z.view()).stage("predict")?
        }
        Reduction::Ica(_) => return Err(CliError::new("container", "ICA reduction paired with a flat classifier")),
    };
    payload.classifier.probabilities(&z).stage("predict")
}

/// Class probabilities and true labels for the chosen rows.
fn predict_subset(cfg: &PipelineConfig, payload: &Payload, subset: Subset) -> CliResult<(Array2<f64>, Vec<Class>)> {
    let check = |fp: &str| {
        if subset != Subset::All && fp != payload.data_fingerprint {
            return Err(CliError::new(
                "evaluate",
                "data differs from the data the model was trained on; use --subset all for new data",
            ));
        }
        Ok(())
    };
    match (&payload.reduction, &payload.classifier) {
        (Reduction::Ica(ica), ClassifierModel::Bilstm { spec, params, train }) => {
            let (es, fp) = load_epochs(&cfg.paths.epochs)?;
            check(&fp)?;
            let rows = subset_rows(&payload.split, subset, es.n_trials());
            if rows.iter().any(|&i| i >= es.n_trials()) {
                return Err(CliError::new("evaluate", "split indices exceed the number of epochs"));
            }
            let es = es.select(&rows);
            let reduced = ica_reduce_epochs(ica, &es).stage("predict")?;
            let ds = Dataset::from_epochs(&reduced, train.stride).stage("predict")?;
            Ok((predict(spec, params, &ds.x).stage("predict")?, es.labels))
        }
        (_, ClassifierModel::Bilstm { .. }) | (Reduction::Ica(_), _) => {
            Err(CliError::new("container", "inconsistent reduction and classifier"))
        }
        _ => {
            let set: FeatureSet = payload
                .config
                .get("features.set")
                .map(String::as_str)
                .unwrap_or("temporal_mean")
                .parse()
                .stage("container")?;
            let (fm, fp) = flat_data(cfg, set)?;
            check(&fp)?;
            let rows = subset_rows(&payload.split, subset, fm.labels.len());
            if rows.iter().any(|&i| i >= fm.labels.len()) {
                return Err(CliError::new("evaluate", "split indices exceed the number of rows"));
            }
            let fm = fm.select_rows(&rows);
            Ok((flat_probabilities(payload, &fm.values)?, fm.labels))
        }
    }
}

pub fn cmd_evaluate(cfg: &PipelineConfig, force: bool, model: Option<&Path>, subset: Subset) -> CliResult<String> {
    let metrics = cfg.out_file("metrics.json");
    let roc: Vec<PathBuf> = Class::ALL.iter().map(|c| cfg.out_file(&format!("roc_{c}.csv"))).collect();
    let mut out = Outputs::new(force);
    let mut targets = vec![metrics.as_path()];
    targets.extend(roc.iter().map(PathBuf::as_path));
    out.claim(&targets)?;

    let payload = container::load(model.unwrap_or(&cfg.paths.model))?;
    let (probs, labels) = predict_subset(cfg, &payload, subset)?;
    if labels.is_empty() {
        return Err(CliError::new("evaluate", "the selected subset is empty"));
    }
    let report = eval_report(&probs, &labels, payload.seed, payload.split.sizes()).stage("evaluate")?;
    out.write(&metrics, &report.to_json_string())?;
    for (c, path) in Class::ALL.iter().zip(&roc) {
        out.write(path, &report.roc[c.index()].to_csv_string())?;
    }
    Ok(format!("accuracy={}\n", report.accuracy))
}

/// Pearson correlation between columns. Constant columns correlate 0 with
/// every other column and 1 with themselves.
pub fn correlation_matrix(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows().max(1) as f64;
    let centered = x - &x.mean_axis(Axis(0)).unwrap_or_else(|| ndarray::Array1::zeros(x.ncols()));
    let cov = centered.t().dot(&centered) / n;
    let sd: Vec<f64> = cov.diag().iter().map(|v| v.max(0.0).sqrt()).collect();
    let d = x.ncols();
    Array2::from_shape_fn((d, d), |(i, j)| {
        if i == j {
            1.0
        } else if sd[i] > 0.0 && sd[j] > 0.0 {
            (cov[[i, j]] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    })
}

fn matrix_csv(names: &[String], m: &Array2<f64>) -> String {
    let mut s = format!("name,{}\n", names.join(","));
    for (name, row) in names.iter().zip(m.rows()) {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        s.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    s
}

const CHROMOPHORES: [&str; 2] = ["HbO", "HbR"];

/// Per-class, channel-averaged epoch time courses; one row per epoch sample.
pub fn timecourse_csv(es: &EpochSet) -> CliResult<String> {
    let mut header = vec!["t".to_string()];
    let mut columns = Vec::new();
    for c in Class::ALL {
        let trials: Vec<usize> = (0..es.n_trials()).filter(|&i| es.labels[i] == c).collect();
        for chrom in CHROMOPHORES {
            let streams: Vec<usize> = (0..es.n_streams())
                .filter(|&s| es.stream_names[s].ends_with(&format!("_{chrom}")))
                .collect();
            if streams.is_empty() {
                return Err(CliError::new("visualize", format!("no {chrom} streams in the epochs file")));
            }
            header.push(format!("{c}_{chrom}"));
            let col: Vec<f64> = (0..es.n_samples())
                .map(|j| {
                    if trials.is_empty() {
                        return f64::NAN;
                    }
                    let sum: f64 = trials.iter().flat_map(|&i| streams.iter().map(move |&s| es.data[[i, s, j]])).sum();
                    sum / (trials.len() * streams.len()) as f64
                })
                .collect();
            columns.push(col);
        }
    }
    let mut s = header.join(",") + "\n";
    for j in 0..es.n_samples() {
        let t = (es.first_offset() + j as i64) as f64 / es.fs;
        s.push_str(&fmt_f64(t));
        for col in &columns {
            s.push(',');
            s.push_str(&fmt_f64(col[j]));
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn cmd_visualize(cfg: &PipelineConfig, force: bool) -> CliResult<String> {
    let paths = [cfg.out_file("corr_original.csv"), cfg.out_file("corr_kpca.csv"), cfg.out_file("timecourse.csv")];
    let mut out = Outputs::new(force);
    out.claim(&paths.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let (es, _) = load_epochs(&cfg.paths.epochs)?;
    let fm = match &cfg.paths.features_input {
        Some(p) => load_features(p)?.0,
        None => assemble_feature_matrix(&es, cfg.feature_set).stage("features")?,
    };
    let z = Standardizer::fit(&fm.values).transform(&fm.values).stage("visualize")?;
    let n_comp = cfg.kpca_components.min(z.nrows().saturating_sub(1)).max(1);
    let kpca = kpca_fit(z.view(), cfg.kpca_kernel.resolve(z.view()), n_comp).stage("kpca")?;
    let scores = kpca.training_scores().stage("kpca")?;
    let pc_names: Vec<String> = (1..=scores.ncols()).map(|i| format!("pc{i:02}")).collect();
    out.write(&paths[0], &matrix_csv(&fm.names, &correlation_matrix(&z)))?;
    out.write(&paths[1], &matrix_csv(&pc_names, &correlation_matrix(&scores)))?;
    out.write(&paths[2], &timecourse_csv(&es)?)?;
    Ok(format!(
        "visualize: {} features, {} kernel components, {} samples per epoch -> {}\n",
        fm.names.len(),
        scores.ncols(),
        es.n_samples(),
        display(out.written())
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn correlation_of_known_columns() {
        let x = array![[1.0, 2.0, -1.0, 5.0], [2.0, 4.0, -2.0, 5.0], [3.0, 6.0, -3.0, 5.0], [4.0, 8.1, -4.0, 5.0]];
        let r = correlation_matrix(&x);
        // numpy.corrcoef([1, 2, 3, 4], [2, 4, 6, 8.1])
        assert!((r[[0, 1]] - 0.9999272083175664).abs() < 1e-12, "{}", r[[0, 1]]);
        assert!((r[[0, 2]] + 1.0).abs() < 1e-15);
        assert_eq!(r[[0, 3]], 0.0);
        assert_eq!(r[[3, 3]], 1.0);
        assert_eq!(r, r.t());
    }

    #[test]
    fn timecourse_averages_trials_and_channels() {
        let mut data = ndarray::Array3::zeros((3, 4, 2));
        // trial 0 is MA: HbO streams 1 and 3, HbR streams -1 and -3
        for (s, v) in [1.0, -1.0, 3.0, -3.0].iter().enumerate() {
            data[[0, s, 0]] = *v;
            data[[0, s, 1]] = 2.0 * v;
        }
        let es = EpochSet::new(
            2.0,
            vec![Class::MA, Class::MI, Class::IS],
            data,
            vec!["ch01_HbO".into(), "ch01_HbR".into(), "ch02_HbO".into(), "ch02_HbR".into()],
            (0.0, 0.5),
        )
        .unwrap();
        let csv = timecourse_csv(&es).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,MA_HbO,MA_HbR,MI_HbO,MI_HbR,IS_HbO,IS_HbR");
        assert_eq!(lines.len(), 1 + es.n_samples());
        let row1: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row1[0], 0.5);
        assert_eq!(row1[1], 4.0);
        assert_eq!(row1[2], -4.0);
        assert_eq!(row1[3], 0.0);
    }

    #[test]
    fn subset_parsing() {
        assert_eq!("all".parse::<Subset>().unwrap(), Subset::All);
        assert!("holdout".parse::<Subset>().is_err());
    }
}
