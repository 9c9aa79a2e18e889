//! Dataset ingestion, persistence of intermediate artifacts, and the seeded
//! synthetic recording generator.
//!
//! All text formats are UTF-8 CSV with LF line endings and `.` as decimal
//! point. Numbers are written with 17 significant digits so every file
//! written here parses back to bit-identical values.

mod synth;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::class::Class;
use crate::error::{Error, Result};
use crate::numfmt::{ceil_tol, fmt_f64};

pub use synth::{generate_synthetic, ClassResponse, NoiseLevels, SynthConfig};

/// Maximum deviation of a timestamp from the uniform grid.
pub const TIMESTAMP_TOLERANCE_S: f64 = 1e-6;
/// Maximum relative disagreement between inferred and user-supplied rate.
pub const FS_OVERRIDE_TOLERANCE: f64 = 1e-3;

pub const DEFAULT_WL_LO_NM: f64 = 760.0;
pub const DEFAULT_WL_HI_NM: f64 = 850.0;
pub const DEFAULT_DISTANCE_MM: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMeta {
    /// 1-based channel number.
    pub id: usize,
    pub wavelength_lo_nm: f64,
    pub wavelength_hi_nm: f64,
    pub source_detector_distance_mm: f64,
}

impl ChannelMeta {
    pub fn with_defaults(id: usize) -> Self {
        ChannelMeta {
            id,
            wavelength_lo_nm: DEFAULT_WL_LO_NM,
            wavelength_hi_nm: DEFAULT_WL_HI_NM,
            source_detector_distance_mm: DEFAULT_DISTANCE_MM,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.id == 0 {
            return Err(Error::Invalid("channel ids are 1-based".into()));
        }
        if !(self.wavelength_lo_nm > 0.0 && self.wavelength_lo_nm < self.wavelength_hi_nm) {
            return Err(Error::Invalid(format!(
                "channel {}: wavelengths must satisfy 0 < lo < hi (got {}, {})",
                self.id, self.wavelength_lo_nm, self.wavelength_hi_nm
            )));
        }
        if !(self.source_detector_distance_mm > 0.0) {
            return Err(Error::Invalid(format!(
                "channel {}: source-detector distance must be positive",
                self.id
            )));
        }
        Ok(())
    }
}

/// Continuous optical-density recording: one row per sample, two columns
/// (low then high wavelength) per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    fs: f64,
    t0: f64,
    channels: Vec<ChannelMeta>,
    samples: Array2<f64>,
}

impl Recording {
    pub fn new(fs: f64, t0: f64, channels: Vec<ChannelMeta>, samples: Array2<f64>) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if !t0.is_finite() {
            return Err(Error::Invalid("start time must be finite".into()));
        }
        if samples.ncols() != 2 * channels.len() {
            return Err(Error::Shape(format!(
                "{} sample columns for {} channels (expected {})",
                samples.ncols(),
                channels.len(),
                2 * channels.len()
            )));
        }
        for ch in &channels {
            ch.validate()?;
        }
        if let Some(((r, c), v)) = samples.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::parse(r + 1, Some(c + 2), format!("non-finite value {v}")));
        }
        Ok(Recording {
            fs,
            t0,
            channels,
            samples,
        })
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn channels(&self) -> &[ChannelMeta] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    /// Replaces the timestamp-inferred rate with a user-supplied one. The two
    /// must agree within 0.1 %.
    pub fn with_fs_override(mut self, fs: f64) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(Error::Invalid(format!("sampling rate must be positive, got {fs}")));
        }
        let rel = (fs - self.fs).abs() / fs;
        if rel > FS_OVERRIDE_TOLERANCE {
            return Err(Error::Invalid(format!(
                "requested sampling rate {fs} Hz disagrees with timestamps ({:.6} Hz)",
                self.fs
            )));
        }
        self.fs = fs;
        Ok(self)
    }

    /// Replaces channel metadata (e.g. from a sidecar file).
    pub fn with_channels(mut self, channels: Vec<ChannelMeta>) -> Result<Self> {
        if channels.len() != self.channels.len() {
            return Err(Error::Shape(format!(
                "sidecar describes {} channels, recording has {}",
                channels.len(),
                self.channels.len()
            )));
        }
        for (new, old) in channels.iter().zip(&self.channels) {
            new.validate()?;
            if new.id != old.id {
                return Err(Error::Invalid(format!(
                    "sidecar channel id {} does not match recording channel {}",
                    new.id, old.id
                )));
            }
        }
        self.channels = channels;
        Ok(self)
    }

    pub fn header(&self) -> String {
        let mut h = String::from("t");
        for ch in &self.channels {
            h.push_str(&format!(",ch{:02}_wl1,ch{:02}_wl2", ch.id, ch.id));
        }
        h
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for (i, row) in self.samples.rows().into_iter().enumerate() {
            out.push_str(&fmt_f64(self.t0 + i as f64 / self.fs));
            for v in row {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the recording CSV. Channel metadata takes default wavelengths
    /// and distance; attach a sidecar with [`Recording::with_channels`].
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(0, None, "empty file"))?;
        let ids = parse_recording_header(header.trim_end_matches('\r'))?;
        let width = 1 + 2 * ids.len();

        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = i + 1;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut n = 0;
            for (j, cell) in line.split(',').enumerate() {
                if j >= width {
                    return Err(Error::parse(row, Some(j + 1), format!("expected {width} columns")));
                }
                let v = parse_finite(cell, row, j + 1)?;
                if j == 0 {
                    times.push(v);
                } else {
                    values.push(v);
                }
                n += 1;
            }
            if n != width {
                return Err(Error::parse(row, Some(n), format!("expected {width} columns, found {n}")));
            }
        }
        if times.len() < 2 {
            return Err(Error::parse(times.len(), None, "need at least two samples to infer the sampling rate"));
        }
        let n = times.len();
        let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
        if !(dt > 0.0) {
            return Err(Error::parse(2, Some(1), "timestamps must increase"));
        }
        for (i, &t) in times.iter().enumerate() {
            let expected = times[0] + i as f64 * dt;
            if (t - expected).abs() > TIMESTAMP_TOLERANCE_S {
                return Err(Error::parse(
                    i + 1,
                    Some(1),
                    format!("timestamp {t} deviates from uniform spacing {dt} by more than 1e-6 s"),
                ));
            }
        }
        let samples = Array2::from_shape_vec((n, width - 1), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let channels = ids.into_iter().map(ChannelMeta::with_defaults).collect();
        Recording::new(1.0 / dt, times[0], channels, samples)
    }
}

fn parse_finite(cell: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::parse(row, Some(col), format!("non-numeric cell {cell:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(row, Some(col), format!("non-finite value {cell:?}")));
    }
    Ok(v)
}

fn parse_recording_header(header: &str) -> Result<Vec<usize>> {
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(Error::parse(0, Some(1), "header must start with `t`"));
    }
    if cols.len() < 3 || (cols.len() - 1) % 2 != 0 {
        return Err(Error::parse(0, None, "header must list two wavelength columns per channel"));
    }
    let mut ids = Vec::new();
    for (k, pair) in cols[1..].chunks(2).enumerate() {
        let col = 2 + 2 * k;
        let id = parse_channel_column(pair[0], "wl1").ok_or_else(|| {
            Error::parse(0, Some(col), format!("expected chNN_wl1, found {:?}", pair[0]))
        })?;
        let id2 = parse_channel_column(pair[1], "wl2").ok_or_else(|| {
            Error::parse(0, Some(col + 1), format!("expected chNN_wl2, found {:?}", pair[1]))
        })?;
        if id != id2 {
            return Err(Error::parse(0, Some(col + 1), format!("channel mismatch in {:?}", pair[1])));
        }
        if id == 0 || ids.contains(&id) {
            return Err(Error::parse(0, Some(col), format!("invalid or duplicate channel {id}")));
        }
        ids.push(id);
    }
    Ok(ids)
}

fn parse_channel_column(name: &str, suffix: &str) -> Option<usize> {
    let rest = name.strip_prefix("ch")?;
    let (num, sfx) = rest.split_once('_')?;
    if sfx != suffix || num.len() < 2 || !num.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    num.parse().ok()
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Recording::from_csv_str(&text)
}

pub fn save_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &rec.to_csv_string())
}

/// Parses the optional channel sidecar (`id,wl_lo_nm,wl_hi_nm,distance_mm`).
pub fn channels_from_csv_str(text: &str) -> Result<Vec<ChannelMeta>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").trim_end_matches('\r');
    if header != "id,wl_lo_nm,wl_hi_nm,distance_mm" {
        return Err(Error::parse(0, None, "channels header must be `id,wl_lo_nm,wl_hi_nm,distance_mm`"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(Error::parse(row, None, "expected 4 columns"));
        }
        let id: usize = cells[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(row, Some(1), format!("invalid channel id {:?}", cells[0])))?;
        let meta = ChannelMeta {
            id,
            wavelength_lo_nm: parse_finite(cells[1], row, 2)?,
            wavelength_hi_nm: parse_finite(cells[2], row, 3)?,
            source_detector_distance_mm: parse_finite(cells[3], row, 4)?,
        };
        meta.validate().map_err(|e| Error::parse(row, None, e.to_string()))?;
        out.push(meta);
    }
    Ok(out)
}

pub fn channels_to_csv_string(channels: &[ChannelMeta]) -> String {
    let mut out = String::from("id,wl_lo_nm,wl_hi_nm,distance_mm\n");
    for ch in channels {
        out.push_str(&format!(
            "{},{},{},{}\n",
            ch.id,
            fmt_f64(ch.wavelength_lo_nm),
            fmt_f64(ch.wavelength_hi_nm),
            fmt_f64(ch.source_detector_distance_mm)
        ));
    }
    out
}

pub fn load_channels(path: impl AsRef<Path>) -> Result<Vec<ChannelMeta>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    channels_from_csv_str(&text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub onset_s: f64,
    pub label: Class,
}

/// Trial onsets with labels, strictly increasing in time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventList {
    events: Vec<Event>,
}

impl EventList {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        for (i, ev) in events.iter().enumerate() {
            if !(ev.onset_s >= 0.0 && ev.onset_s.is_finite()) {
                return Err(Error::parse(i + 1, Some(1), format!("onset {} must be finite and >= 0", ev.onset_s)));
            }
            if i > 0 && !(ev.onset_s > events[i - 1].onset_s) {
                return Err(Error::parse(
                    i + 1,
                    Some(1),
                    format!(
                        "onsets must be strictly increasing ({} follows {})",
                        ev.onset_s,
                        events[i - 1].onset_s
                    ),
                ));
            }
        }
        Ok(EventList { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn labels(&self) -> Vec<Class> {
        self.events.iter().map(|e| e.label).collect()
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("").trim_end_matches('\r');
        if header != "onset_s,label" {
            return Err(Error::parse(0, None, "events header must be `onset_s,label`"));
        }
        let mut events = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = i + 1;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let (onset, label) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(row, None, "expected `onset_s,label`"))?;
            let onset_s = parse_finite(onset, row, 1)?;
            let label = label
                .trim()
                .parse::<Class>()
                .map_err(|e| Error::parse(row, Some(2), e.to_string()))?;
            events.push(Event { onset_s, label });
        }
        EventList::new(events)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("onset_s,label\n");
        for ev in &self.events {
            out.push_str(&format!("{},{}\n", fmt_f64(ev.onset_s), ev.label));
        }
        out
    }
}

pub fn load_events(path: impl AsRef<Path>) -> Result<EventList> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EventList::from_csv_str(&text)
}

pub fn save_events(ev: &EventList, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &ev.to_csv_string())
}

pub const EPOCHS_FORMAT_VERSION: u32 = 1;

/// Trials × streams × samples of hemodynamic values around each onset.
///
/// Sample `j` of an epoch sits at offset `first_offset() + j` samples from
/// the onset.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub fs: f64,
    pub labels: Vec<Class>,
    pub data: Array3<f64>,
    pub stream_names: Vec<String>,
    pub epoch_window_s: (f64, f64),
}

impl EpochSet {
    pub fn new(
        fs: f64,
        labels: Vec<Class>,
        data: Array3<f64>,
        stream_names: Vec<String>,
        epoch_window_s: (f64, f64),
    ) -> Result<Self> {
        let (n_trials, n_streams, _) = data.dim();
        if labels.len() != n_trials {
            return Err(Error::Shape(format!("{} labels for {} trials", labels.len(), n_trials)));
        }
        if stream_names.len() != n_streams {
            return Err(Error::Shape(format!(
                "{} stream names for {} streams",
                stream_names.len(),
                n_streams
            )));
        }
        if !(fs > 0.0) {
            return Err(Error::Invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if !(epoch_window_s.0 < epoch_window_s.1) {
            return Err(Error::Invalid("epoch window start must precede its end".into()));
        }
        Ok(EpochSet {
            fs,
            labels,
            data,
            stream_names,
            epoch_window_s,
        })
    }

    pub fn n_trials(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_streams(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_samples(&self) -> usize {
        self.data.dim().2
    }

    /// Sample offset of the first epoch sample relative to the onset.
    pub fn first_offset(&self) -> i64 {
        ceil_tol(self.epoch_window_s.0 * self.fs)
    }

    /// Epoch sample index of the onset-relative offset `k`, if inside the epoch.
    pub fn index_of_offset(&self, k: i64) -> Option<usize> {
        let j = k - self.first_offset();
        (j >= 0 && (j as usize) < self.n_samples()).then_some(j as usize)
    }

    /// Trials selected by index, in the given order.
    pub fn select(&self, trials: &[usize]) -> EpochSet {
        let data = self.data.select(ndarray::Axis(0), trials);
        EpochSet {
            fs: self.fs,
            labels: trials.iter().map(|&i| self.labels[i]).collect(),
            data,
            stream_names: self.stream_names.clone(),
            epoch_window_s: self.epoch_window_s,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let n = self.n_samples();
        let mut out = format!(
            "#fnirs-epochs,version={},fs={},window_start={},window_end={},samples={},streams={}\n",
            EPOCHS_FORMAT_VERSION,
            fmt_f64(self.fs),
            fmt_f64(self.epoch_window_s.0),
            fmt_f64(self.epoch_window_s.1),
            n,
            self.stream_names.join(";")
        );
        out.push_str("trial,label,stream");
        for k in 0..n {
            out.push_str(&format!(",s{k}"));
        }
        out.push('\n');
        for (t, label) in self.labels.iter().enumerate() {
            for (s, name) in self.stream_names.iter().enumerate() {
                out.push_str(&format!("{t},{label},{name}"));
                for v in self.data.slice(ndarray::s![t, s, ..]) {
                    out.push(',');
                    out.push_str(&fmt_f64(*v));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let meta = lines.next().unwrap_or("").trim_end_matches('\r');
        let meta = meta
            .strip_prefix("#fnirs-epochs,")
            .ok_or_else(|| Error::Format("missing `#fnirs-epochs` metadata line".into()))?;
        let mut version = None;
        let mut fs = None;
        let mut w0 = None;
        let mut w1 = None;
        let mut n_samples = None;
        let mut streams: Option<Vec<String>> = None;
        for kv in meta.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad metadata entry {kv:?}")))?;
            let num = || v.parse::<f64>().map_err(|_| Error::Format(format!("bad metadata value {kv:?}")));
            match k {
                "version" => version = Some(v.parse::<u32>().map_err(|_| Error::Format(format!("bad version {v:?}")))?),
                "fs" => fs = Some(num()?),
                "window_start" => w0 = Some(num()?),
                "window_end" => w1 = Some(num()?),
                "samples" => n_samples = Some(v.parse::<usize>().map_err(|_| Error::Format(format!("bad sample count {v:?}")))?),
                "streams" => streams = Some(if v.is_empty() { vec![] } else { v.split(';').map(str::to_string).collect() }),
                _ => {}
            }
        }
        let version = version.ok_or_else(|| Error::Format("metadata lacks version".into()))?;
        if version != EPOCHS_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "epochs format version {version} is not supported (expected {EPOCHS_FORMAT_VERSION})"
            )));
        }
        let missing = |k: &str| Error::Format(format!("metadata lacks {k}"));
        let fs = fs.ok_or_else(|| missing("fs"))?;
        let window = (w0.ok_or_else(|| missing("window_start"))?, w1.ok_or_else(|| missing("window_end"))?);
        let n_samples = n_samples.ok_or_else(|| missing("samples"))?;
        let streams = streams.ok_or_else(|| missing("streams"))?;
        let n_streams = streams.len();

        let header = lines.next().unwrap_or("").trim_end_matches('\r');
        let mut expected_header = String::from("trial,label,stream");
        for k in 0..n_samples {
            expected_header.push_str(&format!(",s{k}"));
        }
        if header != expected_header {
            return Err(Error::parse(0, None, format!("header does not match {n_samples} samples")));
        }

        let mut labels = Vec::new();
        let mut values = Vec::new();
        let mut row = 0;
        for line in lines {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            row += 1;
            let trial = (row - 1) / n_streams.max(1);
            let stream = (row - 1) % n_streams.max(1);
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 3 + n_samples {
                return Err(Error::parse(
                    row,
                    None,
                    format!("trial row has {} samples, expected {}", cells.len().saturating_sub(3), n_samples),
                ));
            }
            if cells[0] != trial.to_string() {
                return Err(Error::parse(row, Some(1), format!("expected trial {trial}, found {:?}", cells[0])));
            }
            let label: Class = cells[1].parse().map_err(|e: Error| Error::parse(row, Some(2), e.to_string()))?;
            if stream == 0 {
                labels.push(label);
            } else if labels[trial] != label {
                return Err(Error::parse(row, Some(2), "label differs between streams of one trial"));
            }
            if n_streams == 0 || cells[2] != streams[stream] {
                return Err(Error::parse(row, Some(3), format!("unexpected stream {:?}", cells[2])));
            }
            for (j, cell) in cells[3..].iter().enumerate() {
                values.push(parse_finite(cell, row, j + 4)?);
            }
        }
        if n_streams > 0 && row % n_streams != 0 {
            return Err(Error::Format(format!("last trial is missing streams ({row} rows for {n_streams} streams)")));
        }
        let n_trials = labels.len();
        let data = Array3::from_shape_vec((n_trials, n_streams, n_samples), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        EpochSet::new(fs, labels, data, streams, window)
    }
}

pub fn save_epochs(es: &EpochSet, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &es.to_csv_string())
}

pub fn load_epochs(path: impl AsRef<Path>) -> Result<EpochSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EpochSet::from_csv_str(&text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn tiny_recording_text() -> String {
        let dt = 1.0 / 13.3;
        let mut s = String::from("t,ch01_wl1,ch01_wl2\n");
        for i in 0..3 {
            s.push_str(&format!("{},{},{}\n", i as f64 * dt, 0.1 * i as f64, -0.2 * i as f64));
        }
        s
    }

    #[test]
    fn minimal_recording() {
        let rec = Recording::from_csv_str(&tiny_recording_text()).unwrap();
        assert_eq!(rec.samples().dim(), (3, 2));
        assert!((rec.fs() - 13.3).abs() < 1e-9);
        assert_eq!(rec.channels()[0], ChannelMeta::with_defaults(1));
    }

    #[test]
    fn fs_inferred_from_rounded_steps() {
        let text = "t,ch01_wl1,ch01_wl2\n0.0,0,0\n0.0752,0,0\n0.1504,0,0\n";
        let rec = Recording::from_csv_str(text).unwrap();
        assert!((rec.fs() - 1.0 / 0.0752).abs() < 1e-9);
        assert!((rec.fs() - 13.3).abs() < 1e-3 * 13.3);
    }

    #[test]
    fn nan_reports_row() {
        let mut text = String::from("t,ch01_wl1,ch01_wl2\n");
        for i in 0..10 {
            let v = if i == 6 { "NaN".to_string() } else { "0.5".to_string() };
            text.push_str(&format!("{},{},0\n", i as f64 * 0.1, v));
        }
        let err = Recording::from_csv_str(&text).unwrap_err();
        match err {
            Error::Parse { row, col, .. } => {
                assert_eq!(row, 7);
                assert_eq!(col, Some(2));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Recording::from_csv_str(&text).unwrap_err().to_string().contains("row 7"));
    }

    #[test]
    fn rejects_bad_header_and_cells() {
        assert!(Recording::from_csv_str("time,ch01_wl1,ch01_wl2\n0,0,0\n0.1,0,0\n").is_err());
        assert!(Recording::from_csv_str("t,ch01_wl1\n0,0\n0.1,0\n").is_err());
        assert!(Recording::from_csv_str("t,ch01_wl1,ch02_wl2\n0,0,0\n0.1,0,0\n").is_err());
        let err = Recording::from_csv_str("t,ch01_wl1,ch01_wl2\n0,0,0\n0.1,abc,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, col: Some(2), .. }), "{err:?}");
    }

    #[test]
    fn rejects_non_uniform_timestamps() {
        let text = "t,ch01_wl1,ch01_wl2\n0,0,0\n0.1,0,0\n0.25,0,0\n0.3,0,0\n";
        let err = Recording::from_csv_str(text).unwrap_err();
        assert!(err.to_string().contains("uniform"), "{err}");
    }

    #[test]
    fn fs_override_tolerance() {
        let rec = Recording::from_csv_str(&tiny_recording_text()).unwrap();
        assert_eq!(rec.clone().with_fs_override(13.305).unwrap().fs(), 13.305);
        assert!(rec.with_fs_override(13.4).is_err());
    }

    #[test]
    fn recording_reprints_identically() {
        let rec = Recording::from_csv_str(&tiny_recording_text()).unwrap();
        let text = rec.to_csv_string();
        let again = Recording::from_csv_str(&text).unwrap();
        assert_eq!(again, rec);
        assert_eq!(again.to_csv_string(), text);
    }

    #[test]
    fn events_parse_and_validate() {
        let ev = EventList::from_csv_str("onset_s,label\n10.0,MA\n40.0,MI\n70.0,IS\n").unwrap();
        assert_eq!(ev.len(), 3);
        assert_eq!(ev.labels(), vec![Class::MA, Class::MI, Class::IS]);

        let err = EventList::from_csv_str("onset_s,label\n10.0,MA\n5.0,MI\n").unwrap_err();
        assert!(err.to_string().contains("strictly increasing"), "{err}");

        let err = EventList::from_csv_str("onset_s,label\n10.0,REST\n").unwrap_err();
        assert!(err.to_string().contains("MA, MI, IS"), "{err}");
    }

    #[test]
    fn channels_sidecar() {
        let text = "id,wl_lo_nm,wl_hi_nm,distance_mm\n1,760,850,30\n2,780,830,25\n";
        let chans = channels_from_csv_str(text).unwrap();
        assert_eq!(chans[1].wavelength_lo_nm, 780.0);
        assert_eq!(channels_from_csv_str(&channels_to_csv_string(&chans)).unwrap(), chans);
        assert!(channels_from_csv_str("id,wl_lo_nm,wl_hi_nm,distance_mm\n1,850,760,30\n").is_err());
    }

    fn small_epochs(n_trials: usize) -> EpochSet {
        let data = Array3::from_shape_fn((n_trials, 2, 5), |(t, s, k)| {
            (t as f64 + 1.0) * 0.1 + s as f64 * 1e-3 + (k as f64).sin() / 7.0
        });
        let labels = (0..n_trials).map(|i| Class::ALL[i % 3]).collect();
        EpochSet::new(
            10.0,
            labels,
            data,
            vec!["ch01_HbO".into(), "ch01_HbR".into()],
            (-0.2, 0.2),
        )
        .unwrap()
    }

    #[test]
    fn epochs_round_trip() {
        for n in [0, 1, 4] {
            let es = small_epochs(n);
            let back = EpochSet::from_csv_str(&es.to_csv_string()).unwrap();
            assert_eq!(back, es);
        }
    }

    #[test]
    fn epochs_structural_errors() {
        let es = small_epochs(2);
        let text = es.to_csv_string();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let short = lines[3].rsplit_once(',').unwrap().0.to_string();
        lines[3] = short;
        let err = EpochSet::from_csv_str(&lines.join("\n")).unwrap_err();
        assert!(err.to_string().contains("samples"), "{err}");

        let bumped = text.replacen("version=1", "version=2", 1);
        let err = EpochSet::from_csv_str(&bumped).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err:?}");
    }

    #[test]
    fn offsets() {
        let es = small_epochs(1);
        assert_eq!(es.first_offset(), -2);
        assert_eq!(es.index_of_offset(0), Some(2));
        assert_eq!(es.index_of_offset(3), None);
    }
}
