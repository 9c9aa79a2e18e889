//! Versioned model file: a magic line, a SHA-256 line, then a JSON payload.
//!
//! ```text
//! FNIRSBCI 1
//! sha256 <hex digest of the payload bytes>
//! {...}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fnirs_bci::classifiers::{AnnModel, Classifier, LinearModel, SldaModel};
use fnirs_bci::dimred::{IcaModel, KpcaModel};
use fnirs_bci::eval::Split;
use fnirs_bci::features::Standardizer;
use fnirs_bci::nn::{ModelSpec, ParamStore, TrainConfig};

use crate::config::Pipeline;
use crate::error::{CliError, CliResult, Stage};

pub const MAGIC: &str = "FNIRSBCI";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum Reduction {
    Ica(IcaModel),
    Standardize { scaler: Standardizer },
    Kpca { scaler: Standardizer, kpca: KpcaModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum ClassifierModel {
    Bilstm { spec: ModelSpec, params: ParamStore, train: TrainConfig },
    Slda(SldaModel),
    Logreg(LinearModel),
    Svm(LinearModel),
    Ann(AnnModel),
}

impl ClassifierModel {
    /// Class probabilities for flat feature rows. SVM margins go through a
    /// softmax so that every classifier yields probability rows.
    pub fn probabilities(&self, x: &Array2<f64>) -> fnirs_bci::Result<Array2<f64>> {
        match self {
            ClassifierModel::Slda(m) => m.linear.probabilities(x),
            ClassifierModel::Logreg(m) | ClassifierModel::Svm(m) => m.probabilities(x),
            ClassifierModel::Ann(m) => m.scores(x),
            ClassifierModel::Bilstm { .. } => Err(fnirs_bci::Error::Invalid(
                "the recurrent classifier takes epoch sequences, not feature rows".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub config: BTreeMap<String, String>,
    pub pipeline: Pipeline,
    pub seed: u64,
    /// SHA-256 of the data file the model was trained on.
    pub data_fingerprint: String,
    pub split: Split,
    pub reduction: Reduction,
    pub classifier: ClassifierModel,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialized container text and its payload checksum.
pub fn encode(payload: &Payload) -> CliResult<(String, String)> {
    let body = serde_json::to_string(payload).stage("container")?;
    let sum = sha256_hex(body.as_bytes());
    Ok((format!("{MAGIC} {FORMAT_VERSION}\nsha256 {sum}\n{body}\n"), sum))
}

pub fn decode(text: &str) -> CliResult<Payload> {
    let err = |m: String| CliError::new("container", m);
    let mut parts = text.splitn(3, '\n');
    let head = parts.next().unwrap_or("");
    let (magic, version) = head.split_once(' ').unwrap_or((head, ""));
    if magic != MAGIC {
        return Err(err("not a model container (bad magic)".into()));
    }
    let version: u32 = version.trim().parse().map_err(|_| err(format!("bad version field {version:?}")))?;
    if version != FORMAT_VERSION {
        return Err(err(format!("unsupported container version {version} (expected {FORMAT_VERSION})")));
    }
    let sum_line = parts.next().unwrap_or("");
    let expected = sum_line
        .strip_prefix("sha256 ")
        .ok_or_else(|| err("missing checksum line".into()))?
        .trim();
    let body = parts.next().unwrap_or("").strip_suffix('\n').unwrap_or_default();
    if sha256_hex(body.as_bytes()) != expected {
        return Err(err("checksum mismatch; the file is corrupt or was edited".into()));
    }
    serde_json::from_str(body).map_err(|e| err(format!("payload: {e}")))
}

pub fn load(path: &Path) -> CliResult<Payload> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::new("container", format!("{}: {e}", path.display())))?;
    decode(&text)
}
