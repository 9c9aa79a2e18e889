//! Stratified splits, confusion matrices, accuracy and one-vs-rest ROC.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;
use crate::rng;

/// `floor(x + ½)`, tolerant of representation error just below a half.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Splits `0..labels.len()` into two stratified parts, the first holding
/// `n_first` indices. Per-class counts follow largest remainders of
/// `n_first · c_k / n` (ties to the smaller class index). Both parts are
/// returned sorted.
pub fn stratified_partition(labels: &[usize], n_first: usize, rng: &mut rng::Rng) -> (Vec<usize>, Vec<usize>) {
    let n = labels.len();
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    let quota: Vec<f64> = members.iter().map(|m| n_first as f64 * m.len() as f64 / n as f64).collect();
    let mut alloc: Vec<usize> = quota.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut left = n_first.saturating_sub(alloc.iter().sum());
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by(|&a, &b| (quota[b] - alloc[b] as f64).total_cmp(&(quota[a] - alloc[a] as f64)).then(a.cmp(&b)));
    for &k in order.iter().cycle().take(n_classes * (left + 1)) {
        if left == 0 {
            break;
        }
        if alloc[k] < members[k].len() {
            alloc[k] += 1;
            left -= 1;
        }
    }
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for (m, &a) in members.iter_mut().zip(&alloc) {
        m.shuffle(rng);
        first.extend_from_slice(&m[..a]);
        second.extend_from_slice(&m[a..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Split {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train.len(),
            val: self.val.len(),
            test: self.test.len(),
        }
    }
}

pub const DEFAULT_SPLIT_RATIOS: (f64, f64) = (0.7, 0.7);

/// Outer train/test split, then an inner train/validation split of the
/// outer training part. Totals use round-half-up of the pooled counts.
pub fn split_train_val_test(labels: &[Class], ratios: (f64, f64), seed: u64) -> Result<Split> {
    let (outer, inner) = ratios;
    if !(outer > 0.0 && outer <= 1.0 && inner > 0.0 && inner <= 1.0) {
        return Err(Error::Config(format!("split ratios {ratios:?} must lie in (0, 1]")));
    }
    for c in Class::ALL {
        let k = labels.iter().filter(|&&l| l == c).count();
        if k < 3 {
            return Err(Error::Invalid(format!("class {c} has {k} trials, at least 3 are needed")));
        }
    }
    let y: Vec<usize> = labels.iter().map(|c| c.index()).collect();
    let n = y.len();
    let n_outer = round_half_up(outer * n as f64).min(n);
    if n_outer == n {
        return Err(Error::Config("split leaves no test trials".into()));
    }
    let mut r = rng::seeded(seed);
    let (train_outer, test) = stratified_partition(&y, n_outer, &mut r);
    let n_inner = round_half_up(inner * train_outer.len() as f64).min(train_outer.len());
    if n_inner == train_outer.len() || n_inner == 0 {
        return Err(Error::Config("split leaves no validation or training trials".into()));
    }
    let yo: Vec<usize> = train_outer.iter().map(|&i| y[i]).collect();
    let (a, b) = stratified_partition(&yo, n_inner, &mut r);
    Ok(Split {
        train: a.iter().map(|&i| train_outer[i]).collect(),
        val: b.iter().map(|&i| train_outer[i]).collect(),
        test,
    })
}

/// Rows are actual classes, columns predicted, both in `MA, MI, IS` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

pub fn confusion(y_true: &[Class], y_pred: &[Class]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!("{} true labels, {} predictions", y_true.len(), y_pred.len())));
    }
    let mut counts = [[0u64; 3]; 3];
    for (t, p) in y_true.iter().zip(y_pred) {
        counts[t.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

impl ConfusionMatrix {
    pub fn from_rows(counts: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }
}

/// Correct predictions over all predictions, as `(trace, total)`.
pub fn accuracy_ratio(cm: &ConfusionMatrix) -> Result<(u64, u64)> {
    match cm.total() {
        0 => Err(Error::Invalid("accuracy of an empty confusion matrix".into())),
        t => Ok((cm.trace(), t)),
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    accuracy_ratio(cm).map(|(a, b)| a as f64 / b as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending; the first entry is `+∞` for the `(0, 0)` point.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// ROC of `scores` against boolean labels. Equal scores form one threshold
/// step, so the trapezoidal area equals the Mann–Whitney statistic with ties
/// counted as one half.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), positive.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invalid("scores must be finite".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid("ROC needs both positive and negative examples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut thresholds = vec![f64::INFINITY];
    let (mut fpr, mut tpr) = (vec![0.0], vec![0.0]);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc2 = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // exact integer area, doubled: Δfp · (tp + tp0)
        auc2 += ((fp - fp0) * (tp + tp0)) as f64;
        thresholds.push(s);
        fpr.push(fp as f64 / n_neg as f64);
        tpr.push(tp as f64 / n_pos as f64);
    }
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc: auc2 / (2.0 * n_pos as f64 * n_neg as f64),
    })
}

/// One-vs-rest ROC for `positive`, scored by its probability column.
pub fn roc_ovr(probs: &Array2<f64>, labels: &[Class], positive: Class) -> Result<RocCurve> {
    if probs.ncols() != Class::COUNT || probs.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "probabilities {}x{} for {} labels",
            probs.nrows(),
            probs.ncols(),
            labels.len()
        )));
    }
    let scores: Vec<f64> = probs.column(positive.index()).to_vec();
    let pos: Vec<bool> = labels.iter().map(|&l| l == positive).collect();
    roc_curve(&scores, &pos)
}

impl RocCurve {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for ((t, f), p) in self.thresholds.iter().zip(&self.fpr).zip(&self.tpr) {
            out.push_str(&format!("{},{},{}\n", fmt_f64(*t), fmt_f64(*f), fmt_f64(*p)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Indexed by [`Class::index`].
    pub roc: Vec<RocCurve>,
    pub n_test: usize,
    pub seed: u64,
    pub split_sizes: SplitSizes,
}

/// Argmax class per probability row; the first class wins ties.
pub fn predicted_classes(probs: &Array2<f64>) -> Vec<Class> {
    probs
        .rows()
        .into_iter()
        .map(|r| Class::from_index(crate::nn::argmax(r.iter().copied())).expect("three columns"))
        .collect()
}

pub fn eval_report(probs: &Array2<f64>, labels: &[Class], seed: u64, split_sizes: SplitSizes) -> Result<EvalReport> {
    if probs.ncols() != Class::COUNT || probs.nrows() != labels.len() {
        return Err(Error::Shape(format!("probabilities {}x{} for {} labels", probs.nrows(), probs.ncols(), labels.len())));
    }
    if probs.rows().into_iter().any(|r| r.iter().any(|v| !v.is_finite()) || (r.sum() - 1.0).abs() > 1e-6) {
        return Err(Error::Invalid("prediction rows must be finite probabilities".into()));
    }
    let cm = confusion(labels, &predicted_classes(probs))?;
    let roc = Class::ALL
        .iter()
        .map(|&c| roc_ovr(probs, labels, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        accuracy: accuracy(&cm)?,
        confusion: cm,
        roc,
        n_test: labels.len(),
        seed,
        split_sizes,
    })
}

impl EvalReport {
    pub fn auc(&self, c: Class) -> f64 {
        self.roc[c.index()].auc
    }

    /// Metrics JSON with a fixed key order and 17-digit floats.
    pub fn to_json_string(&self) -> String {
        let rows: Vec<String> = self
            .confusion
            .counts
            .iter()
            .map(|r| format!("[{}, {}, {}]", r[0], r[1], r[2]))
            .collect();
        let auc: Vec<String> = Class::ALL
            .iter()
            .map(|&c| format!("\"{}\": {}", c, fmt_f64(self.auc(c))))
            .collect();
        format!(
            "{{\n  \"accuracy\": {},\n  \"confusion\": [{}],\n  \"auc\": {{{}}},\n  \"n_test\": {},\n  \"seed\": {},\n  \"split_sizes\": {{\"train\": {}, \"val\": {}, \"test\": {}}}\n}}\n",
            fmt_f64(self.accuracy),
            rows.join(", "),
            auc.join(", "),
            self.n_test,
            self.seed,
            self.split_sizes.train,
            self.split_sizes.val,
            self.split_sizes.test
        )
    }
}
