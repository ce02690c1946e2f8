//! Accuracy, macro precision/recall/F1, one-vs-rest AUROC and AUPRC, and
//! mean/std aggregation over repeated runs.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().find(|y| **y >= num_classes) {
        Some(&y) => Err(Error::LabelRange { label: y as i64, num_classes }),
        None => Ok(()),
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus precision, recall and F1 macro-averaged over all `num_classes`
/// classes. An empty denominator counts as 0.
pub fn classification_metrics(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<ClassificationMetrics> {
    if y_true.is_empty() {
        return Err(Error::Contract("metrics of an empty prediction set".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Contract(format!("{} labels but {} predictions", y_true.len(), y_pred.len())));
    }
    check_labels(y_true, num_classes)?;
    check_labels(y_pred, num_classes)?;
    let mut tp = vec![0usize; num_classes];
    let mut true_count = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        true_count[t] += 1;
        pred_count[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for c in 0..num_classes {
        if true_count[c] == 0 && pred_count[c] == 0 {
            log::warn!("class {c} absent from both labels and predictions; scored as 0");
        }
        let p = ratio(tp[c], pred_count[c]);
        let r = ratio(tp[c], true_count[c]);
        precision += p;
        recall += r;
        f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let k = num_classes as f64;
    Ok(ClassificationMetrics {
        accuracy: ratio(tp.iter().sum(), y_true.len()),
        precision: precision / k,
        recall: recall / k,
        f1: f1 / k,
    })
}

fn check_scores(y_true: &[usize], scores: &Tensor) -> Result<usize> {
    let shape = scores.shape();
    if shape.len() != 2 || shape[0] != y_true.len() {
        return Err(Error::dim("metrics", format!("scores {shape:?} for {} labels", y_true.len())));
    }
    if !scores.all_finite() {
        return Err(Error::Numeric("non-finite score".into()));
    }
    check_labels(y_true, shape[1])?;
    Ok(shape[1])
}

fn column(scores: &Tensor, c: usize) -> Vec<f64> {
    let k = scores.shape()[1];
    scores.data().iter().skip(c).step_by(k).copied().collect()
}

/// Mann-Whitney AUROC of one binary problem, ties counted as one half.
/// `None` when either class is empty.
pub fn binary_auroc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let p = positive.iter().filter(|x| **x).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tied runs
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    Some(u / (p * n) as f64)
}

/// Step-wise average precision `sum_k (R_k - R_{k-1}) P_k` over the unique
/// score thresholds, highest first. `None` when either class is empty.
pub fn binary_auprc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let p = positive.iter().filter(|x| **x).count();
    if p == 0 || p == positive.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / p as f64;
        ap += (recall - prev_recall) * (tp as f64 / (tp + fp) as f64);
        prev_recall = recall;
    }
    Some(ap)
}

fn macro_ovr(y_true: &[usize], scores: &Tensor, name: &str, f: fn(&[bool], &[f64]) -> Option<f64>) -> Result<f64> {
    let k = check_scores(y_true, scores)?;
    let per_class: Vec<f64> = (0..k)
        .filter_map(|c| {
            let positive: Vec<bool> = y_true.iter().map(|y| *y == c).collect();
            f(&positive, &column(scores, c))
        })
        .collect();
    if per_class.is_empty() {
        return Err(Error::DegenerateMetric(format!("{name}: no class has both positives and negatives")));
    }
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Macro one-vs-rest AUROC over the classes with both positives and negatives.
pub fn auroc_ovr(y_true: &[usize], scores: &Tensor) -> Result<f64> {
    macro_ovr(y_true, scores, "auroc", binary_auroc)
}

/// Macro one-vs-rest step-wise AUPRC.
pub fn auprc(y_true: &[usize], scores: &Tensor) -> Result<f64> {
    macro_ovr(y_true, scores, "auprc", binary_auprc)
}

/// Index of the largest score in each row; the lowest index wins ties.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let k = scores.shape()[1];
    scores
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// The six metrics of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    pub auprc: f64,
}

impl RunMetrics {
    pub const NAMES: [&'static str; 6] = ["accuracy", "precision", "recall", "f1", "auroc", "auprc"];

    pub fn values(&self) -> [f64; 6] {
        [self.accuracy, self.precision, self.recall, self.f1, self.auroc, self.auprc]
    }
}

/// All six metrics from class probabilities `[M, C]`.
pub fn evaluate(y_true: &[usize], proba: &Tensor) -> Result<RunMetrics> {
    let k = check_scores(y_true, proba)?;
    let cls = classification_metrics(y_true, &argmax_rows(proba), k)?;
    Ok(RunMetrics {
        accuracy: cls.accuracy,
        precision: cls.precision,
        recall: cls.recall,
        f1: cls.f1,
        auroc: auroc_ovr(y_true, proba)?,
        auprc: auprc(y_true, proba)?,
    })
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-seed metrics with mean and standard deviation across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    runs: Vec<(u64, RunMetrics)>,
}

impl EvalReport {
    pub fn new(runs: Vec<(u64, RunMetrics)>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Contract("a report needs at least one run".into()));
        }
        Ok(EvalReport { runs })
    }

    pub fn runs(&self) -> &[(u64, RunMetrics)] {
        &self.runs
    }

    fn column(&self, i: usize) -> Vec<f64> {
        self.runs.iter().map(|(_, m)| m.values()[i]).collect()
    }

    pub fn mean(&self) -> [f64; 6] {
        std::array::from_fn(|i| mean_std(&self.column(i)).0)
    }

    pub fn std(&self) -> [f64; 6] {
        std::array::from_fn(|i| mean_std(&self.column(i)).1)
    }

    /// `run,seed,<metrics>` with one row per seed, then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!("run,seed,{}\n", RunMetrics::NAMES.join(","));
        let row = |vals: [f64; 6]| vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        for (seed, m) in &self.runs {
            out += &format!("seed,{seed},{}\n", row(m.values()));
        }
        out += &format!("mean,,{}\n", row(self.mean()));
        out += &format!("std,,{}\n", row(self.std()));
        out
    }
}

#[cfg(test)]
mod tests;
