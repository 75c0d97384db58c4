//! Evaluation metrics: masked imputation error, coefficient percent bias,
//! prediction error, and binary/multiclass classification scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean absolute error over the entries marked for scoring.
pub fn mean_abs_error_masked(truth: &[f64], est: &[f64], include: &[bool]) -> Result<f64> {
    if truth.len() != est.len() || truth.len() != include.len() {
        return Err(Error::Metric("mean_abs_error_masked length mismatch".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..truth.len() {
        if include[i] {
            total += (truth[i] - est[i]).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Metric("no entries to score".into()));
    }
    Ok(total / count as f64)
}

pub fn mean_abs_error(truth: &[f64], est: &[f64]) -> Result<f64> {
    mean_abs_error_masked(truth, est, &vec![true; truth.len()])
}

/// Average percent bias of coefficient estimates:
/// 100 * mean_j |beta_j - est_j| / |beta_j|. The intercept is excluded by
/// convention; pass coefficient vectors only.
pub fn percent_bias(beta: &[f64], est: &[f64]) -> Result<f64> {
    if beta.len() != est.len() {
        return Err(Error::Metric("percent_bias length mismatch".into()));
    }
    if beta.is_empty() {
        return Err(Error::Metric("percent_bias needs at least one coefficient".into()));
    }
    let mut total = 0.0;
    for j in 0..beta.len() {
        if beta[j] == 0.0 {
            return Err(Error::Metric(format!("true coefficient {} is zero; percent bias undefined", j)));
        }
        total += (beta[j] - est[j]).abs() / beta[j].abs();
    }
    Ok(100.0 * total / beta.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Counts with class 1 as positive; inputs are 0/1 class labels.
pub fn confusion_binary(y_true: &[f64], y_pred: &[f64]) -> Result<ConfusionCounts> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Metric("confusion_binary needs matching nonempty inputs".into()));
    }
    let mut c = ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t != 0.0 && t != 1.0 || p != 0.0 && p != 1.0 {
            return Err(Error::Metric("confusion_binary labels must be 0/1".into()));
        }
        match (t == 1.0, p == 1.0) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Class labels from probabilities at the 0.5 threshold; a tie goes to the
/// lower class.
pub fn classify_binary(probs: &[f64]) -> Vec<f64> {
    probs.iter().map(|&p| f64::from(p > 0.5)).collect()
}

pub fn accuracy(c: &ConfusionCounts) -> f64 {
    let n = c.tp + c.fp + c.tn + c.fn_;
    (c.tp + c.tn) as f64 / n as f64
}

/// Positive predictive value. The conventional definition is
/// TP / (TP + FP); `literal_denominator` swaps FP for TN, matching a
/// variant sometimes seen in print, and is off by default.
pub fn ppv(c: &ConfusionCounts, literal_denominator: bool) -> Result<f64> {
    let denom = if literal_denominator { c.tp + c.tn } else { c.tp + c.fp };
    if denom == 0 {
        return Err(Error::Metric("ppv denominator is zero".into()));
    }
    Ok(c.tp as f64 / denom as f64)
}

pub fn f1(c: &ConfusionCounts) -> Result<f64> {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Err(Error::Metric("f1 denominator is zero".into()));
    }
    Ok(2.0 * c.tp as f64 / denom as f64)
}

/// Cohen's kappa for a C x C confusion matrix (rows = truth, columns =
/// prediction): (observed agreement - chance agreement) / (1 - chance).
pub fn cohens_kappa(confusion: &[Vec<usize>]) -> Result<f64> {
    let c = confusion.len();
    if c < 2 || confusion.iter().any(|row| row.len() != c) {
        return Err(Error::Metric("cohens_kappa needs a square matrix of size >= 2".into()));
    }
    let n: usize = confusion.iter().flatten().sum();
    if n == 0 {
        return Err(Error::Metric("cohens_kappa needs at least one observation".into()));
    }
    let nf = n as f64;
    let po: f64 = (0..c).map(|i| confusion[i][i] as f64).sum::<f64>() / nf;
    let mut pe = 0.0;
    for i in 0..c {
        let row: usize = confusion[i].iter().sum();
        let col: usize = (0..c).map(|r| confusion[r][i]).sum();
        pe += (row as f64 / nf) * (col as f64 / nf);
    }
    if (1.0 - pe).abs() < 1e-15 {
        return Err(Error::Metric("cohens_kappa undefined: chance agreement is 1".into()));
    }
    Ok((po - pe) / (1.0 - pe))
}

pub fn confusion_matrix(y_true: &[f64], y_pred: &[f64], classes: usize) -> Result<Vec<Vec<usize>>> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Metric("confusion_matrix needs matching nonempty inputs".into()));
    }
    let mut m = vec![vec![0usize; classes]; classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let (ti, pi) = (t as usize, p as usize);
        if t.fract() != 0.0 || p.fract() != 0.0 || ti >= classes || pi >= classes {
            return Err(Error::Metric("confusion_matrix labels out of range".into()));
        }
        m[ti][pi] += 1;
    }
    Ok(m)
}

/// Area under the ROC curve by the rank statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counted half.
pub fn auc(y_true: &[f64], scores: &[f64]) -> Result<f64> {
    if y_true.len() != scores.len() || y_true.is_empty() {
        return Err(Error::Metric("auc needs matching nonempty inputs".into()));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&t, &s) in y_true.iter().zip(scores) {
        if !s.is_finite() {
            return Err(Error::Metric("auc scores must be finite".into()));
        }
        match t {
            t if t == 1.0 => pos.push(s),
            t if t == 0.0 => neg.push(s),
            _ => return Err(Error::Metric("auc labels must be 0/1".into())),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Metric("auc needs both classes present".into()));
    }
    let mut total = 0.0;
    for &p in &pos {
        for &n in &neg {
            total += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(total / (pos.len() * neg.len()) as f64)
}

/// Everything one experiment run reports. Field order is fixed so the
/// serialized form is byte-stable for identical inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub mechanism: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub best_valid_bound: Option<f64>,
    pub imputation_l1: Option<f64>,
    pub percent_bias: Option<f64>,
    pub pred_l1_complete: Option<f64>,
    pub pred_l1_incomplete: Option<f64>,
    pub accuracy: Option<f64>,
    pub kappa: Option<f64>,
    pub auc: Option<f64>,
    pub ppv: Option<f64>,
    pub f1: Option<f64>,
    pub ess_mean: Option<f64>,
    pub epochs_run: Option<usize>,
    pub param_count: Option<usize>,
}

impl MetricsReport {
    pub fn new(method: &str, mechanism: &str, seed: u64) -> Self {
        MetricsReport {
            method: method.to_string(),
            mechanism: mechanism.to_string(),
            seed,
            n_train: 0,
            n_valid: 0,
            n_test: 0,
            best_valid_bound: None,
            imputation_l1: None,
            percent_bias: None,
            pred_l1_complete: None,
            pred_l1_incomplete: None,
            accuracy: None,
            kappa: None,
            auc: None,
            ppv: None,
            f1: None,
            ess_mean: None,
            epochs_run: None,
            param_count: None,
        }
    }
}
