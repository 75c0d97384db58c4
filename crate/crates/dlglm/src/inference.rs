//! Post-training inference: self-normalized importance imputation of
//! missing covariates, response prediction that integrates over them, and
//! a classical mean-imputation baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::bounds::{batch_from, weighted_samples};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::glm::{irls_fit, least_squares, Family};
use crate::model::DlglmModel;

/// Imputed covariates for a row subset, on the model's standardized scale.
pub struct ImputationResult {
    pub rows: Vec<usize>,
    /// [rows.len(), p_cols]; observed entries are passed through.
    pub x_imputed: Vec<f64>,
    /// Effective sample size of the weights per row, in [1, k].
    pub ess: Vec<f64>,
}

fn normalized_weights(log_w: &[f64], b: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut w = vec![0.0; b * k];
    let mut ess = vec![0.0; b];
    for i in 0..b {
        let row = &log_w[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..k {
            let e = (row[j] - m).exp();
            w[i * k + j] = e;
            total += e;
        }
        let mut sq = 0.0;
        for j in 0..k {
            w[i * k + j] /= total;
            sq += w[i * k + j] * w[i * k + j];
        }
        ess[i] = 1.0 / sq;
    }
    (w, ess)
}

/// Impute the missing entries of the selected rows: draw `k` proposals per
/// row, weight them by the full model (response and, for non-ignorable
/// methods, mask factors included), and average. Continuous entries get the
/// weighted mean; categorical blocks the highest-probability class.
pub fn impute(
    model: &DlglmModel,
    ds: &Dataset,
    rows: &[usize],
    k: usize,
    seed: u64,
) -> Result<ImputationResult> {
    if rows.is_empty() {
        return Err(Error::Inference("no rows to impute".into()));
    }
    let schema = &model.schema;
    let p = schema.p_cols;
    let batch = batch_from(ds, &schema.missing_blocks, rows);
    let mut x_imputed = batch.x.clone();
    if !model.has_imputer() {
        return Ok(ImputationResult { rows: rows.to_vec(), x_imputed, ess: vec![k as f64; rows.len()] });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ws = weighted_samples(model, &batch, k, false, true, &mut rng)?;
    let log_w = ws.log_w.to_vec();
    let (w, ess) = normalized_weights(&log_w, batch.b, k);
    let xm = ws.x_mixed.to_vec();

    for (i, &row) in rows.iter().enumerate() {
        for (t, &blk) in schema.missing_blocks.iter().enumerate() {
            if batch.mask_blocks[i * schema.missing_blocks.len() + t] == 1.0 {
                continue;
            }
            let block = &schema.blocks[blk];
            let width = block.width();
            let mut acc = vec![0.0; width];
            for j in 0..k {
                let flat = (i * k + j) * p + block.col_start;
                for c in 0..width {
                    acc[c] += w[i * k + j] * xm[flat + c];
                }
            }
            if block.is_continuous() {
                x_imputed[i * p + block.col_start] = acc[0];
            } else {
                let best = acc
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(c, _)| c)
                    .unwrap();
                for c in 0..width {
                    x_imputed[i * p + block.col_start + c] = f64::from(c == best);
                }
            }
            let _ = row;
        }
    }
    Ok(ImputationResult { rows: rows.to_vec(), x_imputed, ess })
}

/// Predicted responses for a row subset.
pub struct PredictionResult {
    pub rows: Vec<usize>,
    /// Response scale: class-1 probability (Bernoulli), mean (Gaussian), or
    /// class index (categorical).
    pub y_pred: Vec<f64>,
    /// Per-class probabilities for discrete families.
    pub y_prob: Option<Vec<Vec<f64>>>,
    pub ess: Vec<f64>,
}

/// Predict without using the response: proposals are weighted by the
/// covariate-model factors only, and the per-draw response means are
/// averaged on the probability scale. Rows with nothing missing reduce to
/// plugging the observed covariates into the response model.
pub fn predict(
    model: &DlglmModel,
    ds: &Dataset,
    rows: &[usize],
    k: usize,
    seed: u64,
) -> Result<PredictionResult> {
    if rows.is_empty() {
        return Err(Error::Inference("no rows to predict".into()));
    }
    let schema = &model.schema;
    let batch = batch_from(ds, &schema.missing_blocks, rows);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ws = weighted_samples(model, &batch, k, false, false, &mut rng)?;
    let log_w = ws.log_w.to_vec();
    let (w, ess) = normalized_weights(&log_w, batch.b, k);
    let eta = ws.eta.to_vec();
    let ew = schema.eta_width;
    let family = model.config.family;

    let mut y_pred = Vec::with_capacity(rows.len());
    let mut y_prob: Option<Vec<Vec<f64>>> = if family.is_discrete() { Some(Vec::new()) } else { None };
    for i in 0..batch.b {
        let mut mean = vec![0.0; family.eta_width().max(1)];
        for j in 0..k {
            let e = &eta[(i * k + j) * ew..(i * k + j + 1) * ew];
            let m = family.inv_link(e);
            for (c, &v) in m.iter().enumerate() {
                mean[c] += w[i * k + j] * v;
            }
        }
        match family {
            Family::Gaussian => y_pred.push(mean[0]),
            Family::Bernoulli => {
                y_pred.push(mean[0]);
                y_prob.as_mut().unwrap().push(vec![1.0 - mean[0], mean[0]]);
            }
            Family::Categorical { .. } => {
                let best = mean
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(c, _)| c)
                    .unwrap();
                y_pred.push(best as f64);
                y_prob.as_mut().unwrap().push(mean.clone());
            }
        }
    }
    Ok(PredictionResult { rows: rows.to_vec(), y_pred, y_prob, ess })
}

/// Classical baseline: keep the mean-imputed covariates (zeros on the
/// standardized scale) and fit the matching generalized linear model on the
/// training rows.
pub struct BaselineFit {
    /// Data-scale intercept, one per linear-predictor column.
    pub intercept: Vec<f64>,
    /// Data-scale coefficients, [eta_width][p_cols].
    pub coef: Vec<Vec<f64>>,
    pub rows: Vec<usize>,
    pub y_pred: Vec<f64>,
    pub y_prob: Option<Vec<Vec<f64>>>,
}

fn unstandardize_fit(ds: &Dataset, intercept: f64, coef: &[f64]) -> (f64, Vec<f64>) {
    match &ds.standardization {
        None => (intercept, coef.to_vec()),
        Some(st) => {
            let mut b0 = intercept;
            let mut out = vec![0.0; coef.len()];
            for j in 0..coef.len() {
                out[j] = coef[j] / st.sd[j];
                b0 -= coef[j] * st.mean[j] / st.sd[j];
            }
            (b0, out)
        }
    }
}

/// Fit on the training split, predict the given rows. Bernoulli uses
/// iteratively reweighted least squares, Gaussian ordinary least squares,
/// and categorical one-vs-rest logistic fits with normalized class
/// probabilities.
pub fn mean_impute_fit_predict(ds: &Dataset, pred_rows: &[usize]) -> Result<BaselineFit> {
    let train_rows = ds.rows_in(Split::Train);
    if train_rows.is_empty() {
        return Err(Error::Inference("baseline needs training rows".into()));
    }
    let p = ds.p_cols;
    let xtr: Vec<f64> = train_rows.iter().flat_map(|&i| ds.x_row(i).to_vec()).collect();
    let ytr: Vec<f64> = train_rows.iter().map(|&i| ds.y[i]).collect();
    let xpr: Vec<f64> = pred_rows.iter().flat_map(|&i| ds.x_row(i).to_vec()).collect();
    let npr = pred_rows.len();

    let eta_at = |b0: f64, cf: &[f64], xrow: &[f64]| -> f64 {
        b0 + cf.iter().zip(xrow).map(|(c, x)| c * x).sum::<f64>()
    };

    match ds.family {
        Family::Gaussian => {
            let fit = least_squares(&xtr, train_rows.len(), p, &ytr)?;
            let (b0, cf) = unstandardize_fit(ds, fit.intercept, &fit.coef);
            let y_pred: Vec<f64> =
                (0..npr).map(|i| eta_at(fit.intercept, &fit.coef, &xpr[i * p..(i + 1) * p])).collect();
            Ok(BaselineFit {
                intercept: vec![b0],
                coef: vec![cf],
                rows: pred_rows.to_vec(),
                y_pred,
                y_prob: None,
            })
        }
        Family::Bernoulli => {
            let fit = irls_fit(&xtr, train_rows.len(), p, &ytr, 100, 1e-10)?;
            let (b0, cf) = unstandardize_fit(ds, fit.intercept, &fit.coef);
            let mut y_pred = Vec::with_capacity(npr);
            let mut y_prob = Vec::with_capacity(npr);
            for i in 0..npr {
                let pr = crate::tensor::sigmoid(eta_at(fit.intercept, &fit.coef, &xpr[i * p..(i + 1) * p]));
                y_pred.push(pr);
                y_prob.push(vec![1.0 - pr, pr]);
            }
            Ok(BaselineFit {
                intercept: vec![b0],
                coef: vec![cf],
                rows: pred_rows.to_vec(),
                y_pred,
                y_prob: Some(y_prob),
            })
        }
        Family::Categorical { classes } => {
            let mut intercept = Vec::with_capacity(classes);
            let mut coef = Vec::with_capacity(classes);
            let mut fits = Vec::with_capacity(classes);
            for c in 0..classes {
                let yc: Vec<f64> = ytr.iter().map(|&y| f64::from(y as usize == c)).collect();
                let fit = irls_fit(&xtr, train_rows.len(), p, &yc, 100, 1e-10)?;
                let (b0, cf) = unstandardize_fit(ds, fit.intercept, &fit.coef);
                intercept.push(b0);
                coef.push(cf);
                fits.push(fit);
            }
            let mut y_pred = Vec::with_capacity(npr);
            let mut y_prob = Vec::with_capacity(npr);
            for i in 0..npr {
                let xrow = &xpr[i * p..(i + 1) * p];
                let mut probs: Vec<f64> = fits
                    .iter()
                    .map(|f| crate::tensor::sigmoid(eta_at(f.intercept, &f.coef, xrow)))
                    .collect();
                let total: f64 = probs.iter().sum();
                for v in probs.iter_mut() {
                    *v /= total;
                }
                let best = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(c, _)| c)
                    .unwrap();
                y_pred.push(best as f64);
                y_prob.push(probs);
            }
            Ok(BaselineFit {
                intercept,
                coef,
                rows: pred_rows.to_vec(),
                y_pred,
                y_prob: Some(y_prob),
            })
        }
    }
}
