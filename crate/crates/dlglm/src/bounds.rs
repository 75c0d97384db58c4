//! Importance-weighted variational bounds.
//!
//! One sampling pass produces per-row, per-draw log importance weights that
//! serve three consumers: the training objective (log-mean-exp over draws),
//! self-normalized imputation, and prediction. The weight of draw k for row
//! i collects
//!
//!   log p(y_i | x_mix)            response model (skipped when y is unknown)
//! + log p(x_mix | z or psi)       covariate model
//! + log p(z)                      latent prior (latent methods)
//! + log p(r_i | x_mix, y_i)       missingness model (non-ignorable, with y)
//! - log q(z | x_tilde)            encoder (latent methods)
//! - log q(x_m | ...)              imputer proposal, missing entries only
//!
//! where x_mix splices proposal draws into the missing entries of the
//! preimputed row x_tilde.

use rand_chacha::ChaCha20Rng;

use crate::data::{Dataset, Split};
use crate::distributions::{
    categorical_logpmf_t, gaussian_logpdf_t, gaussian_rsample_t, gumbel_softmax_logpdf_t,
    gumbel_softmax_sample_t, sample_gumbel, standard_normal_vec,
};
use crate::error::{Error, Result};
use crate::glm::y_loglik_t;
use crate::model::{gather_cols, y_input_matrix, DlglmModel};
use crate::tensor::Tensor;

/// Plain-data view of a row subset, laid out for the sampler.
pub struct BatchData {
    pub b: usize,
    /// [b, p_cols] preimputed covariates.
    pub x: Vec<f64>,
    /// [b, m] observation indicators over the schema's missing blocks.
    pub mask_blocks: Vec<f64>,
    /// [b, y_width] response as network input.
    pub y_in: Vec<f64>,
    /// [b] raw response values.
    pub y: Vec<f64>,
}

pub fn batch_from(ds: &Dataset, missing_blocks: &[usize], rows: &[usize]) -> BatchData {
    let b = rows.len();
    let p = ds.p_cols;
    let mut x = Vec::with_capacity(b * p);
    let mut mask_blocks = Vec::with_capacity(b * missing_blocks.len());
    let mut y = Vec::with_capacity(b);
    for &i in rows {
        x.extend_from_slice(ds.x_row(i));
        for &blk in missing_blocks {
            mask_blocks.push(ds.mask.value(i, blk));
        }
        y.push(ds.y[i]);
    }
    let y_in = y_input_matrix(ds.family, &ds.y, rows);
    BatchData { b, x, mask_blocks, y_in, y }
}

pub fn train_batch(ds: &Dataset, missing_blocks: &[usize]) -> BatchData {
    batch_from(ds, missing_blocks, &ds.rows_in(Split::Train))
}

/// Log weights and the mixed covariate draws behind them.
pub struct WeightedSamples {
    /// [b, k] log importance weights.
    pub log_w: Tensor,
    /// [b*k, p_cols] covariates with proposal draws spliced in.
    pub x_mixed: Tensor,
    /// [b*k, eta_width] response-model linear predictor at x_mixed.
    pub eta: Tensor,
    pub k: usize,
}

fn repeat_data(vals: &[f64], rows: usize, cols: usize, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * k * cols);
    for i in 0..rows {
        for _ in 0..k {
            out.extend_from_slice(&vals[i * cols..(i + 1) * cols]);
        }
    }
    out
}

/// Run the sampler: draw `k` proposals per row and score every weight term.
/// `train_mode` selects relaxed categorical draws (with their density) over
/// exact ones; `include_y` gates every use of the response, so prediction
/// can run the same pass on rows whose y is unknown.
pub fn weighted_samples(
    model: &DlglmModel,
    batch: &BatchData,
    k: usize,
    train_mode: bool,
    include_y: bool,
    rng: &mut ChaCha20Rng,
) -> Result<WeightedSamples> {
    if k == 0 {
        return Err(Error::Train("need at least one importance draw".into()));
    }
    if batch.b == 0 {
        return Err(Error::Train("empty batch".into()));
    }
    let schema = &model.schema;
    let (b, p) = (batch.b, schema.p_cols);
    let n = b * k;
    let m = schema.n_missing_blocks();
    if batch.x.len() != b * p || batch.mask_blocks.len() != b * m {
        return Err(Error::Shape("batch data does not match the model schema".into()));
    }

    let x_t = Tensor::matrix(b, p, batch.x.clone())?;
    let x_rep = Tensor::matrix(n, p, repeat_data(&batch.x, b, p, k))?;
    let y_w = schema.y_width;
    let y_in_vals = if include_y { batch.y_in.clone() } else { vec![0.0; b * y_w] };
    let y_in_rep = Tensor::matrix(n, y_w, repeat_data(&y_in_vals, b, y_w, k))?;
    let r_blocks_rep = if m > 0 {
        Some(Tensor::matrix(n, m, repeat_data(&batch.mask_blocks, b, m, k))?)
    } else {
        None
    };

    let mut terms: Vec<Tensor> = Vec::new();

    // Latent pipeline: encode the preimputed row, draw z, score prior and
    // posterior.
    let z = if model.config.method.latent() {
        let dz = model.config.dz;
        let (mu_z, logsig_z) = model.encode(&x_t)?;
        let mu_rep = mu_z.repeat_rows(k);
        let logsig_rep = logsig_z.repeat_rows(k);
        let eps = Tensor::matrix(n, dz, standard_normal_vec(n * dz, rng))?;
        let z = gaussian_rsample_t(&mu_rep, &logsig_rep, &eps)?;
        let zero = Tensor::matrix(1, dz, vec![0.0; dz])?;
        terms.push(gaussian_logpdf_t(&z, &zero, &zero)?.sum_cols());
        terms.push(gaussian_logpdf_t(&z, &mu_rep, &logsig_rep)?.sum_cols().neg());
        Some(z)
    } else {
        None
    };

    // Proposal over missing entries, spliced into x_mixed.
    let x_mixed = if model.has_imputer() {
        let mut parts: Vec<Tensor> = Vec::new();
        if let Some(z) = &z {
            parts.push(z.clone());
        }
        parts.push(x_rep.clone());
        if model.config.method.non_ignorable() {
            parts.push(r_blocks_rep.clone().expect("missing blocks exist"));
        }
        if model.config.include_y_in_imputer {
            parts.push(y_in_rep.clone());
        }
        let proposal = model.imputer(&Tensor::concat_cols(&parts)?)?;

        // Continuous draws and their density on unobserved entries.
        let mut cont_sample = None;
        if let Some(mu_q) = &proposal.mu {
            let logsig_q = proposal.logsig.as_ref().expect("paired heads");
            let w = mu_q.cols();
            let eps = Tensor::matrix(n, w, standard_normal_vec(n * w, rng))?;
            let xm = gaussian_rsample_t(mu_q, logsig_q, &eps)?;
            // 1 - r per proposal column, from its block's indicator.
            let mut holes = vec![0.0; n * w];
            for row in 0..n {
                for (c, &blk) in proposal.cont_blocks.iter().enumerate() {
                    let t = schema.missing_blocks.iter().position(|&x| x == blk).unwrap();
                    let r = batch.mask_blocks[(row / k) * m + t];
                    holes[row * w + c] = 1.0 - r;
                }
            }
            let holes_t = Tensor::matrix(n, w, holes)?;
            let dens = gaussian_logpdf_t(&xm, mu_q, logsig_q)?.mul(&holes_t)?.sum_cols();
            terms.push(dens.neg());
            cont_sample = Some((xm, holes_t));
        }

        // Categorical draws: relaxed in training, exact otherwise.
        let mut cat_samples: std::collections::BTreeMap<usize, Tensor> =
            std::collections::BTreeMap::new();
        for (&blk, logits) in &proposal.cat {
            let classes = logits.cols();
            let t = schema.missing_blocks.iter().position(|&x| x == blk).unwrap();
            let mut hole = vec![0.0; n];
            for row in 0..n {
                hole[row] = 1.0 - batch.mask_blocks[(row / k) * m + t];
            }
            let hole_t = Tensor::matrix(n, 1, hole)?;
            let (sample, dens) = if train_mode {
                let g: Vec<f64> = (0..n * classes).map(|_| sample_gumbel(rng)).collect();
                let g_t = Tensor::matrix(n, classes, g)?;
                let s = gumbel_softmax_sample_t(logits, &g_t, model.config.tau)?;
                let d = gumbel_softmax_logpdf_t(&s, logits, model.config.tau)?;
                (s, d)
            } else {
                let probs = logits.softmax_cols()?;
                let pdata = probs.to_vec();
                let mut onehot = vec![0.0; n * classes];
                for row in 0..n {
                    let u: f64 = rand::Rng::gen(rng);
                    let mut acc = 0.0;
                    let mut pick = classes - 1;
                    for c in 0..classes {
                        acc += pdata[row * classes + c];
                        if u < acc {
                            pick = c;
                            break;
                        }
                    }
                    onehot[row * classes + pick] = 1.0;
                }
                let s = Tensor::matrix(n, classes, onehot)?;
                let d = categorical_logpmf_t(&s, logits)?;
                (s, d)
            };
            terms.push(dens.mul(&hole_t)?.neg());
            cat_samples.insert(blk, sample);
        }

        // Splice: observed entries stay, missing entries take the draw.
        let mut cont_idx = 0usize;
        let mut blocks_out: Vec<Tensor> = Vec::new();
        for (bi, block) in schema.blocks.iter().enumerate() {
            let x_block = x_rep.narrow_cols(block.col_start, block.width())?;
            match schema.missing_blocks.iter().position(|&x| x == bi) {
                None => blocks_out.push(x_block),
                Some(t) => {
                    let width = block.width();
                    let sampled = if block.is_continuous() {
                        let (xm, _) = cont_sample.as_ref().expect("continuous head exists");
                        let s = xm.narrow_cols(cont_idx, 1)?;
                        cont_idx += 1;
                        s
                    } else {
                        cat_samples[&bi].clone()
                    };
                    let mut hole = vec![0.0; n * width];
                    for row in 0..n {
                        let r = batch.mask_blocks[(row / k) * m + t];
                        for c in 0..width {
                            hole[row * width + c] = 1.0 - r;
                        }
                    }
                    let hole_t = Tensor::matrix(n, width, hole)?;
                    blocks_out.push(x_block.add(&sampled.mul(&hole_t)?)?);
                }
            }
        }
        Tensor::concat_cols(&blocks_out)?
    } else {
        x_rep.clone()
    };

    // Covariate model at the mixed draws.
    if model.config.method.latent() {
        let dec = model.decode(z.as_ref().expect("latent method"))?;
        if let Some(mu) = &dec.mu {
            let logsig = dec.logsig.as_ref().expect("paired heads");
            let x_cont = gather_cols(&x_mixed, &dec.cont_cols)?;
            terms.push(gaussian_logpdf_t(&x_cont, mu, logsig)?.sum_cols());
        }
        for (&blk, logits) in &dec.cat {
            let block = &schema.blocks[blk];
            let x_block = x_mixed.narrow_cols(block.col_start, block.width())?;
            terms.push(categorical_logpmf_t(&x_block, logits)?);
        }
    } else {
        let (psi_mu, psi_logsig) = model.psi()?;
        terms.push(gaussian_logpdf_t(&x_mixed, &psi_mu, &psi_logsig)?.sum_cols());
    }

    // Response model.
    let eta = model.glm_eta(&x_mixed)?;
    if include_y {
        let y_t = Tensor::matrix(n, y_w, repeat_data(&batch.y_in, b, y_w, k))?;
        terms.push(y_loglik_t(model.config.family, &y_t, &eta, model.log_alpha().as_ref())?);
    }

    // Missingness model.
    if include_y && model.config.method.non_ignorable() && m > 0 {
        let r_t = r_blocks_rep.expect("missing blocks exist");
        let logits = model.miss_logits(&x_mixed, &y_in_rep)?;
        terms.push(crate::distributions::bernoulli_logpmf_t(&r_t, &logits)?.sum_cols());
    }

    let mut log_w_flat = terms.pop().expect("at least one term");
    for t in &terms {
        log_w_flat = log_w_flat.add(t)?;
    }
    let log_w = log_w_flat.reshape(b, k)?;
    Ok(WeightedSamples { log_w, x_mixed, eta, k })
}

/// Importance-weighted bound from per-draw log weights:
/// sum over rows of log mean_k exp(log_w). Errors on non-finite weights.
pub fn iwae_from_log_w(log_w: &Tensor) -> Result<Tensor> {
    let k = log_w.cols();
    {
        let d = log_w.data();
        if let Some(idx) = d.iter().position(|v| !v.is_finite()) {
            return Err(Error::Train(format!(
                "non-finite log-weight at batch row {} draw {}",
                idx / k,
                idx % k
            )));
        }
    }
    log_w.log_sum_exp_cols()?.add_scalar(-(k as f64).ln()).sum_all().add(&Tensor::scalar(0.0))
}

/// Training objective for one batch: the bound summed over its rows, with y
/// and (for non-ignorable methods) the mask factors included.
pub fn compute_bound(
    model: &DlglmModel,
    batch: &BatchData,
    k: usize,
    train_mode: bool,
    rng: &mut ChaCha20Rng,
) -> Result<(Tensor, WeightedSamples)> {
    let ws = weighted_samples(model, batch, k, train_mode, true, rng)?;
    let bound = iwae_from_log_w(&ws.log_w)?;
    Ok((bound, ws))
}
