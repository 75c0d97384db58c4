//! Building-block densities and reparameterized samplers.
//!
//! Each density exists twice: a plain-float form (also the oracle used in
//! tests) and a tensor-graph form (`*_t`) that participates in gradients.
//! Network heads emit log standard deviations; `LOG_SIGMA_LO/HI` bound them
//! before exponentiation so variances can neither collapse nor explode.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LOG_SIGMA_LO: f64 = -10.0;
pub const LOG_SIGMA_HI: f64 = 10.0;

const LN_2PI: f64 = 1.8378770664093453;

/// Independent Gaussian coordinates with per-coordinate mean and sd.
#[derive(Debug, Clone)]
pub struct DiagGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::InvalidArgument(format!(
                "mu has {} coordinates, sigma has {}",
                mu.len(),
                sigma.len()
            )));
        }
        if sigma.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidArgument("sigma entries must be finite and positive".into()));
        }
        Ok(DiagGaussian { mu, sigma })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian { mu: vec![0.0; dim], sigma: vec![1.0; dim] }
    }
}

/// Log density of a diagonal Gaussian, summed over coordinates.
pub fn gaussian_logpdf(x: &[f64], dist: &DiagGaussian) -> Result<f64> {
    if x.len() != dist.mu.len() {
        return Err(Error::InvalidArgument(format!(
            "x has {} coordinates, distribution has {}",
            x.len(),
            dist.mu.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..x.len() {
        let z = (x[i] - dist.mu[i]) / dist.sigma[i];
        total += -dist.sigma[i].ln() - 0.5 * LN_2PI - 0.5 * z * z;
    }
    Ok(total)
}

/// Reparameterized draw mu + sigma * eps for a provided standard-normal eps.
pub fn gaussian_rsample(dist: &DiagGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != dist.mu.len() {
        return Err(Error::InvalidArgument(format!(
            "eps has {} coordinates, distribution has {}",
            eps.len(),
            dist.mu.len()
        )));
    }
    Ok((0..eps.len()).map(|i| dist.mu[i] + dist.sigma[i] * eps[i]).collect())
}

/// Bernoulli log pmf parameterized on the logit scale, stable for any logit:
/// log p(r=1) = -softplus(-logit), log p(r=0) = -softplus(logit).
pub fn bernoulli_logpmf(r: f64, logit: f64) -> Result<f64> {
    if r != 0.0 && r != 1.0 {
        return Err(Error::InvalidArgument(format!("bernoulli outcome must be 0 or 1, got {}", r)));
    }
    Ok(if r == 1.0 {
        -crate::tensor::softplus(-logit)
    } else {
        -crate::tensor::softplus(logit)
    })
}

/// Relaxed categorical (Gumbel-Softmax) distribution with class
/// probabilities `probs` on the simplex and temperature `tau`.
#[derive(Debug, Clone)]
pub struct GumbelSoftmax {
    pub probs: Vec<f64>,
    pub tau: f64,
}

impl GumbelSoftmax {
    pub fn new(probs: Vec<f64>, tau: f64) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if probs.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::InvalidArgument("class probabilities must be positive".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("class probabilities sum to {}", sum)));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", tau)));
        }
        Ok(GumbelSoftmax { probs, tau })
    }
}

/// One standard Gumbel draw -ln(-ln u).
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Open-interval uniform keeps both logs finite.
    let u: f64 = loop {
        let u = rng.gen::<f64>();
        if u > 0.0 && u < 1.0 {
            break u;
        }
    };
    -(-u.ln()).ln()
}

/// Relaxed one-hot sample softmax((log probs + gumbel) / tau).
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(dist: &GumbelSoftmax, rng: &mut R) -> Vec<f64> {
    let c = dist.probs.len();
    let mut logits: Vec<f64> = (0..c)
        .map(|i| (dist.probs[i].ln() + sample_gumbel(rng)) / dist.tau)
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
    logits
}

fn ln_gamma_int(c: usize) -> f64 {
    // ln (c-1)! for the small class counts used here.
    (2..c).map(|k| (k as f64).ln()).sum()
}

/// Log density of the relaxed categorical at an interior simplex point:
/// ln Gamma(C) + (C-1) ln tau - C ln sum_c(rho_c / x_c^tau)
/// + sum_c ln(rho_c / x_c^(tau+1)).
pub fn gumbel_softmax_logpdf(x: &[f64], dist: &GumbelSoftmax) -> Result<f64> {
    let c = dist.probs.len();
    if x.len() != c {
        return Err(Error::InvalidArgument(format!("x has {} coordinates, distribution has {}", x.len(), c)));
    }
    if x.iter().any(|&v| v <= 0.0 || v >= 1.0) {
        return Err(Error::InvalidArgument(
            "relaxed categorical density requires an interior simplex point".into(),
        ));
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!("x must lie on the simplex, sums to {}", sum)));
    }
    let tau = dist.tau;
    let mut log_ratio_sum = f64::NEG_INFINITY;
    let mut tail = 0.0;
    for i in 0..c {
        // log(rho_i / x_i^tau), combined through log-sum-exp.
        let lr = dist.probs[i].ln() - tau * x[i].ln();
        log_ratio_sum = log_sum_exp2(log_ratio_sum, lr);
        tail += dist.probs[i].ln() - (tau + 1.0) * x[i].ln();
    }
    Ok(ln_gamma_int(c) + (c as f64 - 1.0) * tau.ln() - c as f64 * log_ratio_sum + tail)
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Fill a buffer with standard-normal draws.
pub fn standard_normal_vec<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

// ---------------------------------------------------------------------------
// Tensor-graph forms.
// ---------------------------------------------------------------------------

/// sigma = exp(clamp(log sigma)), the convention every network head uses.
pub fn sigma_from_logsig_t(logsig: &Tensor) -> Tensor {
    logsig.clamp(LOG_SIGMA_LO, LOG_SIGMA_HI).exp()
}

/// Elementwise Gaussian log density `[n, p]` from mean and log-sd tensors.
pub fn gaussian_logpdf_t(x: &Tensor, mu: &Tensor, logsig: &Tensor) -> Result<Tensor> {
    let ls = logsig.clamp(LOG_SIGMA_LO, LOG_SIGMA_HI);
    let inv_sigma = ls.neg().exp();
    let z = x.sub(mu)?.mul(&inv_sigma)?;
    let quad = z.square()?.mul_scalar(-0.5);
    Ok(quad.sub(&ls)?.add_scalar(-0.5 * LN_2PI))
}

/// Reparameterized Gaussian sample mu + exp(clamp(logsig)) * eps.
pub fn gaussian_rsample_t(mu: &Tensor, logsig: &Tensor, eps: &Tensor) -> Result<Tensor> {
    mu.add(&sigma_from_logsig_t(logsig).mul(eps)?)
}

/// Elementwise Bernoulli log pmf from a 0/1 tensor and logits.
pub fn bernoulli_logpmf_t(r: &Tensor, logits: &Tensor) -> Result<Tensor> {
    // r * -softplus(-logit) + (1 - r) * -softplus(logit)
    let pos = logits.neg().softplus().neg().mul(r)?;
    let neg = logits.softplus().neg().mul(&r.neg().add_scalar(1.0))?;
    pos.add(&neg)
}

/// Row-wise categorical log pmf `[n, 1]`: sum_c x_c * log softmax(logits)_c.
/// Exact for one-hot rows; the soft-label cross entropy otherwise.
pub fn categorical_logpmf_t(x: &Tensor, logits: &Tensor) -> Result<Tensor> {
    let log_probs = logits.sub(&logits.log_sum_exp_cols()?)?;
    Ok(x.mul(&log_probs)?.sum_cols())
}

/// Relaxed one-hot sample from logits with provided Gumbel noise.
pub fn gumbel_softmax_sample_t(logits: &Tensor, gumbels: &Tensor, tau: f64) -> Result<Tensor> {
    logits.add(gumbels)?.mul_scalar(1.0 / tau).softmax_cols()
}

/// Row-wise relaxed categorical log density `[n, 1]` at interior points.
pub fn gumbel_softmax_logpdf_t(x: &Tensor, logits: &Tensor, tau: f64) -> Result<Tensor> {
    let c = x.cols();
    let log_rho = logits.sub(&logits.log_sum_exp_cols()?)?;
    let log_x = x.ln();
    // log-sum-exp over classes of (log rho_c - tau log x_c).
    let inner = log_rho.sub(&log_x.mul_scalar(tau))?.log_sum_exp_cols()?;
    let tail = log_rho.sub(&log_x.mul_scalar(tau + 1.0))?.sum_cols();
    let constant = ln_gamma_int(c) + (c as f64 - 1.0) * tau.ln();
    Ok(tail.sub(&inner.mul_scalar(c as f64))?.add_scalar(constant))
}
