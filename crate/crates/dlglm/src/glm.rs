//! GLM response families, canonical links, response log-likelihoods, and
//! classical fits (IRLS logistic regression, least squares) used both as
//! baseline downstream models and as oracles for coefficient recovery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Tensor};

const LN_2PI: f64 = 1.8378770664093453;

/// Response family. Dispersion alpha is 1 for the discrete families and a
/// learned parameter for the Gaussian family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Bernoulli,
    Categorical { classes: usize },
}

impl Family {
    /// Number of linear-predictor columns.
    pub fn eta_width(&self) -> usize {
        match self {
            Family::Categorical { classes } => *classes,
            _ => 1,
        }
    }

    /// Width of the response when fed to a network (one-hot for classes).
    pub fn y_input_width(&self) -> usize {
        match self {
            Family::Categorical { classes } => *classes,
            _ => 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, Family::Gaussian)
    }

    /// Inverse canonical link applied to one row of linear predictors.
    pub fn inv_link(&self, eta: &[f64]) -> Vec<f64> {
        match self {
            Family::Gaussian => vec![eta[0]],
            Family::Bernoulli => vec![sigmoid(eta[0])],
            Family::Categorical { classes } => {
                let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut out: Vec<f64> = eta.iter().map(|&e| (e - m).exp()).collect();
                let s: f64 = out.iter().sum();
                for v in out.iter_mut() {
                    *v /= s;
                }
                debug_assert_eq!(out.len(), *classes);
                out
            }
        }
    }
}

/// Log-likelihood of one response given its linear predictor row.
/// `y` is the raw value (Gaussian), 0/1 (Bernoulli), or a class index.
pub fn y_loglik(family: Family, y: f64, eta: &[f64], alpha: f64) -> Result<f64> {
    if eta.len() != family.eta_width() {
        return Err(Error::InvalidArgument(format!(
            "eta has {} entries, family needs {}",
            eta.len(),
            family.eta_width()
        )));
    }
    match family {
        Family::Gaussian => {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", alpha)));
            }
            let d = y - eta[0];
            Ok(-0.5 * (LN_2PI + alpha.ln()) - d * d / (2.0 * alpha))
        }
        Family::Bernoulli => {
            if y != 0.0 && y != 1.0 {
                return Err(Error::InvalidArgument(format!("bernoulli response must be 0/1, got {}", y)));
            }
            crate::distributions::bernoulli_logpmf(y, eta[0])
        }
        Family::Categorical { classes } => {
            let c = y as usize;
            if y.fract() != 0.0 || c >= classes {
                return Err(Error::InvalidArgument(format!(
                    "class index {} out of range for {} classes",
                    y, classes
                )));
            }
            let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + eta.iter().map(|&e| (e - m).exp()).sum::<f64>().ln();
            Ok(eta[c] - lse)
        }
    }
}

/// Tensor form of the response log-likelihood, one value per row.
/// `y` is `[n, 1]` (raw or 0/1) or `[n, C]` one-hot; `eta` matches the
/// family's width; `log_alpha` is the Gaussian log-dispersion parameter.
pub fn y_loglik_t(family: Family, y: &Tensor, eta: &Tensor, log_alpha: Option<&Tensor>) -> Result<Tensor> {
    match family {
        Family::Gaussian => {
            let la = log_alpha
                .ok_or_else(|| Error::InvalidArgument("gaussian family needs log_alpha".into()))?
                .clamp(-10.0, 10.0);
            let d = y.sub(eta)?;
            let quad = d.square()?.mul(&la.neg().exp())?.mul_scalar(-0.5);
            Ok(quad.sub(&la.mul_scalar(0.5))?.add_scalar(-0.5 * LN_2PI))
        }
        Family::Bernoulli => crate::distributions::bernoulli_logpmf_t(y, eta),
        Family::Categorical { .. } => crate::distributions::categorical_logpmf_t(y, eta),
    }
}

/// Result of a classical GLM fit.
#[derive(Debug, Clone)]
pub struct ClassicalFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub iterations: usize,
}

/// Logistic regression by iteratively reweighted least squares.
/// `x` is row-major `n x p` without an intercept column; one is added.
pub fn irls_fit(x: &[f64], n: usize, p: usize, y: &[f64], max_iter: usize, tol: f64) -> Result<ClassicalFit> {
    if x.len() != n * p || y.len() != n {
        return Err(Error::InvalidArgument("irls_fit dimension mismatch".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument("irls_fit needs a 0/1 response".into()));
    }
    let q = p + 1;
    let mut beta = vec![0.0; q];
    for iter in 1..=max_iter {
        // Weighted normal equations X' W X delta-direction via working response.
        let mut xtwx = vec![0.0; q * q];
        let mut xtwz = vec![0.0; q];
        for i in 0..n {
            let row = &x[i * p..(i + 1) * p];
            let mut eta = beta[0];
            for j in 0..p {
                eta += beta[j + 1] * row[j];
            }
            let mu = sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let z = eta + (y[i] - mu) / w;
            let mut xi = vec![0.0; q];
            xi[0] = 1.0;
            xi[1..].copy_from_slice(row);
            for a in 0..q {
                let wa = w * xi[a];
                xtwz[a] += wa * z;
                for b in 0..q {
                    xtwx[a * q + b] += wa * xi[b];
                }
            }
        }
        let new_beta = solve_linear(&mut xtwx, &mut xtwz, q)
            .map_err(|_| Error::Train("irls_fit: singular weighted system".into()))?;
        let delta = new_beta
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        beta = new_beta;
        let magnitude = beta.iter().map(|b| b.abs()).fold(0.0f64, f64::max);
        if magnitude > 1e4 || !magnitude.is_finite() {
            return Err(Error::Train(
                "irls_fit: coefficients diverged (quasi-separation)".into(),
            ));
        }
        if delta < tol {
            return Ok(ClassicalFit { intercept: beta[0], coef: beta[1..].to_vec(), iterations: iter });
        }
    }
    Err(Error::Train(format!("irls_fit did not converge in {} iterations", max_iter)))
}

/// Ordinary least squares with an intercept.
pub fn least_squares(x: &[f64], n: usize, p: usize, y: &[f64]) -> Result<ClassicalFit> {
    if x.len() != n * p || y.len() != n {
        return Err(Error::InvalidArgument("least_squares dimension mismatch".into()));
    }
    let q = p + 1;
    let mut xtx = vec![0.0; q * q];
    let mut xty = vec![0.0; q];
    for i in 0..n {
        let row = &x[i * p..(i + 1) * p];
        let mut xi = vec![0.0; q];
        xi[0] = 1.0;
        xi[1..].copy_from_slice(row);
        for a in 0..q {
            xty[a] += xi[a] * y[i];
            for b in 0..q {
                xtx[a * q + b] += xi[a] * xi[b];
            }
        }
    }
    let beta = solve_linear(&mut xtx, &mut xty, q)
        .map_err(|_| Error::Train("least_squares: singular normal equations".into()))?;
    Ok(ClassicalFit { intercept: beta[0], coef: beta[1..].to_vec(), iterations: 1 })
}

/// Solve `A x = b` in place by Gaussian elimination with partial pivoting.
pub(crate) fn solve_linear(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if a[r * n + col].abs() > a[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if a[pivot * n + col].abs() < 1e-12 {
            return Err(Error::Train("singular linear system".into()));
        }
        if pivot != col {
            for c in 0..n {
                a.swap(col * n + c, pivot * n + c);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for c in (col + 1)..n {
            s -= a[col * n + c] * x[c];
        }
        x[col] = s / a[col * n + col];
    }
    Ok(x)
}
