//! Missingness mechanism specification, coefficient drawing, intercept
//! calibration, and mask simulation.
//!
//! Each missing-prone feature j gets its own logistic observation model
//! logit P(r_ij = 1) = phi0_j + phi1 * y_i + phi2_j . x_i + phi3_j . x_i,
//! where phi2 carries weights on fully-observed features and phi3 on
//! missing-prone ones (MNAR). Under the nonlinear form, driver values are
//! first mapped through ln(x - min(x) + 1), a min-shift that keeps the log
//! argument at least 1.

use rand::Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MechanismKind {
    Mcar,
    Mar,
    Mnar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismForm {
    Linear,
    NonlinearLog,
}

/// What to generate: mechanism class, functional form, and targets.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MechanismTemplate {
    pub kind: MechanismKind,
    pub form: MechanismForm,
    pub target_missing_rate: f64,
    pub frac_features_missing: f64,
}

/// Fully-drawn mechanism: which features are missing-prone and every
/// coefficient of their observation models. phi2/phi3 rows span all p
/// features; entries are zero except on the designated drivers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    pub form: MechanismForm,
    pub missing_features: Vec<usize>,
    pub phi0: Vec<f64>,
    pub phi1: f64,
    pub phi2: Vec<Vec<f64>>,
    pub phi3: Vec<Vec<f64>>,
    pub target_missing_rate: f64,
}

/// Binary observation mask, 1 = observed, over n rows and p features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskMatrix {
    pub n: usize,
    pub p: usize,
    data: Vec<u8>,
}

impl MaskMatrix {
    pub fn ones(n: usize, p: usize) -> Self {
        MaskMatrix { n, p, data: vec![1; n * p] }
    }

    pub fn observed(&self, i: usize, j: usize) -> bool {
        self.data[i * self.p + j] == 1
    }

    pub fn set(&mut self, i: usize, j: usize, observed: bool) {
        self.data[i * self.p + j] = u8::from(observed);
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        f64::from(self.data[i * self.p + j])
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    /// Fraction of missing entries over the whole matrix.
    pub fn missing_rate(&self) -> f64 {
        let missing = self.data.iter().filter(|&&v| v == 0).count();
        missing as f64 / self.data.len() as f64
    }

    /// Fraction missing within one feature column.
    pub fn col_missing_rate(&self, j: usize) -> f64 {
        let missing = (0..self.n).filter(|&i| !self.observed(i, j)).count();
        missing as f64 / self.n as f64
    }

    /// Features with at least one missing entry.
    pub fn missing_prone_features(&self) -> Vec<usize> {
        (0..self.p).filter(|&j| (0..self.n).any(|i| !self.observed(i, j))).collect()
    }

    pub fn row_has_missing(&self, i: usize) -> bool {
        self.row(i).iter().any(|&v| v == 0)
    }

    pub fn count_missing(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0).count()
    }
}

fn validate_template(t: &MechanismTemplate) -> Result<()> {
    if !(t.target_missing_rate > 0.0 && t.target_missing_rate < 1.0) {
        return Err(Error::Mask(format!(
            "target missing rate must lie in (0,1), got {}",
            t.target_missing_rate
        )));
    }
    if !(0.0..=1.0).contains(&t.frac_features_missing) {
        return Err(Error::Mask(format!(
            "fraction of missing-prone features must lie in [0,1], got {}",
            t.frac_features_missing
        )));
    }
    Ok(())
}

/// Draw mechanism coefficients for `p` features. The first
/// `floor(frac * p)` features are missing-prone. Nonzero coefficients are
/// drawn from exp(N(ln 5, 0.2^2)) (median 5). Under MAR each missing-prone
/// feature is driven by one fully-observed feature (assigned round-robin);
/// under MNAR each feature drives its own mask. phi0 is left at zero until
/// `calibrate_phi0`.
pub fn draw_phi<R: Rng + ?Sized>(template: &MechanismTemplate, p: usize, rng: &mut R) -> Result<MechanismSpec> {
    validate_template(template)?;
    if p == 0 {
        return Err(Error::Mask("need at least one feature".into()));
    }
    let n_miss = (template.frac_features_missing * p as f64).floor() as usize;
    let missing_features: Vec<usize> = (0..n_miss).collect();
    let observed_features: Vec<usize> = (n_miss..p).collect();
    let dist = LogNormal::new(5.0f64.ln(), 0.2).expect("valid lognormal");
    let mut phi2 = vec![vec![0.0; p]; n_miss];
    let mut phi3 = vec![vec![0.0; p]; n_miss];
    match template.kind {
        MechanismKind::Mcar => {}
        MechanismKind::Mar => {
            if observed_features.is_empty() && n_miss > 0 {
                return Err(Error::Mask("MAR needs at least one fully-observed feature".into()));
            }
            for (t, row) in phi2.iter_mut().enumerate() {
                let driver = observed_features[t % observed_features.len()];
                row[driver] = rng.sample(dist);
            }
        }
        MechanismKind::Mnar => {
            for (t, row) in phi3.iter_mut().enumerate() {
                row[missing_features[t]] = rng.sample(dist);
            }
        }
    }
    Ok(MechanismSpec {
        kind: template.kind,
        form: template.form,
        missing_features,
        phi0: vec![0.0; n_miss],
        phi1: 0.0,
        phi2,
        phi3,
        target_missing_rate: template.target_missing_rate,
    })
}

/// Per-column minima, used by the nonlinear min-shift transform.
fn column_minima(x: &[f64], n: usize, p: usize) -> Vec<f64> {
    let mut mins = vec![f64::INFINITY; p];
    for i in 0..n {
        for j in 0..p {
            mins[j] = mins[j].min(x[i * p + j]);
        }
    }
    mins
}

fn driver_value(form: MechanismForm, x_ij: f64, min_j: f64) -> f64 {
    match form {
        MechanismForm::Linear => x_ij,
        MechanismForm::NonlinearLog => (x_ij - min_j + 1.0).ln(),
    }
}

/// Observation logits for one missing-prone feature (index `t` within the
/// spec's missing list), excluding phi0.
fn partial_logits(spec: &MechanismSpec, x: &[f64], n: usize, p: usize, y: &[f64], t: usize, mins: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut l = spec.phi1 * y[i];
        for j in 0..p {
            let w2 = spec.phi2[t][j];
            let w3 = spec.phi3[t][j];
            if w2 != 0.0 {
                l += w2 * driver_value(spec.form, x[i * p + j], mins[j]);
            }
            if w3 != 0.0 {
                l += w3 * driver_value(spec.form, x[i * p + j], mins[j]);
            }
        }
        *o = l;
    }
    out
}

/// Calibrate each phi0 by bisection so the expected missing rate over the
/// provided sample matches the target within 1e-3.
pub fn calibrate_phi0(spec: &mut MechanismSpec, x: &[f64], n: usize, p: usize, y: &[f64]) -> Result<()> {
    if x.len() != n * p || y.len() != n {
        return Err(Error::Mask("calibrate_phi0 dimension mismatch".into()));
    }
    if n == 0 {
        return Err(Error::Mask("calibrate_phi0 needs at least one row".into()));
    }
    let mins = column_minima(x, n, p);
    let target = spec.target_missing_rate;
    for t in 0..spec.missing_features.len() {
        let partial = partial_logits(spec, x, n, p, y, t, &mins);
        let expected_missing =
            |phi0: f64| partial.iter().map(|&c| 1.0 - sigmoid(phi0 + c)).sum::<f64>() / n as f64;
        // Expected missing rate is strictly decreasing in phi0.
        let (mut lo, mut hi) = (-60.0, 60.0);
        let mut expand = 0;
        while expected_missing(lo) < target {
            lo *= 2.0;
            expand += 1;
            if expand > 20 {
                return Err(Error::Mask("calibrate_phi0 could not bracket the target rate".into()));
            }
        }
        while expected_missing(hi) > target {
            hi *= 2.0;
            expand += 1;
            if expand > 40 {
                return Err(Error::Mask("calibrate_phi0 could not bracket the target rate".into()));
            }
        }
        let mut mid = 0.0;
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let rate = expected_missing(mid);
            if (rate - target).abs() <= 1e-3 {
                break;
            }
            if rate > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if (expected_missing(mid) - target).abs() > 1e-3 {
            return Err(Error::Mask("calibrate_phi0 bisection did not reach tolerance".into()));
        }
        spec.phi0[t] = mid;
    }
    Ok(())
}

/// Draw the mask: fully-observed features stay all ones; each missing-prone
/// feature's entries are Bernoulli with its calibrated observation model.
pub fn simulate_mask<R: Rng + ?Sized>(
    spec: &MechanismSpec,
    x: &[f64],
    n: usize,
    p: usize,
    y: &[f64],
    rng: &mut R,
) -> Result<MaskMatrix> {
    if x.len() != n * p || y.len() != n {
        return Err(Error::Mask("simulate_mask dimension mismatch".into()));
    }
    for &j in &spec.missing_features {
        if j >= p {
            return Err(Error::Mask(format!("missing feature index {} out of range", j)));
        }
    }
    let mins = column_minima(x, n, p);
    let mut mask = MaskMatrix::ones(n, p);
    for t in 0..spec.missing_features.len() {
        let j = spec.missing_features[t];
        let partial = partial_logits(spec, x, n, p, y, t, &mins);
        for i in 0..n {
            let p_obs = sigmoid(spec.phi0[t] + partial[i]);
            mask.set(i, j, rng.gen::<f64>() < p_obs);
        }
    }
    Ok(mask)
}
