//! Dataset container, synthetic data generation, train/valid/test splits,
//! CSV ingestion with one-hot encoding, and standardization.
//!
//! Feature columns are grouped into blocks: a continuous feature is a
//! one-column block, a categorical feature a one-hot block. Missingness is
//! tracked per block (a cell is missing for all of its block's columns).

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::Family;
use crate::missingness::MaskMatrix;
use crate::tensor::sigmoid;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Continuous,
    Categorical { classes: usize },
}

/// One feature block: a continuous column or a one-hot categorical group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub name: String,
    pub kind: BlockKind,
    pub col_start: usize,
}

impl FeatureBlock {
    pub fn width(&self) -> usize {
        match self.kind {
            BlockKind::Continuous => 1,
            BlockKind::Categorical { classes } => classes,
        }
    }

    pub fn cols(&self) -> std::ops::Range<usize> {
        self.col_start..self.col_start + self.width()
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, BlockKind::Continuous)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Per-column affine transform applied to x: standardized = (raw - mean) / sd.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    pub fn unstandardize(&self, col: usize, v: f64) -> f64 {
        v * self.sd[col] + self.mean[col]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    /// Row-major n x p_cols design matrix (one-hot expanded).
    pub x: Vec<f64>,
    pub n: usize,
    pub p_cols: usize,
    pub y: Vec<f64>,
    pub family: Family,
    /// Block-level observation mask, n x blocks.len().
    pub mask: MaskMatrix,
    pub blocks: Vec<FeatureBlock>,
    pub split: Vec<Split>,
    /// Present once `standardize_and_preimpute` has run.
    pub standardization: Option<Standardization>,
    /// For categorical responses: sorted class labels, index = class id.
    pub y_levels: Vec<String>,
}

impl Dataset {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p_cols..(i + 1) * self.p_cols]
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.n).filter(|&i| self.split[i] == split).collect()
    }

    /// Block mask expanded to column width for row i (1.0 observed).
    pub fn col_mask_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![1.0; self.p_cols];
        for (b, block) in self.blocks.iter().enumerate() {
            if !self.mask.observed(i, b) {
                for c in block.cols() {
                    out[c] = 0.0;
                }
            }
        }
        out
    }

    /// Blocks with at least one missing entry, in block order.
    pub fn missing_prone_blocks(&self) -> Vec<usize> {
        self.mask.missing_prone_features()
    }

    pub fn block_of_col(&self, col: usize) -> usize {
        self.blocks
            .iter()
            .position(|b| b.cols().contains(&col))
            .expect("column within some block")
    }

    /// Map a matrix laid out like `x` back to the data scale. Identity when
    /// the dataset was never standardized.
    pub fn unstandardize_x(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardization {
            None => x.to_vec(),
            Some(st) => {
                let mut out = x.to_vec();
                for (i, v) in out.iter_mut().enumerate() {
                    let c = i % self.p_cols;
                    *v = st.unstandardize(c, *v);
                }
                out
            }
        }
    }
}

/// Synthetic generation settings. Covariates mix a rank-d latent signal
/// with entrywise noise: X = normalize(Z W + B) + b0_shift, where Z is
/// n x d, W is d x p, and B is an n x p noise matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub family: Family,
    /// Coefficient magnitude; each beta_j is drawn as +/- this value.
    pub beta: f64,
    /// Constant added to every normalized covariate column.
    pub b0_shift: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 10000,
            p: 8,
            d: 2,
            family: Family::Bernoulli,
            beta: 0.25,
            b0_shift: 2.0,
        }
    }
}

/// Ground truth retained from generation, for coefficient and prediction
/// scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTruth {
    pub beta0: f64,
    pub beta: Vec<f64>,
    /// Response-scale mean per row (probability for Bernoulli, mean for
    /// Gaussian).
    pub mu: Vec<f64>,
}

fn column_normalize(x: &mut [f64], n: usize, p: usize) {
    for j in 0..p {
        let mut mean = 0.0;
        for i in 0..n {
            mean += x[i * p + j];
        }
        mean /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let d = x[i * p + j] - mean;
            var += d * d;
        }
        let sd = (var / (n as f64 - 1.0)).sqrt().max(1e-12);
        for i in 0..n {
            x[i * p + j] = (x[i * p + j] - mean) / sd;
        }
    }
}

/// Pick the intercept by bisection so the mean Bernoulli probability over
/// the generated linear predictors is 0.5 within 1e-3.
fn balance_intercept(partial_eta: &[f64]) -> f64 {
    let mean_prob = |b0: f64| {
        partial_eta.iter().map(|&e| sigmoid(b0 + e)).sum::<f64>() / partial_eta.len() as f64
    };
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = mean_prob(mid);
        if (p - 0.5).abs() <= 1e-3 {
            return mid;
        }
        if p < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generate covariates and responses. All features are continuous
/// single-column blocks; the mask starts fully observed and the split all
/// Train. Draw order: Z, then W, then B, then coefficient signs, then
/// response noise.
pub fn simulate_xy(cfg: &SimConfig, rng: &mut ChaCha20Rng) -> Result<(Dataset, SimTruth)> {
    let (n, p, d) = (cfg.n, cfg.p, cfg.d);
    if n < 10 || p == 0 || d == 0 {
        return Err(Error::Data("simulation needs n >= 10, p >= 1, d >= 1".into()));
    }
    let z: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let w_sd = 0.5f64.sqrt();
    let w: Vec<f64> = (0..d * p).map(|_| rng.sample::<f64, _>(StandardNormal) * w_sd).collect();
    let b: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..p {
            let mut v = b[i * p + j];
            for k in 0..d {
                v += z[i * d + k] * w[k * p + j];
            }
            x[i * p + j] = v;
        }
    }
    column_normalize(&mut x, n, p);
    for v in x.iter_mut() {
        *v += cfg.b0_shift;
    }

    let beta: Vec<f64> =
        (0..p).map(|_| if rng.gen::<bool>() { cfg.beta } else { -cfg.beta }).collect();
    let partial_eta: Vec<f64> = (0..n)
        .map(|i| (0..p).map(|j| x[i * p + j] * beta[j]).sum::<f64>())
        .collect();
    let (beta0, y, mu) = match cfg.family {
        Family::Bernoulli => {
            let b0 = balance_intercept(&partial_eta);
            let mu: Vec<f64> = partial_eta.iter().map(|&e| sigmoid(b0 + e)).collect();
            let y: Vec<f64> = mu.iter().map(|&pr| f64::from(rng.gen::<f64>() < pr)).collect();
            (b0, y, mu)
        }
        Family::Gaussian => {
            let mu: Vec<f64> = partial_eta.clone();
            let y: Vec<f64> =
                mu.iter().map(|&m| m + rng.sample::<f64, _>(StandardNormal)).collect();
            (0.0, y, mu)
        }
        Family::Categorical { .. } => {
            return Err(Error::Data("categorical responses are not generated synthetically".into()))
        }
    };

    let blocks: Vec<FeatureBlock> = (0..p)
        .map(|j| FeatureBlock { name: format!("x{}", j), kind: BlockKind::Continuous, col_start: j })
        .collect();
    let ds = Dataset {
        x,
        n,
        p_cols: p,
        y,
        family: cfg.family,
        mask: MaskMatrix::ones(n, p),
        blocks,
        split: vec![Split::Train; n],
        standardization: None,
        y_levels: match cfg.family {
            Family::Bernoulli => vec!["0".into(), "1".into()],
            _ => Vec::new(),
        },
    };
    Ok((ds, SimTruth { beta0, beta, mu }))
}

/// Shuffled 8:1:1 assignment: floor(0.8 n) train, floor(0.1 n) valid, rest
/// test.
pub fn split_811(n: usize, rng: &mut ChaCha20Rng) -> Vec<Split> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = (0.8 * n as f64).floor() as usize;
    let n_valid = (0.1 * n as f64).floor() as usize;
    let mut split = vec![Split::Test; n];
    for &i in &idx[..n_train] {
        split[i] = Split::Train;
    }
    for &i in &idx[n_train..n_train + n_valid] {
        split[i] = Split::Valid;
    }
    split
}

/// Standardize continuous columns by observed-train mean and sd, then zero
/// out every missing entry (mean imputation in the standardized space).
/// Categorical columns pass through unchanged.
pub fn standardize_and_preimpute(ds: &mut Dataset) -> Result<()> {
    if ds.standardization.is_some() {
        return Err(Error::Data("dataset already standardized".into()));
    }
    let mut mean = vec![0.0; ds.p_cols];
    let mut sd = vec![1.0; ds.p_cols];
    let train_rows = ds.rows_in(Split::Train);
    if train_rows.is_empty() {
        return Err(Error::Data("standardization needs at least one training row".into()));
    }
    for (b, block) in ds.blocks.iter().enumerate() {
        if !block.is_continuous() {
            continue;
        }
        let c = block.col_start;
        let vals: Vec<f64> = train_rows
            .iter()
            .filter(|&&i| ds.mask.observed(i, b))
            .map(|&i| ds.x[i * ds.p_cols + c])
            .collect();
        if vals.is_empty() {
            return Err(Error::Data(format!(
                "feature {} has no observed training values",
                block.name
            )));
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|&x| (x - m) * (x - m)).sum::<f64>()
            / (vals.len() as f64 - 1.0).max(1.0);
        mean[c] = m;
        sd[c] = v.sqrt().max(1e-12);
    }
    for i in 0..ds.n {
        for (b, block) in ds.blocks.iter().enumerate() {
            for c in block.cols() {
                let idx = i * ds.p_cols + c;
                if block.is_continuous() {
                    ds.x[idx] = (ds.x[idx] - mean[c]) / sd[c];
                }
                if !ds.mask.observed(i, b) {
                    ds.x[idx] = 0.0;
                }
            }
        }
    }
    ds.standardization = Some(Standardization { mean, sd });
    Ok(())
}

/// CSV ingestion settings: which column is the response and how to read it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub response: String,
    pub family: Family,
    /// Extra tokens treated as missing, beyond "", "NA", "unknown",
    /// "nonexistent".
    #[serde(default)]
    pub na_tokens: Vec<String>,
    /// Columns forced categorical even if every value parses as a number.
    #[serde(default)]
    pub categorical: Vec<String>,
}

const DEFAULT_NA_TOKENS: [&str; 4] = ["", "NA", "unknown", "nonexistent"];

fn is_na(token: &str, extra: &[String]) -> bool {
    let t = token.trim();
    DEFAULT_NA_TOKENS.contains(&t) || extra.iter().any(|e| e == t)
}

/// Read a delimited file with a header row into a dataset. Missing response
/// values are an error; missing covariates populate the mask. Categorical
/// columns are one-hot encoded with levels sorted lexicographically.
pub fn ingest_csv(path: &Path, schema: &CsvSchema, seed: u64) -> Result<Dataset> {
    let mut ds = ingest_csv_raw(path, schema)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ds.split = split_811(ds.n, &mut rng);
    standardize_and_preimpute(&mut ds)?;
    Ok(ds)
}

/// CSV ingestion stopping before the split and standardization: the mask
/// reflects NA tokens, the split is all Train, and values stay on the data
/// scale.
pub fn ingest_csv_raw(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let y_col = headers
        .iter()
        .position(|h| h == &schema.response)
        .ok_or_else(|| Error::Data(format!("response column '{}' not found", schema.response)))?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|&(i, _)| i != y_col).map(|(_, h)| h.clone()).collect();

    let mut raw: Vec<Vec<Option<String>>> = Vec::new();
    let mut y_raw: Vec<String> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!("row {} has {} fields, expected {}", line + 2, record.len(), headers.len())));
        }
        let mut row: Vec<Option<String>> = Vec::with_capacity(feature_names.len());
        for (i, field) in record.iter().enumerate() {
            if i == y_col {
                if is_na(field, &schema.na_tokens) {
                    return Err(Error::Data(format!("missing response value at row {}", line + 2)));
                }
                y_raw.push(field.trim().to_string());
            } else {
                row.push(if is_na(field, &schema.na_tokens) { None } else { Some(field.trim().to_string()) });
            }
        }
        raw.push(row);
    }
    let n = raw.len();
    if n < 10 {
        return Err(Error::Data(format!("need at least 10 data rows, got {}", n)));
    }

    // Decide column kinds: forced categorical, or any observed value that
    // fails to parse as a number.
    let n_feat = feature_names.len();
    let mut is_cat = vec![false; n_feat];
    let mut levels: Vec<Vec<String>> = vec![Vec::new(); n_feat];
    for j in 0..n_feat {
        let forced = schema.categorical.contains(&feature_names[j]);
        let mut numeric = true;
        for row in &raw {
            if let Some(v) = &row[j] {
                if v.parse::<f64>().is_err() {
                    numeric = false;
                    break;
                }
            }
        }
        if forced || !numeric {
            is_cat[j] = true;
            let mut set: Vec<String> = Vec::new();
            for row in &raw {
                if let Some(v) = &row[j] {
                    if !set.contains(v) {
                        set.push(v.clone());
                    }
                }
            }
            set.sort();
            if set.len() < 2 {
                return Err(Error::Data(format!(
                    "categorical feature '{}' has fewer than 2 observed levels",
                    feature_names[j]
                )));
            }
            levels[j] = set;
        }
    }

    let mut blocks: Vec<FeatureBlock> = Vec::with_capacity(n_feat);
    let mut col_start = 0;
    for j in 0..n_feat {
        let kind = if is_cat[j] {
            BlockKind::Categorical { classes: levels[j].len() }
        } else {
            BlockKind::Continuous
        };
        let width = match kind {
            BlockKind::Continuous => 1,
            BlockKind::Categorical { classes } => classes,
        };
        blocks.push(FeatureBlock { name: feature_names[j].clone(), kind, col_start });
        col_start += width;
    }
    let p_cols = col_start;

    let mut x = vec![0.0; n * p_cols];
    let mut mask = MaskMatrix::ones(n, n_feat);
    for (i, row) in raw.iter().enumerate() {
        for (j, block) in blocks.iter().enumerate() {
            match &row[j] {
                None => mask.set(i, j, false),
                Some(v) => {
                    if is_cat[j] {
                        let k = levels[j]
                            .iter()
                            .position(|l| l == v)
                            .expect("level collected above");
                        x[i * p_cols + block.col_start + k] = 1.0;
                    } else {
                        x[i * p_cols + block.col_start] = v.parse::<f64>().map_err(|_| {
                            Error::Data(format!(
                                "feature '{}' row {}: cannot parse '{}'",
                                feature_names[j],
                                i + 2,
                                v
                            ))
                        })?;
                    }
                }
            }
        }
    }

    let (y, y_levels) = match schema.family {
        Family::Gaussian => {
            let y: Result<Vec<f64>> = y_raw
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.parse::<f64>().map_err(|_| {
                        Error::Data(format!("response row {}: cannot parse '{}'", i + 2, v))
                    })
                })
                .collect();
            (y?, Vec::new())
        }
        Family::Bernoulli | Family::Categorical { .. } => {
            let mut lv: Vec<String> = Vec::new();
            for v in &y_raw {
                if !lv.contains(v) {
                    lv.push(v.clone());
                }
            }
            lv.sort();
            let expected = match schema.family {
                Family::Bernoulli => 2,
                Family::Categorical { classes } => classes,
                Family::Gaussian => unreachable!(),
            };
            if lv.len() != expected {
                return Err(Error::Data(format!(
                    "response has {} distinct levels, family expects {}",
                    lv.len(),
                    expected
                )));
            }
            let y = y_raw
                .iter()
                .map(|v| lv.iter().position(|l| l == v).unwrap() as f64)
                .collect();
            (y, lv)
        }
    };

    Ok(Dataset {
        x,
        n,
        p_cols,
        y,
        family: schema.family,
        mask,
        blocks,
        split: vec![Split::Train; n],
        standardization: None,
        y_levels,
    })
}

/// Write a rectangular matrix with a header row.
pub fn write_matrix_csv(path: &Path, headers: &[String], rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if data.len() != rows * cols || headers.len() != cols {
        return Err(Error::Data("write_matrix_csv dimension mismatch".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    for i in 0..rows {
        let row: Vec<String> = (0..cols).map(|j| format!("{}", data[i * cols + j])).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a rectangular numeric matrix with a header row.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, usize, usize, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let cols = headers.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != cols {
            return Err(Error::Data(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                line + 2,
                record.len(),
                cols
            )));
        }
        for field in record.iter() {
            data.push(field.parse::<f64>().map_err(|_| {
                Error::Data(format!("{}: cannot parse '{}' at row {}", path.display(), field, line + 2))
            })?);
        }
        rows += 1;
    }
    Ok((headers, rows, cols, data))
}

/// Standardize with transforms fitted elsewhere (for scoring new data with
/// a trained model), then zero the missing entries.
pub fn standardize_with(ds: &mut Dataset, st: &Standardization) -> Result<()> {
    if ds.standardization.is_some() {
        return Err(Error::Data("dataset already standardized".into()));
    }
    if st.mean.len() != ds.p_cols || st.sd.len() != ds.p_cols {
        return Err(Error::Data("standardization width does not match the data".into()));
    }
    for i in 0..ds.n {
        for (b, block) in ds.blocks.iter().enumerate() {
            for c in block.cols() {
                let idx = i * ds.p_cols + c;
                if block.is_continuous() {
                    ds.x[idx] = (ds.x[idx] - st.mean[c]) / st.sd[c];
                }
                if !ds.mask.observed(i, b) {
                    ds.x[idx] = 0.0;
                }
            }
        }
    }
    ds.standardization = Some(st.clone());
    Ok(())
}

/// Serialize any value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

/// Count rows per split, keyed for reporting.
pub fn split_sizes(split: &[Split]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for s in split {
        let key = match s {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        };
        *out.entry(key.to_string()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn simulated_columns_are_normalized_then_shifted() {
        let cfg = SimConfig { n: 5000, ..Default::default() };
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (ds, _) = simulate_xy(&cfg, &mut rng).unwrap();
        for j in 0..cfg.p {
            let mean: f64 = (0..ds.n).map(|i| ds.x[i * ds.p_cols + j]).sum::<f64>() / ds.n as f64;
            let var: f64 = (0..ds.n)
                .map(|i| (ds.x[i * ds.p_cols + j] - mean).powi(2))
                .sum::<f64>()
                / (ds.n as f64 - 1.0);
            assert!((mean - 2.0).abs() < 1e-9, "col {} mean {}", j, mean);
            assert!((var - 1.0).abs() < 1e-9, "col {} var {}", j, var);
        }
    }

    #[test]
    fn bernoulli_classes_are_balanced() {
        let cfg = SimConfig { n: 20000, ..Default::default() };
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (ds, truth) = simulate_xy(&cfg, &mut rng).unwrap();
        let rate = ds.y.iter().sum::<f64>() / ds.n as f64;
        assert!((rate - 0.5).abs() < 0.02, "class-1 rate {}", rate);
        let mean_mu = truth.mu.iter().sum::<f64>() / ds.n as f64;
        assert!((mean_mu - 0.5).abs() < 2e-3, "mean probability {}", mean_mu);
        assert!(truth.beta.iter().all(|&b| b.abs() == 0.25));
        assert!(truth.beta.iter().any(|&b| b > 0.0) && truth.beta.iter().any(|&b| b < 0.0));
    }

    #[test]
    fn simulation_deterministic_by_seed() {
        let cfg = SimConfig { n: 200, ..Default::default() };
        let mut r1 = ChaCha20Rng::seed_from_u64(3);
        let mut r2 = ChaCha20Rng::seed_from_u64(3);
        let (a, ta) = simulate_xy(&cfg, &mut r1).unwrap();
        let (b, tb) = simulate_xy(&cfg, &mut r2).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(ta.beta0, tb.beta0);
    }

    #[test]
    fn gaussian_family_supported() {
        let cfg = SimConfig { n: 2000, family: Family::Gaussian, ..Default::default() };
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (ds, truth) = simulate_xy(&cfg, &mut rng).unwrap();
        assert_eq!(truth.beta0, 0.0);
        let resid_var: f64 = (0..ds.n).map(|i| (ds.y[i] - truth.mu[i]).powi(2)).sum::<f64>() / ds.n as f64;
        assert!((resid_var - 1.0).abs() < 0.1, "residual variance {}", resid_var);
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let split = split_811(1000, &mut rng);
        let sizes = split_sizes(&split);
        assert_eq!(sizes["train"], 800);
        assert_eq!(sizes["valid"], 100);
        assert_eq!(sizes["test"], 100);

        let split = split_811(17, &mut rng);
        let sizes = split_sizes(&split);
        assert_eq!(sizes["train"], 13);
        assert_eq!(sizes["valid"], 1);
        assert_eq!(sizes["test"], 3);
    }

    #[test]
    fn standardization_centers_observed_train_and_zeroes_missing() {
        let cfg = SimConfig { n: 2000, ..Default::default() };
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let (mut ds, _) = simulate_xy(&cfg, &mut rng).unwrap();
        ds.split = split_811(ds.n, &mut rng);
        // Hide 30% of feature 0 at random.
        for i in 0..ds.n {
            if rng.gen::<f64>() < 0.3 {
                ds.mask.set(i, 0, false);
            }
        }
        let raw = ds.x.clone();
        standardize_and_preimpute(&mut ds).unwrap();
        let st = ds.standardization.clone().unwrap();

        let obs_train: Vec<usize> = ds
            .rows_in(Split::Train)
            .into_iter()
            .filter(|&i| ds.mask.observed(i, 0))
            .collect();
        let mean: f64 =
            obs_train.iter().map(|&i| ds.x[i * ds.p_cols]).sum::<f64>() / obs_train.len() as f64;
        assert!(mean.abs() < 1e-9);
        for i in 0..ds.n {
            if !ds.mask.observed(i, 0) {
                assert_eq!(ds.x[i * ds.p_cols], 0.0);
            } else {
                let back = st.unstandardize(0, ds.x[i * ds.p_cols]);
                assert!((back - raw[i * ds.p_cols]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn csv_roundtrip_with_missing_and_categorical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "age,color,score,outcome").unwrap();
        for i in 0..30 {
            let age = if i % 5 == 0 { "NA".to_string() } else { format!("{}", 20 + i) };
            let color = match i % 3 {
                0 => "red",
                1 => "blue",
                _ => "unknown",
            };
            let score = format!("{}", i as f64 * 0.5);
            let outcome = if i % 2 == 0 { "yes" } else { "no" };
            writeln!(f, "{},{},{},{}", age, color, score, outcome).unwrap();
        }
        drop(f);
        let schema = CsvSchema {
            response: "outcome".into(),
            family: Family::Bernoulli,
            na_tokens: vec![],
            categorical: vec![],
        };
        let ds = ingest_csv(&path, &schema, 7).unwrap();
        assert_eq!(ds.n, 30);
        assert_eq!(ds.blocks.len(), 3);
        assert_eq!(ds.blocks[0].kind, BlockKind::Continuous);
        assert_eq!(ds.blocks[1].kind, BlockKind::Categorical { classes: 2 });
        assert_eq!(ds.blocks[2].kind, BlockKind::Continuous);
        assert_eq!(ds.p_cols, 4);
        assert_eq!(ds.y_levels, vec!["no".to_string(), "yes".to_string()]);
        // "unknown" is an NA token, so color has levels blue < red and is
        // missing on every third row.
        assert!(!ds.mask.observed(2, 1));
        assert!(ds.mask.observed(1, 1));
        // One-hot: row 0 color red -> [blue=0, red=1].
        assert_eq!(ds.x[0 * ds.p_cols + 1], 0.0);
        assert_eq!(ds.x[0 * ds.p_cols + 2], 1.0);
        // Missing ages every fifth row.
        assert!(!ds.mask.observed(0, 0));
        assert_eq!(ds.x[0], 0.0);
    }

    #[test]
    fn csv_missing_response_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,outcome").unwrap();
        for i in 0..12 {
            if i == 5 {
                writeln!(f, "{},NA", i).unwrap();
            } else {
                writeln!(f, "{},{}", i, i % 2).unwrap();
            }
        }
        drop(f);
        let schema = CsvSchema {
            response: "outcome".into(),
            family: Family::Bernoulli,
            na_tokens: vec![],
            categorical: vec![],
        };
        let err = ingest_csv(&path, &schema, 8).unwrap_err();
        assert!(format!("{}", err).contains("missing response"));
    }
}
