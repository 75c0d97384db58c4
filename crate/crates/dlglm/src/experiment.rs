//! Experiment orchestration: resolve a versioned config into data, mask,
//! trained model, imputations, predictions, and metrics, with reproducible
//! file outputs under a results directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    ingest_csv, ingest_csv_raw, read_matrix_csv, simulate_xy, split_811, split_sizes,
    standardize_and_preimpute, standardize_with, write_json, write_matrix_csv, CsvSchema, Dataset,
    FeatureBlock, SimConfig, SimTruth, Split, Standardization,
};
use crate::error::{Error, Result};
use crate::glm::Family;
use crate::inference::{impute, mean_impute_fit_predict, predict, PredictionResult};
use crate::metrics::{
    accuracy, auc, classify_binary, cohens_kappa, confusion_binary, confusion_matrix, f1,
    mean_abs_error, percent_bias, ppv, MetricsReport,
};
use crate::missingness::{
    calibrate_phi0, draw_phi, simulate_mask, MechanismForm, MechanismKind, MechanismSpec,
    MechanismTemplate,
};
use crate::model::{DlglmModel, Method, ModelConfig, SchemaInfo};
use crate::tensor::Tensor;
use crate::train::{derive_seed, grid_search, model_from_outcome, GridSpec, OptimizerKind, TrainOptions};

pub const CONFIG_VERSION: u32 = 1;

/// Rows per importance-sampling call. Fixed so outputs are reproducible
/// regardless of dataset size.
const EVAL_CHUNK: usize = 512;
/// Seed-stream offsets keeping imputation and prediction draws disjoint
/// from the grid cells' training streams.
const IMPUTE_STREAM: usize = 1 << 20;
const PREDICT_STREAM: usize = 1 << 21;

/// What to run: one of the four network methods or the mean-imputation
/// baseline with a classical downstream fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMethod {
    Dlglm,
    Idlglm,
    Dlglmx,
    Idlglmx,
    Mean,
}

impl RunMethod {
    pub fn parse(s: &str) -> Result<RunMethod> {
        match s.to_ascii_lowercase().as_str() {
            "dlglm" => Ok(RunMethod::Dlglm),
            "idlglm" => Ok(RunMethod::Idlglm),
            "dlglmx" => Ok(RunMethod::Dlglmx),
            "idlglmx" => Ok(RunMethod::Idlglmx),
            "mean" | "mean-baseline" => Ok(RunMethod::Mean),
            other => Err(Error::Config(format!(
                "unknown method '{}' (expected dlglm, idlglm, dlglmx, idlglmx, or mean)",
                other
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RunMethod::Dlglm => "dlglm",
            RunMethod::Idlglm => "idlglm",
            RunMethod::Dlglmx => "dlglmx",
            RunMethod::Idlglmx => "idlglmx",
            RunMethod::Mean => "mean",
        }
    }

    /// The network method, or None for the baseline.
    pub fn model(&self) -> Option<Method> {
        match self {
            RunMethod::Dlglm => Some(Method::Dlglm),
            RunMethod::Idlglm => Some(Method::Idlglm),
            RunMethod::Dlglmx => Some(Method::Dlglmx),
            RunMethod::Idlglmx => Some(Method::Idlglmx),
            RunMethod::Mean => None,
        }
    }
}

pub fn mechanism_kind_parse(s: &str) -> Result<MechanismKind> {
    match s.to_ascii_uppercase().as_str() {
        "MCAR" => Ok(MechanismKind::Mcar),
        "MAR" => Ok(MechanismKind::Mar),
        "MNAR" => Ok(MechanismKind::Mnar),
        other => Err(Error::Config(format!(
            "unknown mechanism '{}' (expected MCAR, MAR, or MNAR)",
            other
        ))),
    }
}

pub fn mechanism_kind_name(kind: MechanismKind) -> &'static str {
    match kind {
        MechanismKind::Mcar => "MCAR",
        MechanismKind::Mar => "MAR",
        MechanismKind::Mnar => "MNAR",
    }
}

/// Where the data comes from: generated internally or read from a CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Simulate { sim: SimConfig },
    Csv { path: String, schema: CsvSchema },
}

/// Full experiment description. Serialized as versioned JSON; every field
/// has a default so sparse config files stay valid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub method: RunMethod,
    pub data: DataSource,
    /// Mask generator; None keeps the data's own missingness (NA tokens
    /// for CSV sources, fully observed for simulated data).
    pub mechanism: Option<MechanismTemplate>,
    pub dz: usize,
    pub h_y: usize,
    pub nhl_y: usize,
    pub include_y_in_imputer: bool,
    pub tau: f64,
    pub grid: GridSpec,
    pub k_train: usize,
    pub k_eval: usize,
    pub batch_size: usize,
    pub epochs_max: usize,
    pub patience: usize,
    pub epsilon: f64,
    pub optimizer: OptimizerKind,
    /// Report positive predictive value as TP/(TP+TN) instead of the
    /// standard TP/(TP+FP).
    pub ppv_literal: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 0,
            method: RunMethod::Dlglm,
            data: DataSource::Simulate { sim: SimConfig::default() },
            mechanism: Some(MechanismTemplate {
                kind: MechanismKind::Mnar,
                form: MechanismForm::Linear,
                target_missing_rate: 0.3,
                frac_features_missing: 0.5,
            }),
            dz: 2,
            h_y: 0,
            nhl_y: 0,
            include_y_in_imputer: true,
            tau: 1.0,
            grid: GridSpec {
                h: vec![64],
                nhl: vec![1],
                h_r: vec![16],
                nhl_r: vec![0],
                lr: vec![0.01],
            },
            k_train: 5,
            k_eval: 200,
            batch_size: 1000,
            epochs_max: 40,
            patience: 50,
            epsilon: 1e-4,
            optimizer: OptimizerKind::Adam,
            ppv_literal: false,
        }
    }
}

/// The reference hyperparameter grid for full-scale runs.
pub fn reference_grid() -> GridSpec {
    GridSpec {
        h: vec![128, 64],
        nhl: vec![0, 1, 2],
        h_r: vec![16, 32],
        nhl_r: vec![0, 1],
        lr: vec![0.001, 0.01],
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = crate::data::read_json(path)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {})",
                self.version, CONFIG_VERSION
            )));
        }
        if self.k_train == 0 || self.k_eval == 0 {
            return Err(Error::Config("k_train and k_eval must be at least 1".into()));
        }
        if self.batch_size == 0 || self.epochs_max == 0 {
            return Err(Error::Config("batch_size and epochs_max must be at least 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if self.grid.points().is_empty() {
            return Err(Error::Config("hyperparameter grid is empty".into()));
        }
        if let Some(t) = &self.mechanism {
            if !(0.0..1.0).contains(&t.target_missing_rate) {
                return Err(Error::Config("target_missing_rate must be in [0, 1)".into()));
            }
            if !(0.0..=1.0).contains(&t.frac_features_missing) {
                return Err(Error::Config("frac_features_missing must be in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Grid with the missingness-net axes collapsed for methods that carry
    /// no missingness model.
    pub fn resolved_grid(&self) -> GridSpec {
        let mut grid = self.grid.clone();
        if let Some(m) = self.method.model() {
            if !m.non_ignorable() {
                grid.h_r = vec![0];
                grid.nhl_r = vec![0];
            }
        }
        grid
    }

    pub fn mechanism_label(&self) -> String {
        match &self.mechanism {
            Some(t) => mechanism_kind_name(t.kind).to_string(),
            None => "none".to_string(),
        }
    }

    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            k_train: self.k_train,
            lr: 0.0,
            batch_size: self.batch_size,
            epochs_max: self.epochs_max,
            patience: self.patience,
            epsilon: self.epsilon,
            seed: self.seed,
            optimizer: self.optimizer,
        }
    }
}

/// Reproducibility record written into every output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: Option<ExperimentConfig>,
    pub n: usize,
    pub p_cols: usize,
    pub split_sizes: Option<BTreeMap<String, usize>>,
    pub realized_missing_rate: Option<f64>,
    pub files: Vec<String>,
}

fn manifest(command: &str, seed: u64, config: Option<&ExperimentConfig>) -> Manifest {
    Manifest {
        version: CONFIG_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed,
        config: config.cloned(),
        n: 0,
        p_cols: 0,
        split_sizes: None,
        realized_missing_rate: None,
        files: Vec::new(),
    }
}

/// One-hot-expanded column headers, one per design-matrix column.
pub fn column_headers(blocks: &[FeatureBlock]) -> Vec<String> {
    let mut out = Vec::new();
    for b in blocks {
        if b.is_continuous() {
            out.push(b.name.clone());
        } else {
            for k in 0..b.width() {
                out.push(format!("{}.{}", b.name, k));
            }
        }
    }
    out
}

fn block_headers(blocks: &[FeatureBlock]) -> Vec<String> {
    blocks.iter().map(|b| b.name.clone()).collect()
}

fn sim_config(cfg: &ExperimentConfig) -> Result<&SimConfig> {
    match &cfg.data {
        DataSource::Simulate { sim } => Ok(sim),
        DataSource::Csv { .. } => {
            Err(Error::Config("this command needs a simulated data source".into()))
        }
    }
}

/// Generate the complete dataset and write X.csv, Y.csv, truth.json, and
/// manifest.json into `out`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let sim = sim_config(cfg)?;
    fs::create_dir_all(out)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let (ds, truth) = simulate_xy(sim, &mut rng)?;
    write_matrix_csv(&out.join("X.csv"), &column_headers(&ds.blocks), ds.n, ds.p_cols, &ds.x)?;
    write_matrix_csv(&out.join("Y.csv"), &["y".to_string()], ds.n, 1, &ds.y)?;
    write_json(&out.join("truth.json"), &truth)?;
    let mut m = manifest("simulate", cfg.seed, Some(cfg));
    m.n = ds.n;
    m.p_cols = ds.p_cols;
    m.files = vec!["X.csv".into(), "Y.csv".into(), "truth.json".into(), "manifest.json".into()];
    write_json(&out.join("manifest.json"), &m)?;
    Ok(m)
}

/// Draw a mask for complete data read from `data_dir` (X.csv + Y.csv) and
/// write R.csv, mechanism.json, and manifest.json into `out`.
pub fn cmd_mask(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<(Manifest, f64)> {
    cfg.validate()?;
    let template = cfg
        .mechanism
        .as_ref()
        .ok_or_else(|| Error::Config("mask command needs a mechanism in the config".into()))?;
    let (headers, n, p, x) = read_matrix_csv(&data_dir.join("X.csv"))?;
    let (_, ny, wy, yv) = read_matrix_csv(&data_dir.join("Y.csv"))?;
    if ny != n || wy != 1 {
        return Err(Error::Data("Y.csv must hold one column with one value per X.csv row".into()));
    }
    fs::create_dir_all(out)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut spec = draw_phi(template, p, &mut rng)?;
    calibrate_phi0(&mut spec, &x, n, p, &yv)?;
    let mask = simulate_mask(&spec, &x, n, p, &yv, &mut rng)?;
    let rate = mask.missing_rate();
    let mask_data: Vec<f64> = (0..n).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| mask.value(i, j)).collect();
    write_matrix_csv(&out.join("R.csv"), &headers, n, p, &mask_data)?;
    write_json(&out.join("mechanism.json"), &spec)?;
    let mut m = manifest("mask", cfg.seed, Some(cfg));
    m.n = n;
    m.p_cols = p;
    m.realized_missing_rate = Some(rate);
    m.files = vec!["R.csv".into(), "mechanism.json".into(), "manifest.json".into()];
    write_json(&out.join("manifest.json"), &m)?;
    Ok((m, rate))
}

struct Prepared {
    ds: Dataset,
    /// Complete data-scale design matrix when ground truth is known.
    raw_x: Option<Vec<f64>>,
    truth: Option<SimTruth>,
    mech: Option<MechanismSpec>,
}

fn apply_mechanism(
    ds: &mut Dataset,
    template: &MechanismTemplate,
    rng: &mut ChaCha20Rng,
) -> Result<MechanismSpec> {
    if ds.blocks.iter().any(|b| !b.is_continuous()) {
        return Err(Error::Config("mechanism masking needs all-continuous features".into()));
    }
    if ds.mask.count_missing() > 0 {
        return Err(Error::Mask("mechanism masking needs complete input data".into()));
    }
    let p = ds.p_cols;
    let mut spec = draw_phi(template, p, rng)?;
    calibrate_phi0(&mut spec, &ds.x, ds.n, p, &ds.y)?;
    ds.mask = simulate_mask(&spec, &ds.x, ds.n, p, &ds.y, rng)?;
    Ok(spec)
}

fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared> {
    match &cfg.data {
        DataSource::Simulate { sim } => {
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
            let (mut ds, truth) = simulate_xy(sim, &mut rng)?;
            let raw_x = ds.x.clone();
            let mech = match &cfg.mechanism {
                Some(t) => Some(apply_mechanism(&mut ds, t, &mut rng)?),
                None => None,
            };
            ds.split = split_811(ds.n, &mut rng);
            standardize_and_preimpute(&mut ds)?;
            Ok(Prepared { ds, raw_x: Some(raw_x), truth: Some(truth), mech })
        }
        DataSource::Csv { path, schema } => match &cfg.mechanism {
            None => {
                let ds = ingest_csv(Path::new(path), schema, cfg.seed)?;
                Ok(Prepared { ds, raw_x: None, truth: None, mech: None })
            }
            Some(t) => {
                let mut ds = ingest_csv_raw(Path::new(path), schema)?;
                let raw_x = ds.x.clone();
                let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
                let mech = apply_mechanism(&mut ds, t, &mut rng)?;
                ds.split = split_811(ds.n, &mut rng);
                standardize_and_preimpute(&mut ds)?;
                Ok(Prepared { ds, raw_x: Some(raw_x), truth: None, mech: Some(mech) })
            }
        },
    }
}

/// Impute the given rows in fixed-size chunks; returns the full
/// standardized matrix with imputations spliced in, plus per-row ESS.
fn impute_all(
    model: &DlglmModel,
    ds: &Dataset,
    rows: &[usize],
    k: usize,
    master_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = ds.p_cols;
    let mut x_full = ds.x.clone();
    let mut ess = Vec::with_capacity(rows.len());
    for (ci, chunk) in rows.chunks(EVAL_CHUNK).enumerate() {
        let r = impute(model, ds, chunk, k, derive_seed(master_seed, IMPUTE_STREAM + ci))?;
        for (local, &row) in chunk.iter().enumerate() {
            x_full[row * p..(row + 1) * p]
                .copy_from_slice(&r.x_imputed[local * p..(local + 1) * p]);
        }
        ess.extend_from_slice(&r.ess);
    }
    Ok((x_full, ess))
}

fn predict_rows(
    model: &DlglmModel,
    ds: &Dataset,
    rows: &[usize],
    k: usize,
    master_seed: u64,
) -> Result<PredictionResult> {
    let mut out = PredictionResult {
        rows: rows.to_vec(),
        y_pred: Vec::new(),
        y_prob: if ds.family.is_discrete() { Some(Vec::new()) } else { None },
        ess: Vec::new(),
    };
    for (ci, chunk) in rows.chunks(EVAL_CHUNK).enumerate() {
        let r = predict(model, ds, chunk, k, derive_seed(master_seed, PREDICT_STREAM + ci))?;
        out.y_pred.extend_from_slice(&r.y_pred);
        out.ess.extend_from_slice(&r.ess);
        if let (Some(acc), Some(part)) = (out.y_prob.as_mut(), r.y_prob) {
            acc.extend(part);
        }
    }
    Ok(out)
}

/// Standardize complete data-scale rows with the dataset's transform.
fn standardize_rows(ds: &Dataset, raw_x: &[f64], rows: &[usize]) -> Vec<f64> {
    let p = ds.p_cols;
    let st = ds.standardization.as_ref();
    let mut out = Vec::with_capacity(rows.len() * p);
    for &i in rows {
        for c in 0..p {
            let v = raw_x[i * p + c];
            out.push(match st {
                Some(st) => (v - st.mean[c]) / st.sd[c],
                None => v,
            });
        }
    }
    out
}

/// Plug complete covariates straight into the response network.
fn plugin_predict(model: &DlglmModel, ds: &Dataset, raw_x: &[f64], rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    let p = ds.p_cols;
    let xs = standardize_rows(ds, raw_x, rows);
    let x = Tensor::matrix(rows.len(), p, xs)?;
    let eta = model.glm_eta(&x)?;
    let ew = eta.cols();
    let data = eta.to_vec();
    Ok((0..rows.len()).map(|i| ds.family.inv_link(&data[i * ew..(i + 1) * ew])).collect())
}

/// Response-scale scalar used for L1 scoring: class-1 probability for
/// Bernoulli, the mean for Gaussian.
fn response_scalar(family: Family, mean: &[f64]) -> Option<f64> {
    match family {
        Family::Gaussian => Some(mean[0]),
        Family::Bernoulli => Some(*mean.last().unwrap()),
        Family::Categorical { .. } => None,
    }
}

fn fill_classification(
    report: &mut MetricsReport,
    family: Family,
    y_true: &[f64],
    y_pred: &[f64],
    ppv_literal: bool,
) {
    match family {
        Family::Gaussian => {}
        Family::Bernoulli => {
            let class = classify_binary(y_pred);
            if let Ok(c) = confusion_binary(y_true, &class) {
                report.accuracy = Some(accuracy(&c));
                report.ppv = ppv(&c, ppv_literal).ok();
                report.f1 = f1(&c).ok();
            }
            if let Ok(cm) = confusion_matrix(y_true, &class, 2) {
                report.kappa = cohens_kappa(&cm).ok();
            }
            report.auc = auc(y_true, y_pred).ok();
        }
        Family::Categorical { classes } => {
            if let Ok(cm) = confusion_matrix(y_true, y_pred, classes) {
                let total: usize = cm.iter().map(|r| r.iter().sum::<usize>()).sum();
                let diag: usize = (0..classes).map(|c| cm[c][c]).sum();
                if total > 0 {
                    report.accuracy = Some(diag as f64 / total as f64);
                }
                report.kappa = cohens_kappa(&cm).ok();
            }
        }
    }
}

/// Mean-imputed data-scale matrix for the baseline: continuous blanks take
/// the training mean, categorical blanks the training mode.
fn baseline_imputed_matrix(ds: &Dataset) -> Vec<f64> {
    let p = ds.p_cols;
    let mut x = ds.x.clone();
    let train: Vec<usize> = ds.rows_in(Split::Train);
    for (b, block) in ds.blocks.iter().enumerate() {
        if block.is_continuous() {
            continue;
        }
        let width = block.width();
        let mut counts = vec![0usize; width];
        for &i in &train {
            if ds.mask.observed(i, b) {
                for c in 0..width {
                    if ds.x[i * p + block.col_start + c] == 1.0 {
                        counts[c] += 1;
                    }
                }
            }
        }
        let mode = counts
            .iter()
            .enumerate()
            .max_by_key(|&(_, n)| *n)
            .map(|(c, _)| c)
            .unwrap_or(0);
        for i in 0..ds.n {
            if !ds.mask.observed(i, b) {
                for c in 0..width {
                    x[i * p + block.col_start + c] = f64::from(c == mode);
                }
            }
        }
    }
    ds.unstandardize_x(&x)
}

fn imputation_l1_on(
    ds: &Dataset,
    raw_x: &[f64],
    imputed_data_scale: &[f64],
) -> Option<f64> {
    let p = ds.p_cols;
    let mut tv = Vec::new();
    let mut ev = Vec::new();
    for i in 0..ds.n {
        for (b, block) in ds.blocks.iter().enumerate() {
            if block.is_continuous() && !ds.mask.observed(i, b) {
                let c = block.col_start;
                tv.push(raw_x[i * p + c]);
                ev.push(imputed_data_scale[i * p + c]);
            }
        }
    }
    mean_abs_error(&tv, &ev).ok()
}

fn write_predictions_csv(
    path: &Path,
    rows: &[usize],
    y_true: Option<&[f64]>,
    y_pred: &[f64],
    y_prob: Option<&[Vec<f64>]>,
    ess: Option<&[f64]>,
    y_levels: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["row".to_string()];
    if y_true.is_some() {
        header.push("y_true".into());
    }
    header.push("y_pred".into());
    let n_prob = y_prob.map(|p| p.first().map_or(0, Vec::len)).unwrap_or(0);
    for c in 0..n_prob {
        let name = y_levels.get(c).cloned().unwrap_or_else(|| c.to_string());
        header.push(format!("prob_{}", name));
    }
    if ess.is_some() {
        header.push("ess".into());
    }
    w.write_record(&header)?;
    for (i, &row) in rows.iter().enumerate() {
        let mut rec = vec![format!("{}", row)];
        if let Some(yt) = y_true {
            rec.push(format!("{}", yt[i]));
        }
        rec.push(format!("{}", y_pred[i]));
        if let Some(probs) = y_prob {
            for v in &probs[i] {
                rec.push(format!("{}", v));
            }
        }
        if let Some(e) = ess {
            rec.push(format!("{}", e[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_ess_csv(path: &Path, rows: &[usize], ess: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "ess"])?;
    for (i, &row) in rows.iter().enumerate() {
        w.write_record(&[format!("{}", row), format!("{}", ess[i])])?;
    }
    w.flush()?;
    Ok(())
}

fn write_leaderboard(path: &Path, gsr: &crate::train::GridSearchResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "index", "h", "nhl", "h_r", "nhl_r", "lr", "param_count", "epochs_run", "stopped_early",
        "best_valid", "selected", "error",
    ])?;
    for o in &gsr.outcomes {
        let failed = o.error.is_some();
        w.write_record(&[
            format!("{}", o.index),
            format!("{}", o.point.h),
            format!("{}", o.point.nhl),
            format!("{}", o.point.h_r),
            format!("{}", o.point.nhl_r),
            format!("{}", o.point.lr),
            if failed { String::new() } else { format!("{}", o.param_count) },
            format!("{}", o.epochs_run),
            format!("{}", o.stopped_early),
            if failed { String::new() } else { format!("{}", o.best_valid) },
            format!("{}", o.index == gsr.best_index),
            o.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_epoch_log(path: &Path, log: &[crate::train::EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_bound", "valid_bound", "elapsed_ms"])?;
    for r in log {
        w.write_record(&[
            format!("{}", r.epoch),
            format!("{}", r.train_bound),
            format!("{}", r.valid_bound),
            format!("{}", r.elapsed_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready long-format table: one row per reported metric.
fn write_plot_data(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mechanism", "method", "seed", "metric", "value"])?;
    let rows: Vec<(&str, Option<f64>)> = vec![
        ("best_valid_bound", report.best_valid_bound),
        ("imputation_l1", report.imputation_l1),
        ("percent_bias", report.percent_bias),
        ("pred_l1_complete", report.pred_l1_complete),
        ("pred_l1_incomplete", report.pred_l1_incomplete),
        ("accuracy", report.accuracy),
        ("kappa", report.kappa),
        ("auc", report.auc),
        ("ppv", report.ppv),
        ("f1", report.f1),
        ("ess_mean", report.ess_mean),
    ];
    for (name, value) in rows {
        if let Some(v) = value {
            w.write_record(&[
                report.mechanism.clone(),
                report.method.clone(),
                format!("{}", report.seed),
                name.to_string(),
                format!("{}", v),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn mean_of(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Full pipeline: prepare data, train (grid search for network methods),
/// impute, predict on the test split, evaluate, and write every artifact
/// into `out`. Returns the metrics report.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<MetricsReport> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let prep = prepare_data(cfg)?;
    let ds = &prep.ds;
    let mut files: Vec<String> = Vec::new();

    if let Some(raw_x) = &prep.raw_x {
        write_matrix_csv(&out.join("X.csv"), &column_headers(&ds.blocks), ds.n, ds.p_cols, raw_x)?;
        files.push("X.csv".into());
    }
    write_matrix_csv(&out.join("Y.csv"), &["y".to_string()], ds.n, 1, &ds.y)?;
    files.push("Y.csv".into());
    let mask_data: Vec<f64> = (0..ds.n)
        .flat_map(|i| (0..ds.n_blocks()).map(move |j| (i, j)))
        .map(|(i, j)| ds.mask.value(i, j))
        .collect();
    write_matrix_csv(&out.join("R.csv"), &block_headers(&ds.blocks), ds.n, ds.n_blocks(), &mask_data)?;
    files.push("R.csv".into());
    if let Some(truth) = &prep.truth {
        write_json(&out.join("truth.json"), truth)?;
        files.push("truth.json".into());
    }
    if let Some(mech) = &prep.mech {
        write_json(&out.join("mechanism.json"), mech)?;
        files.push("mechanism.json".into());
    }

    let mut report = MetricsReport::new(cfg.method.name(), &cfg.mechanism_label(), cfg.seed);
    let sizes = split_sizes(&ds.split);
    report.n_train = sizes.get("train").copied().unwrap_or(0);
    report.n_valid = sizes.get("valid").copied().unwrap_or(0);
    report.n_test = sizes.get("test").copied().unwrap_or(0);

    let test_rows = ds.rows_in(Split::Test);
    let miss_rows: Vec<usize> = (0..ds.n).filter(|&i| ds.mask.row_has_missing(i)).collect();

    let imputed_data_scale: Vec<f64>;
    let pred_probs: Vec<Vec<f64>>;
    let mut pred_ess: Option<Vec<f64>> = None;
    let mut complete_probs: Option<Vec<Vec<f64>>> = None;
    let data_scale_coef: Option<Vec<f64>>;

    match cfg.method.model() {
        None => {
            let fit = mean_impute_fit_predict(ds, &test_rows)?;
            imputed_data_scale = baseline_imputed_matrix(ds);
            pred_probs = match (&fit.y_prob, ds.family) {
                (Some(p), _) => p.clone(),
                (None, _) => fit.y_pred.iter().map(|&v| vec![v]).collect(),
            };
            if let Some(raw_x) = &prep.raw_x {
                let p = ds.p_cols;
                complete_probs = Some(
                    test_rows
                        .iter()
                        .map(|&i| {
                            let eta: f64 = fit.intercept[0]
                                + fit.coef[0]
                                    .iter()
                                    .zip(&raw_x[i * p..(i + 1) * p])
                                    .map(|(c, x)| c * x)
                                    .sum::<f64>();
                            ds.family.inv_link(&[eta])
                        })
                        .collect(),
                );
            }
            data_scale_coef = Some(fit.coef[0].clone());
        }
        Some(method) => {
            if !method.latent() && ds.blocks.iter().any(|b| !b.is_continuous()) {
                return Err(Error::Config(
                    "known-covariate methods need all-continuous features".into(),
                ));
            }
            let base = ModelConfig {
                method,
                family: ds.family,
                dz: cfg.dz,
                h: 0,
                nhl: 0,
                h_y: cfg.h_y,
                nhl_y: cfg.nhl_y,
                h_r: 0,
                nhl_r: 0,
                include_y_in_imputer: cfg.include_y_in_imputer,
                tau: cfg.tau,
            };
            let schema = SchemaInfo::from_dataset(ds);
            let grid = cfg.resolved_grid();
            let gsr = grid_search(&base, &schema, ds, &cfg.train_options(), &grid, cfg.seed)?;
            write_leaderboard(&out.join("leaderboard.csv"), &gsr)?;
            files.push("leaderboard.csv".into());
            for o in &gsr.outcomes {
                if o.error.is_none() {
                    let name = format!("epoch_log_{:03}.csv", o.index);
                    write_epoch_log(&out.join(&name), &o.log)?;
                    files.push(name);
                }
            }
            let best = gsr.best();
            report.best_valid_bound = Some(best.best_valid);
            report.epochs_run = Some(best.epochs_run);
            report.param_count = Some(best.param_count);
            let model = model_from_outcome(&base, &schema, best, cfg.seed)?;
            model.save_with(&out.join("model.json"), ds.standardization.as_ref())?;
            files.push("model.json".into());

            let x_full = if miss_rows.is_empty() {
                ds.x.clone()
            } else {
                let (x_full, ess) = impute_all(&model, ds, &miss_rows, cfg.k_eval, cfg.seed)?;
                report.ess_mean = mean_of(&ess);
                write_ess_csv(&out.join("imputation_ess.csv"), &miss_rows, &ess)?;
                files.push("imputation_ess.csv".into());
                x_full
            };
            imputed_data_scale = ds.unstandardize_x(&x_full);

            let pr = predict_rows(&model, ds, &test_rows, cfg.k_eval, cfg.seed)?;
            pred_probs = match (pr.y_prob, ds.family) {
                (Some(p), _) => p,
                (None, _) => pr.y_pred.iter().map(|&v| vec![v]).collect(),
            };
            pred_ess = Some(pr.ess);
            if let Some(raw_x) = &prep.raw_x {
                complete_probs = Some(plugin_predict(&model, ds, raw_x, &test_rows)?);
            }
            data_scale_coef = model
                .extract_coefficients(ds.standardization.as_ref())
                .ok()
                .map(|c| c.coef[0].clone());
        }
    }

    write_matrix_csv(
        &out.join("imputed.csv"),
        &column_headers(&ds.blocks),
        ds.n,
        ds.p_cols,
        &imputed_data_scale,
    )?;
    files.push("imputed.csv".into());

    if prep.mech.is_some() {
        if let Some(raw_x) = &prep.raw_x {
            report.imputation_l1 = imputation_l1_on(ds, raw_x, &imputed_data_scale);
        }
    }
    if let (Some(truth), Some(coef)) = (&prep.truth, &data_scale_coef) {
        report.percent_bias = percent_bias(&truth.beta, coef).ok();
    }

    let y_test: Vec<f64> = test_rows.iter().map(|&i| ds.y[i]).collect();
    let pred_scalar: Vec<f64> = pred_probs
        .iter()
        .map(|m| response_scalar(ds.family, m).unwrap_or_else(|| argmax(m) as f64))
        .collect();
    let target: Vec<f64> = match &prep.truth {
        Some(truth) => test_rows.iter().map(|&i| truth.mu[i]).collect(),
        None => y_test.clone(),
    };
    if !matches!(ds.family, Family::Categorical { .. }) {
        report.pred_l1_incomplete = mean_abs_error(&target, &pred_scalar).ok();
        if let Some(cp) = &complete_probs {
            let cs: Vec<f64> =
                cp.iter().map(|m| response_scalar(ds.family, m).unwrap()).collect();
            report.pred_l1_complete = mean_abs_error(&target, &cs).ok();
        }
    }

    let class_pred: Vec<f64> = match ds.family {
        Family::Categorical { .. } => pred_probs.iter().map(|m| argmax(m) as f64).collect(),
        _ => pred_scalar.clone(),
    };
    fill_classification(&mut report, ds.family, &y_test, &class_pred, cfg.ppv_literal);

    write_predictions_csv(
        &out.join("predictions_incomplete.csv"),
        &test_rows,
        Some(&y_test),
        &pred_scalar,
        if ds.family.is_discrete() { Some(&pred_probs) } else { None },
        pred_ess.as_deref(),
        &ds.y_levels,
    )?;
    files.push("predictions_incomplete.csv".into());
    if let Some(cp) = &complete_probs {
        let cs: Vec<f64> = cp
            .iter()
            .map(|m| response_scalar(ds.family, m).unwrap_or_else(|| argmax(m) as f64))
            .collect();
        write_predictions_csv(
            &out.join("predictions_complete.csv"),
            &test_rows,
            Some(&y_test),
            &cs,
            if ds.family.is_discrete() { Some(cp) } else { None },
            None,
            &ds.y_levels,
        )?;
        files.push("predictions_complete.csv".into());
    }

    write_json(&out.join("metrics.json"), &report)?;
    files.push("metrics.json".into());
    write_plot_data(&out.join("plot_data.csv"), &report)?;
    files.push("plot_data.csv".into());

    let mut m = manifest("run", cfg.seed, Some(cfg));
    m.n = ds.n;
    m.p_cols = ds.p_cols;
    m.split_sizes = Some(sizes);
    m.realized_missing_rate = Some(ds.mask.missing_rate());
    files.push("manifest.json".into());
    m.files = files;
    write_json(&out.join("manifest.json"), &m)?;
    Ok(report)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Rebuild a dataset for a saved model from X.csv (+ optional Y.csv, R.csv)
/// in `data_dir`, on the model's standardized scale.
fn dataset_for_model(
    model: &DlglmModel,
    st: Option<&Standardization>,
    data_dir: &Path,
    need_y: bool,
) -> Result<Dataset> {
    let schema = &model.schema;
    let (_, n, cols, x) = read_matrix_csv(&data_dir.join("X.csv"))?;
    if cols != schema.p_cols {
        return Err(Error::Data(format!(
            "X.csv has {} columns, the model expects {}",
            cols, schema.p_cols
        )));
    }
    let y_path = data_dir.join("Y.csv");
    let y = if y_path.exists() {
        let (_, ny, wy, yv) = read_matrix_csv(&y_path)?;
        if ny != n || wy != 1 {
            return Err(Error::Data("Y.csv must hold one column with one value per row".into()));
        }
        yv
    } else if need_y {
        return Err(Error::Data("this command needs Y.csv next to X.csv".into()));
    } else {
        vec![0.0; n]
    };
    let r_path = data_dir.join("R.csv");
    let mask = if r_path.exists() {
        let (_, nr, pr, rv) = read_matrix_csv(&r_path)?;
        if nr != n || pr != schema.blocks.len() {
            return Err(Error::Data(format!(
                "R.csv must be {} x {} to match the model's feature blocks",
                n,
                schema.blocks.len()
            )));
        }
        let mut mask = crate::missingness::MaskMatrix::ones(n, pr);
        for i in 0..n {
            for j in 0..pr {
                let v = rv[i * pr + j];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Data("R.csv entries must be 0 or 1".into()));
                }
                mask.set(i, j, v == 1.0);
            }
        }
        mask
    } else {
        crate::missingness::MaskMatrix::ones(n, schema.blocks.len())
    };
    let identity = Standardization {
        mean: vec![0.0; schema.p_cols],
        sd: vec![1.0; schema.p_cols],
    };
    let mut ds = Dataset {
        x,
        n,
        p_cols: schema.p_cols,
        y,
        family: model.config.family,
        mask,
        blocks: schema.blocks.clone(),
        split: vec![Split::Test; n],
        standardization: None,
        y_levels: Vec::new(),
    };
    standardize_with(&mut ds, st.unwrap_or(&identity))?;
    Ok(ds)
}

/// Impute a data directory with a saved model; writes imputed.csv,
/// imputation_ess.csv, and manifest.json into `out`.
pub fn cmd_impute(
    model_path: &Path,
    data_dir: &Path,
    out: &Path,
    k: usize,
    seed: u64,
) -> Result<Manifest> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let (model, st) = DlglmModel::load_with(model_path)?;
    let ds = dataset_for_model(&model, st.as_ref(), data_dir, true)?;
    fs::create_dir_all(out)?;
    let miss_rows: Vec<usize> = (0..ds.n).filter(|&i| ds.mask.row_has_missing(i)).collect();
    let mut files: Vec<String> = Vec::new();
    let x_full = if miss_rows.is_empty() {
        ds.x.clone()
    } else {
        let (x_full, ess) = impute_all(&model, &ds, &miss_rows, k, seed)?;
        write_ess_csv(&out.join("imputation_ess.csv"), &miss_rows, &ess)?;
        files.push("imputation_ess.csv".into());
        x_full
    };
    let data_scale = ds.unstandardize_x(&x_full);
    write_matrix_csv(&out.join("imputed.csv"), &column_headers(&ds.blocks), ds.n, ds.p_cols, &data_scale)?;
    files.insert(0, "imputed.csv".into());
    let mut m = manifest("impute", seed, None);
    m.n = ds.n;
    m.p_cols = ds.p_cols;
    m.realized_missing_rate = Some(ds.mask.missing_rate());
    files.push("manifest.json".into());
    m.files = files;
    write_json(&out.join("manifest.json"), &m)?;
    Ok(m)
}

/// Predict a data directory with a saved model; writes predictions.csv and
/// manifest.json into `out`. Y.csv is optional and never read by the
/// prediction path.
pub fn cmd_predict(
    model_path: &Path,
    data_dir: &Path,
    out: &Path,
    k: usize,
    seed: u64,
) -> Result<Manifest> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let (model, st) = DlglmModel::load_with(model_path)?;
    let ds = dataset_for_model(&model, st.as_ref(), data_dir, false)?;
    fs::create_dir_all(out)?;
    let rows: Vec<usize> = (0..ds.n).collect();
    let pr = predict_rows(&model, &ds, &rows, k, seed)?;
    let has_y = data_dir.join("Y.csv").exists();
    let y: Vec<f64> = ds.y.clone();
    write_predictions_csv(
        &out.join("predictions.csv"),
        &rows,
        if has_y { Some(&y) } else { None },
        &pr.y_pred,
        pr.y_prob.as_deref(),
        Some(&pr.ess),
        &ds.y_levels,
    )?;
    let mut m = manifest("predict", seed, None);
    m.n = ds.n;
    m.p_cols = ds.p_cols;
    m.files = vec!["predictions.csv".into(), "manifest.json".into()];
    write_json(&out.join("manifest.json"), &m)?;
    Ok(m)
}

fn read_predictions_csv(path: &Path) -> Result<(Vec<usize>, Vec<f64>, Option<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let row_col = col("row")
        .ok_or_else(|| Error::Data(format!("{}: no 'row' column", path.display())))?;
    let pred_col = col("y_pred")
        .ok_or_else(|| Error::Data(format!("{}: no 'y_pred' column", path.display())))?;
    let true_col = col("y_true");
    let mut rows = Vec::new();
    let mut y_pred = Vec::new();
    let mut y_true = true_col.map(|_| Vec::new());
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("{}: bad numeric field", path.display())))
        };
        rows.push(parse(row_col)? as usize);
        y_pred.push(parse(pred_col)?);
        if let (Some(c), Some(acc)) = (true_col, y_true.as_mut()) {
            acc.push(parse(c)?);
        }
    }
    Ok((rows, y_pred, y_true))
}

/// Recompute metrics from files: predictions (and optionally imputations)
/// in `run_dir` scored against the reference data in `data_dir`. Writes
/// metrics.json into `out`.
pub fn cmd_evaluate(data_dir: &Path, run_dir: &Path, out: &Path) -> Result<MetricsReport> {
    let run_manifest: Option<Manifest> = crate::data::read_json(&run_dir.join("manifest.json")).ok();
    let cfg = run_manifest.as_ref().and_then(|m| m.config.clone());
    let method = cfg.as_ref().map_or("unknown".to_string(), |c| c.method.name().to_string());
    let mechanism = cfg.as_ref().map_or("none".to_string(), |c| c.mechanism_label());
    let seed = run_manifest.as_ref().map_or(0, |m| m.seed);
    let ppv_literal = cfg.as_ref().is_some_and(|c| c.ppv_literal);
    let mut report = MetricsReport::new(&method, &mechanism, seed);

    let truth: Option<SimTruth> = crate::data::read_json(&data_dir.join("truth.json")).ok();

    let pred_path = if run_dir.join("predictions_incomplete.csv").exists() {
        run_dir.join("predictions_incomplete.csv")
    } else {
        run_dir.join("predictions.csv")
    };
    if !pred_path.exists() {
        return Err(Error::Metric(format!(
            "no predictions file found in {}",
            run_dir.display()
        )));
    }
    let (rows, y_pred, y_true_col) = read_predictions_csv(&pred_path)?;
    let y_true: Option<Vec<f64>> = match y_true_col {
        Some(v) => Some(v),
        None => {
            let y_path = data_dir.join("Y.csv");
            if y_path.exists() {
                let (_, _, _, yv) = read_matrix_csv(&y_path)?;
                Some(rows.iter().map(|&i| yv[i]).collect())
            } else {
                None
            }
        }
    };
    report.n_test = rows.len();

    let target: Option<Vec<f64>> = match (&truth, &y_true) {
        (Some(t), _) => Some(rows.iter().map(|&i| t.mu[i]).collect()),
        (None, Some(y)) => Some(y.clone()),
        (None, None) => None,
    };
    if let Some(target) = &target {
        report.pred_l1_incomplete = mean_abs_error(target, &y_pred).ok();
        let complete = run_dir.join("predictions_complete.csv");
        if complete.exists() {
            let (crows, cpred, _) = read_predictions_csv(&complete)?;
            let ctarget: Vec<f64> = match &truth {
                Some(t) => crows.iter().map(|&i| t.mu[i]).collect(),
                None => target.clone(),
            };
            report.pred_l1_complete = mean_abs_error(&ctarget, &cpred).ok();
        }
    }

    if let Some(y) = &y_true {
        let binary = y.iter().all(|&v| v == 0.0 || v == 1.0)
            && y_pred.iter().all(|&v| (0.0..=1.0).contains(&v));
        if binary {
            fill_classification(&mut report, Family::Bernoulli, y, &y_pred, ppv_literal);
        }
    }

    let imputed_path = run_dir.join("imputed.csv");
    let x_path = data_dir.join("X.csv");
    let r_path = data_dir.join("R.csv");
    if imputed_path.exists() && x_path.exists() && r_path.exists() {
        let (_, n, p, x_true) = read_matrix_csv(&x_path)?;
        let (_, ni, pi, x_imp) = read_matrix_csv(&imputed_path)?;
        let (_, nr, pr, rv) = read_matrix_csv(&r_path)?;
        if ni != n || nr != n {
            return Err(Error::Metric("imputed.csv, X.csv, and R.csv row counts differ".into()));
        }
        if pi != p {
            return Err(Error::Metric("imputed.csv and X.csv column counts differ".into()));
        }
        // Works column-aligned when features are continuous (one column per
        // block); one-hot data needs the run pipeline's block layout.
        if pr == p {
            let mut tv = Vec::new();
            let mut ev = Vec::new();
            for i in 0..n {
                for j in 0..p {
                    if rv[i * p + j] == 0.0 {
                        tv.push(x_true[i * p + j]);
                        ev.push(x_imp[i * p + j]);
                    }
                }
            }
            report.imputation_l1 = mean_abs_error(&tv, &ev).ok();
        }
    }

    fs::create_dir_all(out)?;
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_json;

    fn smoke_config(method: RunMethod, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            seed,
            method,
            data: DataSource::Simulate {
                sim: SimConfig { n: 400, p: 4, d: 2, ..Default::default() },
            },
            grid: GridSpec {
                h: vec![8],
                nhl: vec![1],
                h_r: vec![4],
                nhl_r: vec![0],
                lr: vec![0.01],
            },
            k_train: 2,
            k_eval: 10,
            batch_size: 200,
            epochs_max: 3,
            ..Default::default()
        }
    }

    #[test]
    fn config_round_trips_and_rejects_bad_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let cfg = smoke_config(RunMethod::Dlglm, 7);
        write_json(&path, &cfg).unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(loaded.seed, 7);
        assert_eq!(loaded.method, RunMethod::Dlglm);
        assert_eq!(loaded.grid.h, vec![8]);

        let mut bad = cfg;
        bad.version = 99;
        write_json(&path, &bad).unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
    }

    #[test]
    fn sparse_config_files_fill_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, "{\"seed\": 3, \"method\": \"idlglm\"}\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.method, RunMethod::Idlglm);
        assert_eq!(cfg.k_train, 5);
        assert_eq!(cfg.version, CONFIG_VERSION);
        let grid = cfg.resolved_grid();
        assert_eq!(grid.h_r, vec![0]);
        assert_eq!(grid.nhl_r, vec![0]);
    }

    #[test]
    fn simulate_writes_four_identical_files_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            data: DataSource::Simulate { sim: SimConfig { n: 100, p: 4, ..Default::default() } },
            ..smoke_config(RunMethod::Dlglm, 11)
        };
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        cmd_simulate(&cfg, &a).unwrap();
        cmd_simulate(&cfg, &b).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, vec!["X.csv", "Y.csv", "manifest.json", "truth.json"]);
        for name in &names {
            let fa = std::fs::read(a.join(name)).unwrap();
            let fb = std::fs::read(b.join(name)).unwrap();
            assert_eq!(fa, fb, "{} differs between identical runs", name);
        }
    }

    #[test]
    fn mask_reports_rate_near_target() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            data: DataSource::Simulate { sim: SimConfig { n: 4000, p: 4, ..Default::default() } },
            ..smoke_config(RunMethod::Dlglm, 5)
        };
        let data = dir.path().join("data");
        cmd_simulate(&cfg, &data).unwrap();
        let masked = dir.path().join("masked");
        let (m, rate) = cmd_mask(&cfg, &data, &masked).unwrap();
        // Two of four features are missing-prone at a 30% target.
        assert!((rate - 0.15).abs() < 0.03, "overall rate {}", rate);
        assert_eq!(m.realized_missing_rate, Some(rate));
        let (_, n, p, rv) = read_matrix_csv(&masked.join("R.csv")).unwrap();
        assert_eq!((n, p), (4000, 4));
        assert!(rv.iter().all(|&v| v == 0.0 || v == 1.0));
        let spec: MechanismSpec = read_json(&masked.join("mechanism.json")).unwrap();
        assert_eq!(spec.missing_features.len(), 2);
    }

    #[test]
    fn run_emits_artifacts_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke_config(RunMethod::Dlglm, 2);
        cfg.grid.lr = vec![0.01, 0.003];
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let ra = cmd_run(&cfg, &a).unwrap();
        let rb = cmd_run(&cfg, &b).unwrap();
        assert_eq!(
            std::fs::read(a.join("metrics.json")).unwrap(),
            std::fs::read(b.join("metrics.json")).unwrap()
        );
        assert_eq!(ra.best_valid_bound, rb.best_valid_bound);
        for name in [
            "X.csv",
            "Y.csv",
            "R.csv",
            "truth.json",
            "mechanism.json",
            "leaderboard.csv",
            "epoch_log_000.csv",
            "epoch_log_001.csv",
            "model.json",
            "imputed.csv",
            "imputation_ess.csv",
            "predictions_incomplete.csv",
            "predictions_complete.csv",
            "metrics.json",
            "plot_data.csv",
            "manifest.json",
        ] {
            assert!(a.join(name).exists(), "missing {}", name);
        }
        let leaderboard = std::fs::read_to_string(a.join("leaderboard.csv")).unwrap();
        assert_eq!(leaderboard.lines().count(), 3);
        assert!(ra.imputation_l1.is_some());
        assert!(ra.percent_bias.is_some());
        assert!(ra.pred_l1_incomplete.is_some());
        assert!(ra.pred_l1_complete.is_some());
        assert!(ra.accuracy.is_some());
        assert!(ra.ess_mean.is_some());
        let m: Manifest = read_json(&a.join("manifest.json")).unwrap();
        assert_eq!(m.command, "run");
        assert!(m.files.contains(&"metrics.json".to_string()));
    }

    #[test]
    fn baseline_run_skips_training_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config(RunMethod::Mean, 4);
        let out = dir.path().join("mean");
        let report = cmd_run(&cfg, &out).unwrap();
        assert!(report.best_valid_bound.is_none());
        assert!(report.ess_mean.is_none());
        assert!(report.imputation_l1.is_some());
        assert!(report.percent_bias.is_some());
        assert!(!out.join("leaderboard.csv").exists());
        assert!(!out.join("model.json").exists());
        assert!(out.join("imputed.csv").exists());
    }

    #[test]
    fn saved_model_imputes_and_predicts_new_data() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config(RunMethod::Dlglm, 9);
        let run_dir = dir.path().join("run");
        cmd_run(&cfg, &run_dir).unwrap();
        let imp_out = dir.path().join("imp");
        let m = cmd_impute(&run_dir.join("model.json"), &run_dir, &imp_out, 8, 1).unwrap();
        assert!(imp_out.join("imputed.csv").exists());
        assert!(m.realized_missing_rate.unwrap() > 0.0);
        let (_, n, p, imp) = read_matrix_csv(&imp_out.join("imputed.csv")).unwrap();
        assert_eq!((n, p), (400, 4));
        assert!(imp.iter().all(|v| v.is_finite()));

        let pred_out = dir.path().join("pred");
        cmd_predict(&run_dir.join("model.json"), &run_dir, &pred_out, 8, 1).unwrap();
        let (rows, y_pred, y_true) = read_predictions_csv(&pred_out.join("predictions.csv")).unwrap();
        assert_eq!(rows.len(), 400);
        assert!(y_true.is_some());
        assert!(y_pred.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn evaluate_recomputes_run_metrics_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config(RunMethod::Dlglm, 12);
        let run_dir = dir.path().join("run");
        let run_report = cmd_run(&cfg, &run_dir).unwrap();
        let eval_out = dir.path().join("eval");
        let eval_report = cmd_evaluate(&run_dir, &run_dir, &eval_out).unwrap();
        assert_eq!(eval_report.method, "dlglm");
        assert_eq!(eval_report.mechanism, "MNAR");
        assert_eq!(eval_report.pred_l1_incomplete, run_report.pred_l1_incomplete);
        assert_eq!(eval_report.pred_l1_complete, run_report.pred_l1_complete);
        assert_eq!(eval_report.imputation_l1, run_report.imputation_l1);
        assert_eq!(eval_report.accuracy, run_report.accuracy);
        assert_eq!(eval_report.kappa, run_report.kappa);
        assert_eq!(eval_report.auc, run_report.auc);
        assert!(eval_out.join("metrics.json").exists());
    }
}
