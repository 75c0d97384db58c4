//! Python bindings: experiment pipeline entry points plus a saved-model
//! wrapper for imputation, prediction, and coefficient extraction.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use dlglm::data::{standardize_with, Dataset, Split, Standardization};
use dlglm::experiment::{cmd_run, cmd_simulate, ExperimentConfig};
use dlglm::inference::{impute, predict};
use dlglm::missingness::MaskMatrix;
use dlglm::model::DlglmModel;

fn pyerr(e: dlglm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn jsonerr(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Default experiment configuration as a JSON string.
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string_pretty(&ExperimentConfig::default()).map_err(jsonerr)
}

/// Run the full experiment pipeline described by `config_json`, writing
/// artifacts into `out_dir`; returns the metrics report as JSON.
#[pyfunction]
fn run_experiment(config_json: &str, out_dir: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(jsonerr)?;
    let report = cmd_run(&cfg, std::path::Path::new(out_dir)).map_err(pyerr)?;
    serde_json::to_string_pretty(&report).map_err(jsonerr)
}

/// Generate a synthetic dataset into `out_dir` (X.csv, Y.csv, truth.json,
/// manifest.json); returns the manifest as JSON.
#[pyfunction]
fn simulate(config_json: &str, out_dir: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(jsonerr)?;
    let manifest = cmd_simulate(&cfg, std::path::Path::new(out_dir)).map_err(pyerr)?;
    serde_json::to_string_pretty(&manifest).map_err(jsonerr)
}

#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// A trained model loaded from model.json, with its bundled
/// standardization so raw-scale data can be scored directly.
#[pyclass(unsendable)]
struct Model {
    inner: DlglmModel,
    st: Option<Standardization>,
}

impl Model {
    /// Assemble a dataset on the model's standardized scale from raw-scale
    /// rows, an optional block-level mask (1 = observed), and responses.
    fn dataset(
        &self,
        x: Vec<Vec<f64>>,
        mask: Option<Vec<Vec<u8>>>,
        y: Option<Vec<f64>>,
    ) -> PyResult<Dataset> {
        let schema = &self.inner.schema;
        let n = x.len();
        if n == 0 {
            return Err(PyValueError::new_err("x must have at least one row"));
        }
        let p = schema.p_cols;
        let mut flat = Vec::with_capacity(n * p);
        for (i, row) in x.into_iter().enumerate() {
            if row.len() != p {
                return Err(PyValueError::new_err(format!(
                    "x row {} has {} entries, the model expects {}",
                    i,
                    row.len(),
                    p
                )));
            }
            flat.extend(row);
        }
        let blocks = schema.blocks.clone();
        let mut m = MaskMatrix::ones(n, blocks.len());
        if let Some(mask) = mask {
            if mask.len() != n {
                return Err(PyValueError::new_err("mask must have one row per x row"));
            }
            for (i, row) in mask.iter().enumerate() {
                if row.len() != blocks.len() {
                    return Err(PyValueError::new_err(format!(
                        "mask row {} has {} entries, the model has {} feature blocks",
                        i,
                        row.len(),
                        blocks.len()
                    )));
                }
                for (j, &v) in row.iter().enumerate() {
                    match v {
                        0 => m.set(i, j, false),
                        1 => {}
                        _ => return Err(PyValueError::new_err("mask entries must be 0 or 1")),
                    }
                }
            }
        }
        let y = match y {
            Some(y) => {
                if y.len() != n {
                    return Err(PyValueError::new_err("y must have one entry per x row"));
                }
                y
            }
            None => vec![0.0; n],
        };
        let identity = Standardization { mean: vec![0.0; p], sd: vec![1.0; p] };
        let mut ds = Dataset {
            x: flat,
            n,
            p_cols: p,
            y,
            family: self.inner.config.family,
            mask: m,
            blocks,
            split: vec![Split::Test; n],
            standardization: None,
            y_levels: Vec::new(),
        };
        standardize_with(&mut ds, self.st.as_ref().unwrap_or(&identity)).map_err(pyerr)?;
        Ok(ds)
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Model> {
        let (inner, st) = DlglmModel::load_with(std::path::Path::new(path)).map_err(pyerr)?;
        Ok(Model { inner, st })
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn method(&self) -> String {
        self.inner.config.method.name().to_string()
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner.config).map_err(jsonerr)
    }

    /// Data-scale GLM coefficients: (intercepts, coefficient rows).
    fn coefficients(&self) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let c = self.inner.extract_coefficients(self.st.as_ref()).map_err(pyerr)?;
        Ok((c.intercept, c.coef))
    }

    /// Impute masked entries. `x` holds raw-scale rows (masked entries may
    /// hold anything), `mask` is block-level with 1 = observed, `y` the
    /// responses. Returns (imputed raw-scale rows, per-row ESS).
    #[pyo3(signature = (x, mask, y, k = 500, seed = 0))]
    fn impute(
        &self,
        x: Vec<Vec<f64>>,
        mask: Vec<Vec<u8>>,
        y: Vec<f64>,
        k: usize,
        seed: u64,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let ds = self.dataset(x, Some(mask), Some(y))?;
        let rows: Vec<usize> = (0..ds.n).collect();
        let r = impute(&self.inner, &ds, &rows, k, seed).map_err(pyerr)?;
        let data_scale = ds.unstandardize_x(&r.x_imputed);
        let p = ds.p_cols;
        let out = (0..ds.n).map(|i| data_scale[i * p..(i + 1) * p].to_vec()).collect();
        Ok((out, r.ess))
    }

    /// Predict responses without using y. Returns (response-scale
    /// predictions, per-class probabilities or None, per-row ESS).
    #[pyo3(signature = (x, mask = None, k = 500, seed = 0))]
    fn predict(
        &self,
        x: Vec<Vec<f64>>,
        mask: Option<Vec<Vec<u8>>>,
        k: usize,
        seed: u64,
    ) -> PyResult<(Vec<f64>, Option<Vec<Vec<f64>>>, Vec<f64>)> {
        let ds = self.dataset(x, mask, None)?;
        let rows: Vec<usize> = (0..ds.n).collect();
        let r = predict(&self.inner, &ds, &rows, k, seed).map_err(pyerr)?;
        Ok((r.y_pred, r.y_prob, r.ess))
    }
}

#[pymodule]
fn dlglm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    Ok(())
}
