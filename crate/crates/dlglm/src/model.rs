//! Model assembly: network layout per estimation method, parameter
//! initialization, forward passes, serialization, and coefficient
//! extraction.
//!
//! Four methods share one container. `Dlglm` and `Idlglm` model covariates
//! through a latent factor (encoder/decoder pair); `DlglmX` and `IdlglmX`
//! use a known diagonal Gaussian over covariates and train only a
//! proposal for the missing entries. The `Dlglm`/`DlglmX` variants add a
//! missingness network and feed the observation mask to the imputer; the
//! ignorable variants have neither.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureBlock, Standardization};
use crate::error::{Error, Result};
use crate::glm::Family;
use crate::init::semi_orthogonal_init;
use crate::optim::ParameterStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dlglm,
    Idlglm,
    Dlglmx,
    Idlglmx,
}

impl Method {
    /// Whether the method models the missingness indicators.
    pub fn non_ignorable(&self) -> bool {
        matches!(self, Method::Dlglm | Method::Dlglmx)
    }

    /// Whether covariates are modeled through a latent factor.
    pub fn latent(&self) -> bool {
        matches!(self, Method::Dlglm | Method::Idlglm)
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "dlglm" => Ok(Method::Dlglm),
            "idlglm" => Ok(Method::Idlglm),
            "dlglmx" => Ok(Method::Dlglmx),
            "idlglmx" => Ok(Method::Idlglmx),
            other => Err(Error::Config(format!("unknown method '{}'", other))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Dlglm => "dlglm",
            Method::Idlglm => "idlglm",
            Method::Dlglmx => "dlglmx",
            Method::Idlglmx => "idlglmx",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub method: Method,
    pub family: Family,
    /// Latent dimension (latent methods only).
    pub dz: usize,
    /// Width and depth of encoder/decoder/imputer hidden layers.
    pub h: usize,
    pub nhl: usize,
    /// Width and depth of the response network. Zero depth gives a linear
    /// model with extractable coefficients.
    pub h_y: usize,
    pub nhl_y: usize,
    /// Width and depth of the missingness network.
    pub h_r: usize,
    pub nhl_r: usize,
    /// Feed the response into the imputer proposal.
    pub include_y_in_imputer: bool,
    /// Relaxation temperature for categorical imputations.
    pub tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            method: Method::Dlglm,
            family: Family::Bernoulli,
            dz: 2,
            h: 64,
            nhl: 1,
            h_y: 0,
            nhl_y: 0,
            h_r: 16,
            nhl_r: 0,
            include_y_in_imputer: true,
            tau: 1.0,
        }
    }
}

/// Data layout the architecture is built around.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaInfo {
    pub p_cols: usize,
    pub blocks: Vec<FeatureBlock>,
    /// Block indices with any missing entries, ascending.
    pub missing_blocks: Vec<usize>,
    pub y_width: usize,
    pub eta_width: usize,
}

impl SchemaInfo {
    pub fn from_dataset(ds: &Dataset) -> SchemaInfo {
        SchemaInfo {
            p_cols: ds.p_cols,
            blocks: ds.blocks.clone(),
            missing_blocks: ds.missing_prone_blocks(),
            y_width: ds.family.y_input_width(),
            eta_width: ds.family.eta_width(),
        }
    }

    pub fn n_missing_blocks(&self) -> usize {
        self.missing_blocks.len()
    }

    /// x column indices of continuous blocks, in block order, restricted to
    /// the given block set.
    pub fn continuous_cols_of(&self, block_ids: &[usize]) -> Vec<usize> {
        block_ids
            .iter()
            .filter(|&&b| self.blocks[b].is_continuous())
            .map(|&b| self.blocks[b].col_start)
            .collect()
    }

    pub fn categorical_of(&self, block_ids: &[usize]) -> Vec<usize> {
        block_ids.iter().copied().filter(|&b| !self.blocks[b].is_continuous()).collect()
    }

    pub fn all_block_ids(&self) -> Vec<usize> {
        (0..self.blocks.len()).collect()
    }
}

/// Feed-forward net description: ReLU hidden stack plus named linear heads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<(String, usize)>,
}

impl Mlp {
    fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        let mut prev = self.in_dim;
        for (i, &w) in self.hidden.iter().enumerate() {
            let weights = semi_orthogonal_init(prev, w, rng)?;
            store.register(&format!("{}.h{}.w", self.prefix, i), Tensor::param(prev, w, weights)?)?;
            store.register(&format!("{}.h{}.b", self.prefix, i), Tensor::param(1, w, vec![0.0; w])?)?;
            prev = w;
        }
        for (head, out) in &self.heads {
            let weights = semi_orthogonal_init(prev, *out, rng)?;
            store.register(&format!("{}.{}.w", self.prefix, head), Tensor::param(prev, *out, weights)?)?;
            store.register(&format!("{}.{}.b", self.prefix, head), Tensor::param(1, *out, vec![0.0; *out])?)?;
        }
        Ok(())
    }

    fn forward(&self, store: &ParameterStore, x: &Tensor) -> Result<BTreeMap<String, Tensor>> {
        if x.cols() != self.in_dim {
            return Err(Error::Shape(format!(
                "{} expects {} input columns, got {}",
                self.prefix,
                self.in_dim,
                x.cols()
            )));
        }
        let mut h = x.clone();
        for i in 0..self.hidden.len() {
            let w = store.get(&format!("{}.h{}.w", self.prefix, i))?;
            let b = store.get(&format!("{}.h{}.b", self.prefix, i))?;
            h = h.matmul(w)?.add(b)?.relu();
        }
        let mut out = BTreeMap::new();
        for (head, _) in &self.heads {
            let w = store.get(&format!("{}.{}.w", self.prefix, head))?;
            let b = store.get(&format!("{}.{}.b", self.prefix, head))?;
            out.insert(head.clone(), h.matmul(w)?.add(b)?);
        }
        Ok(out)
    }
}

/// Distribution parameters for a set of feature blocks: one Gaussian head
/// pair over the continuous columns plus one logit head per categorical
/// block.
pub struct BlockParams {
    pub mu: Option<Tensor>,
    pub logsig: Option<Tensor>,
    pub cat: BTreeMap<usize, Tensor>,
    /// x column index for each column of `mu`.
    pub cont_cols: Vec<usize>,
    /// Block index for each column of `mu`.
    pub cont_blocks: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetSpecs {
    enc: Option<Mlp>,
    dec: Option<Mlp>,
    imp: Option<Mlp>,
    glm: Mlp,
    miss: Option<Mlp>,
}

pub struct DlglmModel {
    pub config: ModelConfig,
    pub schema: SchemaInfo,
    pub store: ParameterStore,
    nets: NetSpecs,
}

fn block_heads(schema: &SchemaInfo, block_ids: &[usize]) -> Vec<(String, usize)> {
    let mut heads = Vec::new();
    let cont = schema.continuous_cols_of(block_ids);
    if !cont.is_empty() {
        heads.push(("mu".to_string(), cont.len()));
        heads.push(("logsig".to_string(), cont.len()));
    }
    for b in schema.categorical_of(block_ids) {
        let classes = match schema.blocks[b].kind {
            crate::data::BlockKind::Categorical { classes } => classes,
            crate::data::BlockKind::Continuous => unreachable!(),
        };
        heads.push((format!("cat{}", b), classes));
    }
    heads
}

fn net_specs(config: &ModelConfig, schema: &SchemaInfo) -> Result<NetSpecs> {
    if config.tau <= 0.0 {
        return Err(Error::Config("tau must be positive".into()));
    }
    let has_missing = !schema.missing_blocks.is_empty();
    if !config.method.latent() {
        let all_cont = schema.blocks.iter().all(|b| b.is_continuous());
        if !all_cont {
            return Err(Error::Config(
                "known-covariate methods support continuous features only".into(),
            ));
        }
    }
    let (enc, dec) = if config.method.latent() {
        if config.dz == 0 {
            return Err(Error::Config("latent methods need dz >= 1".into()));
        }
        let enc = Mlp {
            prefix: "enc".into(),
            in_dim: schema.p_cols,
            hidden: vec![config.h; config.nhl],
            heads: vec![("mu".into(), config.dz), ("logsig".into(), config.dz)],
        };
        let dec = Mlp {
            prefix: "dec".into(),
            in_dim: config.dz,
            hidden: vec![config.h; config.nhl],
            heads: block_heads(schema, &schema.all_block_ids()),
        };
        (Some(enc), Some(dec))
    } else {
        (None, None)
    };
    let imp = if has_missing {
        let mut in_dim = schema.p_cols;
        if config.method.latent() {
            in_dim += config.dz;
        }
        if config.method.non_ignorable() {
            in_dim += schema.n_missing_blocks();
        }
        if config.include_y_in_imputer {
            in_dim += schema.y_width;
        }
        Some(Mlp {
            prefix: "imp".into(),
            in_dim,
            hidden: vec![config.h; config.nhl],
            heads: block_heads(schema, &schema.missing_blocks),
        })
    } else {
        None
    };
    let glm = Mlp {
        prefix: "glm".into(),
        in_dim: schema.p_cols,
        hidden: vec![config.h_y; config.nhl_y],
        heads: vec![("out".into(), schema.eta_width)],
    };
    let miss = if config.method.non_ignorable() && has_missing {
        Some(Mlp {
            prefix: "miss".into(),
            in_dim: schema.p_cols + schema.y_width,
            hidden: vec![config.h_r; config.nhl_r],
            heads: vec![("out".into(), schema.n_missing_blocks())],
        })
    } else {
        None
    };
    Ok(NetSpecs { enc, dec, imp, glm, miss })
}

/// Build a model with semi-orthogonal weights and zero biases.
pub fn build_model<R: Rng + ?Sized>(
    config: &ModelConfig,
    schema: &SchemaInfo,
    rng: &mut R,
) -> Result<DlglmModel> {
    let nets = net_specs(config, schema)?;
    let mut store = ParameterStore::new();
    if let Some(enc) = &nets.enc {
        enc.register(&mut store, rng)?;
    }
    if let Some(dec) = &nets.dec {
        dec.register(&mut store, rng)?;
    }
    if let Some(imp) = &nets.imp {
        imp.register(&mut store, rng)?;
    }
    nets.glm.register(&mut store, rng)?;
    if let Some(miss) = &nets.miss {
        miss.register(&mut store, rng)?;
    }
    if !config.method.latent() {
        store.register("psi.mu", Tensor::param(1, schema.p_cols, vec![0.0; schema.p_cols])?)?;
        store.register("psi.logsig", Tensor::param(1, schema.p_cols, vec![0.0; schema.p_cols])?)?;
    }
    if matches!(config.family, Family::Gaussian) {
        store.register("alpha.log", Tensor::param_scalar(0.0))?;
    }
    Ok(DlglmModel { config: config.clone(), schema: schema.clone(), store, nets })
}

impl DlglmModel {
    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn has_imputer(&self) -> bool {
        self.nets.imp.is_some()
    }

    pub fn imputer_input_width(&self) -> Option<usize> {
        self.nets.imp.as_ref().map(|m| m.in_dim)
    }

    /// Posterior parameters of the latent factor given preimputed
    /// covariates. Latent methods only.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let enc = self.nets.enc.as_ref().ok_or_else(|| {
            Error::Inference("encode is only available for latent methods".into())
        })?;
        let mut out = enc.forward(&self.store, x)?;
        Ok((out.remove("mu").unwrap(), out.remove("logsig").unwrap()))
    }

    /// Covariate model parameters for all blocks given latent draws.
    pub fn decode(&self, z: &Tensor) -> Result<BlockParams> {
        let dec = self.nets.dec.as_ref().ok_or_else(|| {
            Error::Inference("decode is only available for latent methods".into())
        })?;
        let out = dec.forward(&self.store, z)?;
        Ok(self.block_params(out, &self.schema.all_block_ids()))
    }

    /// Proposal parameters over the missing blocks.
    pub fn imputer(&self, input: &Tensor) -> Result<BlockParams> {
        let imp = self
            .nets
            .imp
            .as_ref()
            .ok_or_else(|| Error::Inference("model has no missing blocks".into()))?;
        let out = imp.forward(&self.store, input)?;
        Ok(self.block_params(out, &self.schema.missing_blocks.clone()))
    }

    fn block_params(&self, mut out: BTreeMap<String, Tensor>, block_ids: &[usize]) -> BlockParams {
        let cont_cols = self.schema.continuous_cols_of(block_ids);
        let cont_blocks: Vec<usize> = block_ids
            .iter()
            .copied()
            .filter(|&b| self.schema.blocks[b].is_continuous())
            .collect();
        let mut cat = BTreeMap::new();
        for b in self.schema.categorical_of(block_ids) {
            if let Some(t) = out.remove(&format!("cat{}", b)) {
                cat.insert(b, t);
            }
        }
        BlockParams {
            mu: out.remove("mu"),
            logsig: out.remove("logsig"),
            cat,
            cont_cols,
            cont_blocks,
        }
    }

    /// Linear predictor of the response model.
    pub fn glm_eta(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = self.nets.glm.forward(&self.store, x)?;
        Ok(out.remove("out").unwrap())
    }

    /// Observation logits for each missing-prone block given covariates and
    /// response input.
    pub fn miss_logits(&self, x: &Tensor, y_in: &Tensor) -> Result<Tensor> {
        let miss = self.nets.miss.as_ref().ok_or_else(|| {
            Error::Inference("missingness network absent for this method".into())
        })?;
        let input = Tensor::concat_cols(&[x.clone(), y_in.clone()])?;
        let mut out = miss.forward(&self.store, &input)?;
        Ok(out.remove("out").unwrap())
    }

    pub fn log_alpha(&self) -> Option<Tensor> {
        self.store.get("alpha.log").ok().cloned()
    }

    /// Known diagonal Gaussian over covariates, shapes [1, p_cols].
    pub fn psi(&self) -> Result<(Tensor, Tensor)> {
        Ok((self.store.get("psi.mu")?.clone(), self.store.get("psi.logsig")?.clone()))
    }

    /// Regression coefficients on the data scale. Requires a linear
    /// response model (nhl_y = 0). Returns one intercept and one
    /// coefficient row per linear-predictor column.
    pub fn extract_coefficients(&self, st: Option<&Standardization>) -> Result<Coefficients> {
        if self.config.nhl_y != 0 {
            return Err(Error::Inference(
                "coefficients are only defined for a linear response model".into(),
            ));
        }
        let w = self.store.get("glm.out.w")?;
        let b = self.store.get("glm.out.b")?;
        let (p, e) = (self.schema.p_cols, self.schema.eta_width);
        let mut intercept = vec![0.0; e];
        let mut coef = vec![vec![0.0; p]; e];
        for col in 0..e {
            intercept[col] = b.value_at(0, col);
            for j in 0..p {
                let std_beta = w.value_at(j, col);
                match st {
                    None => coef[col][j] = std_beta,
                    Some(s) => {
                        coef[col][j] = std_beta / s.sd[j];
                        intercept[col] -= std_beta * s.mean[j] / s.sd[j];
                    }
                }
            }
        }
        Ok(Coefficients { intercept, coef })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.save_with(path, None)
    }

    /// Save the model, optionally bundling the standardization fitted on the
    /// training data so new raw data can be scored on the same scale.
    pub fn save_with(
        &self,
        path: &std::path::Path,
        standardization: Option<&crate::data::Standardization>,
    ) -> Result<()> {
        let mut params = BTreeMap::new();
        for (name, t) in self.store.iter() {
            params.insert(
                name.clone(),
                SavedParam { rows: t.rows(), cols: t.cols(), data: t.to_vec() },
            );
        }
        let frozen: Vec<String> =
            self.store.names().into_iter().filter(|n| self.store.is_frozen(n)).collect();
        let saved = SavedModel {
            version: 1,
            config: self.config.clone(),
            schema: self.schema.clone(),
            params,
            frozen,
            standardization: standardization.cloned(),
        };
        crate::data::write_json(path, &saved)
    }

    pub fn load(path: &std::path::Path) -> Result<DlglmModel> {
        Ok(Self::load_with(path)?.0)
    }

    /// Load a model together with any bundled standardization.
    pub fn load_with(
        path: &std::path::Path,
    ) -> Result<(DlglmModel, Option<crate::data::Standardization>)> {
        let saved: SavedModel = crate::data::read_json(path)?;
        if saved.version != 1 {
            return Err(Error::Config(format!("unsupported model version {}", saved.version)));
        }
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
        let mut model = build_model(&saved.config, &saved.schema, &mut rng)?;
        let built: Vec<String> = model.store.names();
        let loaded: Vec<String> = saved.params.keys().cloned().collect();
        if built != loaded {
            return Err(Error::Config("saved parameters do not match the architecture".into()));
        }
        for (name, p) in &saved.params {
            let t = model.store.get(name)?;
            if t.rows() != p.rows || t.cols() != p.cols {
                return Err(Error::Config(format!("parameter '{}' has wrong shape", name)));
            }
            model.store.set_values(name, &p.data)?;
        }
        for name in &saved.frozen {
            model.store.freeze(name)?;
        }
        Ok((model, saved.standardization))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coefficients {
    pub intercept: Vec<f64>,
    pub coef: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SavedParam {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    version: u32,
    config: ModelConfig,
    schema: SchemaInfo,
    params: BTreeMap<String, SavedParam>,
    frozen: Vec<String>,
    #[serde(default)]
    standardization: Option<crate::data::Standardization>,
}

use rand::SeedableRng as _;

/// Response values formatted as network input rows: raw value for Gaussian
/// and Bernoulli, one-hot for categorical.
pub fn y_input_matrix(family: Family, y: &[f64], rows: &[usize]) -> Vec<f64> {
    let w = family.y_input_width();
    let mut out = vec![0.0; rows.len() * w];
    for (r, &i) in rows.iter().enumerate() {
        match family {
            Family::Gaussian | Family::Bernoulli => out[r] = y[i],
            Family::Categorical { .. } => out[r * w + y[i] as usize] = 1.0,
        }
    }
    out
}

/// Column gather via narrow and concat, merging contiguous runs.
pub fn gather_cols(x: &Tensor, cols: &[usize]) -> Result<Tensor> {
    if cols.is_empty() {
        return Err(Error::Shape("gather_cols needs at least one column".into()));
    }
    let mut parts: Vec<Tensor> = Vec::new();
    let mut run_start = cols[0];
    let mut run_len = 1;
    for &c in &cols[1..] {
        if c == run_start + run_len {
            run_len += 1;
        } else {
            parts.push(x.narrow_cols(run_start, run_len)?);
            run_start = c;
            run_len = 1;
        }
    }
    parts.push(x.narrow_cols(run_start, run_len)?);
    if parts.len() == 1 {
        Ok(parts.pop().unwrap())
    } else {
        Tensor::concat_cols(&parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BlockKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy_schema(p: usize, missing: Vec<usize>) -> SchemaInfo {
        SchemaInfo {
            p_cols: p,
            blocks: (0..p)
                .map(|j| FeatureBlock {
                    name: format!("x{}", j),
                    kind: BlockKind::Continuous,
                    col_start: j,
                })
                .collect(),
            missing_blocks: missing,
            y_width: 1,
            eta_width: 1,
        }
    }

    fn check_semi_orthogonal(t: &Tensor) {
        let (r, c) = (t.rows(), t.cols());
        let d = t.to_vec();
        let k = r.min(c);
        let mut gram = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                let mut s = 0.0;
                for l in 0..r.max(c) {
                    s += if r <= c { d[a * c + l] * d[b * c + l] } else { d[l * c + a] * d[l * c + b] };
                }
                gram[a * k + b] = s;
            }
        }
        for a in 0..k {
            for b in 0..k {
                let expect = f64::from(a == b);
                assert!(
                    (gram[a * k + b] - expect).abs() < 1e-6,
                    "gram[{},{}] = {}",
                    a,
                    b,
                    gram[a * k + b]
                );
            }
        }
    }

    #[test]
    fn dlglm_has_all_five_networks() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let cfg = ModelConfig { nhl: 1, nhl_r: 1, ..Default::default() };
        let schema = toy_schema(6, vec![0, 1, 2]);
        let m = build_model(&cfg, &schema, &mut rng).unwrap();
        for name in ["enc.mu.w", "dec.mu.w", "imp.mu.w", "glm.out.w", "miss.out.w"] {
            assert!(m.store.contains(name), "missing {}", name);
        }
        assert!(!m.store.contains("psi.mu"));
        // Mask channel plus y channel widen the imputer input.
        assert_eq!(m.imputer_input_width(), Some(2 + 6 + 3 + 1));
    }

    #[test]
    fn idlglm_drops_missingness_net_and_mask_channel() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let cfg = ModelConfig { method: Method::Idlglm, ..Default::default() };
        let schema = toy_schema(6, vec![0, 1, 2]);
        let m = build_model(&cfg, &schema, &mut rng).unwrap();
        assert!(!m.store.names().iter().any(|n| n.starts_with("miss.")));
        assert_eq!(m.imputer_input_width(), Some(2 + 6 + 1));
    }

    #[test]
    fn known_covariate_methods_swap_latent_nets_for_psi() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let cfg = ModelConfig { method: Method::Dlglmx, ..Default::default() };
        let schema = toy_schema(4, vec![0, 1]);
        let m = build_model(&cfg, &schema, &mut rng).unwrap();
        assert!(!m.store.names().iter().any(|n| n.starts_with("enc.") || n.starts_with("dec.")));
        assert!(m.store.contains("psi.mu") && m.store.contains("psi.logsig"));
        assert_eq!(m.imputer_input_width(), Some(4 + 2 + 1));
        assert!(m.store.contains("miss.out.w"));
    }

    #[test]
    fn weights_are_semi_orthogonal_and_biases_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let cfg = ModelConfig { nhl: 2, h: 16, h_r: 8, nhl_r: 1, ..Default::default() };
        let schema = toy_schema(5, vec![0, 1]);
        let m = build_model(&cfg, &schema, &mut rng).unwrap();
        for (name, t) in m.store.iter() {
            if name.ends_with(".w") {
                check_semi_orthogonal(t);
            } else if name.ends_with(".b") {
                assert!(t.to_vec().iter().all(|&v| v == 0.0), "{} not zero", name);
            }
        }
    }

    #[test]
    fn forward_shapes_match_schema() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let cfg = ModelConfig { nhl: 1, ..Default::default() };
        let schema = toy_schema(6, vec![0, 1, 2]);
        let m = build_model(&cfg, &schema, &mut rng).unwrap();
        let x = Tensor::matrix(3, 6, vec![0.1; 18]).unwrap();
        let (mu, logsig) = m.encode(&x).unwrap();
        assert_eq!(mu.shape(), vec![3, 2]);
        assert_eq!(logsig.shape(), vec![3, 2]);
        let dec = m.decode(&mu).unwrap();
        assert_eq!(dec.mu.unwrap().shape(), vec![3, 6]);
        assert_eq!(dec.cont_cols, vec![0, 1, 2, 3, 4, 5]);
        let imp_in = Tensor::matrix(3, 12, vec![0.2; 36]).unwrap();
        let imp = m.imputer(&imp_in).unwrap();
        assert_eq!(imp.mu.unwrap().shape(), vec![3, 3]);
        assert_eq!(imp.cont_cols, vec![0, 1, 2]);
        let eta = m.glm_eta(&x).unwrap();
        assert_eq!(eta.shape(), vec![3, 1]);
        let y_in = Tensor::matrix(3, 1, vec![1.0, 0.0, 1.0]).unwrap();
        let logits = m.miss_logits(&x, &y_in).unwrap();
        assert_eq!(logits.shape(), vec![3, 3]);
    }

    #[test]
    fn categorical_blocks_get_their_own_heads() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let schema = SchemaInfo {
            p_cols: 5,
            blocks: vec![
                FeatureBlock { name: "a".into(), kind: BlockKind::Continuous, col_start: 0 },
                FeatureBlock { name: "b".into(), kind: BlockKind::Categorical { classes: 3 }, col_start: 1 },
                FeatureBlock { name: "c".into(), kind: BlockKind::Continuous, col_start: 4 },
            ],
            missing_blocks: vec![1],
            y_width: 1,
            eta_width: 1,
        };
        let cfg = ModelConfig { ..Default::default() };
        let m = build_model(&cfg, &schema, &mut rng).unwrap();
        assert!(m.store.contains("dec.cat1.w"));
        assert!(m.store.contains("imp.cat1.w"));
        // The only missing block is categorical, so the imputer has no
        // Gaussian head.
        assert!(!m.store.contains("imp.mu.w"));
        let z = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let dec = m.decode(&z).unwrap();
        assert_eq!(dec.cont_cols, vec![0, 4]);
        assert_eq!(dec.cat[&1].shape(), vec![2, 3]);
    }

    #[test]
    fn linear_response_coefficients_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let cfg = ModelConfig { ..Default::default() };
        let schema = toy_schema(3, vec![]);
        let m = build_model(&cfg, &schema, &mut rng).unwrap();
        m.store.set_values("glm.out.w", &[0.5, -1.0, 2.0]).unwrap();
        m.store.set_values("glm.out.b", &[0.25]).unwrap();
        let c = m.extract_coefficients(None).unwrap();
        assert_eq!(c.intercept, vec![0.25]);
        assert_eq!(c.coef, vec![vec![0.5, -1.0, 2.0]]);
        // Undo standardization: beta_raw = beta_std / sd, intercept shifts.
        let st = Standardization { mean: vec![1.0, 2.0, 0.0], sd: vec![2.0, 1.0, 4.0] };
        let c2 = m.extract_coefficients(Some(&st)).unwrap();
        assert!((c2.coef[0][0] - 0.25).abs() < 1e-12);
        assert!((c2.coef[0][1] + 1.0).abs() < 1e-12);
        assert!((c2.coef[0][2] - 0.5).abs() < 1e-12);
        let expect_b0 = 0.25 - 0.5 * 1.0 / 2.0 - (-1.0) * 2.0 / 1.0 - 2.0 * 0.0 / 4.0;
        assert!((c2.intercept[0] - expect_b0).abs() < 1e-12);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let cfg = ModelConfig { nhl: 1, ..Default::default() };
        let schema = toy_schema(4, vec![0, 1]);
        let m = build_model(&cfg, &schema, &mut rng).unwrap();
        m.store.set_values("glm.out.b", &[0.75]).unwrap();
        m.save(&path).unwrap();
        let loaded = DlglmModel::load(&path).unwrap();
        assert_eq!(loaded.store.names(), m.store.names());
        for name in m.store.names() {
            assert_eq!(loaded.store.get(&name).unwrap().to_vec(), m.store.get(&name).unwrap().to_vec());
        }
        assert_eq!(loaded.config.method, Method::Dlglm);
    }

    #[test]
    fn no_missing_blocks_skips_imputer() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let cfg = ModelConfig { ..Default::default() };
        let schema = toy_schema(4, vec![]);
        let m = build_model(&cfg, &schema, &mut rng).unwrap();
        assert!(!m.has_imputer());
        assert!(!m.store.names().iter().any(|n| n.starts_with("imp.") || n.starts_with("miss.")));
    }

    #[test]
    fn gather_cols_picks_and_merges_runs() {
        let x = Tensor::matrix(2, 5, (0..10).map(f64::from).collect()).unwrap();
        let g = gather_cols(&x, &[1, 2, 4]).unwrap();
        assert_eq!(g.shape(), vec![2, 3]);
        assert_eq!(g.to_vec(), vec![1.0, 2.0, 4.0, 6.0, 7.0, 9.0]);
    }

    #[test]
    fn nonlinear_response_rejects_coefficients() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let cfg = ModelConfig { nhl_y: 1, h_y: 8, ..Default::default() };
        let schema = toy_schema(3, vec![]);
        let m = build_model(&cfg, &schema, &mut rng).unwrap();
        assert!(m.extract_coefficients(None).is_err());
    }
}
