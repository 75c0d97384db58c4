//! Training loop: minibatch ascent on the importance-weighted bound,
//! validation-based early stopping, and hyperparameter grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{batch_from, compute_bound, iwae_from_log_w, weighted_samples};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{build_model, DlglmModel, ModelConfig, SchemaInfo};
use crate::optim::{adam_step, sgd_step, AdamState, ParameterStore, Snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub k_train: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_max: usize,
    pub patience: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            k_train: 5,
            lr: 0.001,
            batch_size: 1000,
            epochs_max: 2002,
            patience: 50,
            epsilon: 1e-4,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Early stopping on a bound that training pushes upward. Each epoch's
/// value L is compared against the running best L_opt: improvement
/// (d = L - L_opt > 0) moves the best and snapshots the parameters, while
/// d <= epsilon * L_opt adds a permanent strike. Both comparisons use the
/// incoming L_opt, so with a positive bound a tiny improvement can both
/// advance the best and strike. Training stops at `patience` strikes;
/// strikes never reset. With a negative bound the strike threshold sits
/// below zero, so a flat sequence runs to the epoch cap, while with a
/// positive bound a flat sequence stops after exactly `patience` epochs.
pub struct EarlyStopState {
    best: f64,
    strikes: usize,
    snapshot: Snapshot,
}

impl EarlyStopState {
    pub fn new(first: f64, store: &ParameterStore) -> Self {
        EarlyStopState { best: first, strikes: 0, snapshot: store.snapshot() }
    }

    /// Record one epoch's value; true means stop now.
    pub fn update(&mut self, l: f64, epsilon: f64, patience: usize, store: &ParameterStore) -> bool {
        let d = l - self.best;
        let strike = d <= epsilon * self.best;
        if d > 0.0 {
            self.best = l;
            self.snapshot = store.snapshot();
        }
        if strike {
            self.strikes += 1;
            if self.strikes >= patience {
                return true;
            }
        }
        false
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn strikes(&self) -> usize {
        self.strikes
    }

    pub fn restore_best(&self, store: &ParameterStore) -> Result<()> {
        store.restore(&self.snapshot)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_bound: f64,
    pub valid_bound: f64,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub epochs_run: usize,
    pub best_valid: f64,
    pub stopped_early: bool,
    pub log: Vec<EpochRecord>,
}

/// Train in place. Each epoch shuffles the training rows, ascends the
/// bound batch by batch (scaled to full-data size), then scores the
/// validation rows with exact proposal draws. The parameters left in the
/// model are the snapshot from the best validation epoch.
pub fn train(model: &DlglmModel, ds: &Dataset, opts: &TrainOptions) -> Result<TrainResult> {
    if opts.batch_size == 0 {
        return Err(Error::Train("batch size must be positive".into()));
    }
    if opts.epochs_max == 0 {
        return Err(Error::Train("need at least one epoch".into()));
    }
    if !(opts.lr.is_finite() && opts.lr > 0.0) {
        return Err(Error::Train(format!("learning rate must be positive, got {}", opts.lr)));
    }
    let train_rows = ds.rows_in(Split::Train);
    if train_rows.is_empty() {
        return Err(Error::Train("no training rows".into()));
    }
    let valid_rows = {
        let v = ds.rows_in(Split::Valid);
        if v.is_empty() {
            train_rows.clone()
        } else {
            v
        }
    };
    let n_train = train_rows.len() as f64;
    let missing_blocks = model.schema.missing_blocks.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut adam = AdamState::new();
    let mut stop: Option<EarlyStopState> = None;
    let mut log = Vec::new();
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in 0..opts.epochs_max {
        let t0 = std::time::Instant::now();
        let mut order = train_rows.clone();
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch = batch_from(ds, &missing_blocks, chunk);
            let (bound, _) = compute_bound(model, &batch, opts.k_train, true, &mut rng)?;
            train_total += bound.scalar_value()?;
            let objective = bound.mul_scalar(n_train / chunk.len() as f64);
            model.store.zero_grads();
            objective.backward()?;
            match opts.optimizer {
                OptimizerKind::Adam => adam_step(&model.store, &mut adam, opts.lr)?,
                OptimizerKind::Sgd => sgd_step(&model.store, opts.lr)?,
            }
        }

        let vbatch = batch_from(ds, &missing_blocks, &valid_rows);
        let ws = weighted_samples(model, &vbatch, opts.k_train, false, true, &mut rng)?;
        let valid_bound = iwae_from_log_w(&ws.log_w)?.scalar_value()?;
        epochs_run = epoch + 1;
        log.push(EpochRecord {
            epoch,
            train_bound: train_total,
            valid_bound,
            elapsed_ms: t0.elapsed().as_millis(),
        });

        match stop.as_mut() {
            None => stop = Some(EarlyStopState::new(valid_bound, &model.store)),
            Some(state) => {
                if state.update(valid_bound, opts.epsilon, opts.patience, &model.store) {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let state = stop.expect("at least one epoch ran");
    state.restore_best(&model.store)?;
    Ok(TrainResult {
        epochs_run,
        best_valid: state.best(),
        stopped_early,
        log,
    })
}

/// One grid cell: architecture widths/depths plus the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub h: usize,
    pub nhl: usize,
    pub h_r: usize,
    pub nhl_r: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub h: Vec<usize>,
    pub nhl: Vec<usize>,
    pub h_r: Vec<usize>,
    pub nhl_r: Vec<usize>,
    pub lr: Vec<f64>,
}

impl GridSpec {
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &h in &self.h {
            for &nhl in &self.nhl {
                for &h_r in &self.h_r {
                    for &nhl_r in &self.nhl_r {
                        for &lr in &self.lr {
                            out.push(GridPoint { h, nhl, h_r, nhl_r, lr });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Result of one grid cell. Parameters come back as a plain snapshot so
/// cells can train on worker threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridOutcome {
    pub index: usize,
    pub point: GridPoint,
    pub best_valid: f64,
    pub param_count: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    #[serde(skip)]
    pub snapshot: Snapshot,
    #[serde(skip)]
    pub log: Vec<EpochRecord>,
    pub error: Option<String>,
}

pub struct GridSearchResult {
    pub outcomes: Vec<GridOutcome>,
    pub best_index: usize,
}

impl GridSearchResult {
    pub fn best(&self) -> &GridOutcome {
        &self.outcomes[self.best_index]
    }
}

pub fn derive_seed(master: u64, index: usize) -> u64 {
    master ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1))
}

fn apply_point(base: &ModelConfig, p: &GridPoint) -> ModelConfig {
    let mut cfg = base.clone();
    cfg.h = p.h;
    cfg.nhl = p.nhl;
    cfg.h_r = p.h_r;
    cfg.nhl_r = p.nhl_r;
    cfg
}

/// Train every grid cell in parallel and rank by the validation bound.
/// Ties prefer fewer parameters, then the lower learning rate, then
/// declaration order. Cells that fail are recorded and skipped; if all
/// fail, the first error is returned.
pub fn grid_search(
    base: &ModelConfig,
    schema: &SchemaInfo,
    ds: &Dataset,
    opts_base: &TrainOptions,
    grid: &GridSpec,
    master_seed: u64,
) -> Result<GridSearchResult> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::Train("empty hyperparameter grid".into()));
    }
    let outcomes: Vec<GridOutcome> = points
        .par_iter()
        .enumerate()
        .map(|(index, point)| {
            let seed = derive_seed(master_seed, index);
            let run = || -> Result<(f64, usize, usize, bool, Snapshot, Vec<EpochRecord>)> {
                let cfg = apply_point(base, point);
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let model = build_model(&cfg, schema, &mut rng)?;
                let mut opts = opts_base.clone();
                opts.lr = point.lr;
                opts.seed = seed;
                let res = train(&model, ds, &opts)?;
                Ok((
                    res.best_valid,
                    model.param_count(),
                    res.epochs_run,
                    res.stopped_early,
                    model.store.snapshot(),
                    res.log,
                ))
            };
            match run() {
                Ok((best_valid, param_count, epochs_run, stopped_early, snapshot, log)) => GridOutcome {
                    index,
                    point: *point,
                    best_valid,
                    param_count,
                    epochs_run,
                    stopped_early,
                    snapshot,
                    log,
                    error: None,
                },
                Err(e) => GridOutcome {
                    index,
                    point: *point,
                    best_valid: f64::NEG_INFINITY,
                    param_count: usize::MAX,
                    epochs_run: 0,
                    stopped_early: false,
                    snapshot: Snapshot::new(),
                    log: Vec::new(),
                    error: Some(format!("{}", e)),
                },
            }
        })
        .collect();

    let mut best_index: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if o.error.is_some() {
            continue;
        }
        match best_index {
            None => best_index = Some(i),
            Some(b) => {
                let cur = &outcomes[b];
                let better = o.best_valid > cur.best_valid
                    || (o.best_valid == cur.best_valid
                        && (o.param_count < cur.param_count
                            || (o.param_count == cur.param_count && o.point.lr < cur.point.lr)));
                if better {
                    best_index = Some(i);
                }
            }
        }
    }
    match best_index {
        Some(best_index) => Ok(GridSearchResult { outcomes, best_index }),
        None => {
            let first = outcomes.iter().find_map(|o| o.error.clone()).unwrap_or_default();
            Err(Error::Train(format!("every grid cell failed; first error: {}", first)))
        }
    }
}

/// Rebuild a model for a finished grid cell and load its trained weights.
pub fn model_from_outcome(
    base: &ModelConfig,
    schema: &SchemaInfo,
    outcome: &GridOutcome,
    master_seed: u64,
) -> Result<DlglmModel> {
    let cfg = apply_point(base, &outcome.point);
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(master_seed, outcome.index));
    let model = build_model(&cfg, schema, &mut rng)?;
    model.store.restore(&outcome.snapshot)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_xy, split_811, standardize_and_preimpute, SimConfig};
    use crate::model::Method;
    use crate::tensor::Tensor;

    fn store_with_one_param(v: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.register("p", Tensor::param(1, 1, vec![v]).unwrap()).unwrap();
        s
    }

    #[test]
    fn flat_positive_sequence_stops_after_exactly_patience_epochs() {
        let store = store_with_one_param(0.0);
        let mut state = EarlyStopState::new(5.0, &store);
        for i in 0..49 {
            assert!(!state.update(5.0, 1e-4, 50, &store), "stopped early at {}", i);
        }
        assert!(state.update(5.0, 1e-4, 50, &store));
        assert_eq!(state.strikes(), 50);
    }

    #[test]
    fn flat_negative_sequence_never_stops() {
        let store = store_with_one_param(0.0);
        let mut state = EarlyStopState::new(-5.0, &store);
        for _ in 0..500 {
            assert!(!state.update(-5.0, 1e-4, 50, &store));
        }
        assert_eq!(state.strikes(), 0);
    }

    #[test]
    fn improving_sequence_never_strikes_and_tracks_best() {
        let store = store_with_one_param(0.0);
        let mut state = EarlyStopState::new(-100.0, &store);
        let mut l = -100.0;
        for _ in 0..300 {
            l += 0.5;
            assert!(!state.update(l, 1e-4, 50, &store));
        }
        assert_eq!(state.strikes(), 0);
        assert!((state.best() - l).abs() < 1e-12);
    }

    #[test]
    fn worsening_negative_sequence_strikes_and_restores_best() {
        let store = store_with_one_param(1.0);
        let mut state = EarlyStopState::new(-10.0, &store);
        // Improve once; snapshot taken at the new best.
        store.set_values("p", &[2.0]).unwrap();
        assert!(!state.update(-9.0, 1e-4, 3, &store));
        // Then decay hard: each epoch is far below -9.0 * (1 + eps).
        store.set_values("p", &[3.0]).unwrap();
        assert!(!state.update(-20.0, 1e-4, 3, &store));
        assert!(!state.update(-21.0, 1e-4, 3, &store));
        assert!(state.update(-22.0, 1e-4, 3, &store));
        state.restore_best(&store).unwrap();
        assert_eq!(store.get("p").unwrap().to_vec(), vec![2.0]);
        assert!((state.best() - (-9.0)).abs() < 1e-12);
    }

    #[test]
    fn tiny_positive_improvement_both_advances_best_and_strikes() {
        let store = store_with_one_param(0.0);
        let mut state = EarlyStopState::new(1000.0, &store);
        assert!(!state.update(1000.05, 1e-4, 2, &store));
        assert_eq!(state.strikes(), 1);
        assert!((state.best() - 1000.05).abs() < 1e-12);
    }

    fn toy_ds(n: usize, seed: u64) -> Dataset {
        let cfg = SimConfig { n, p: 4, d: 2, ..Default::default() };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (mut ds, _) = simulate_xy(&cfg, &mut rng).unwrap();
        for i in 0..n {
            if rand::Rng::gen::<f64>(&mut rng) < 0.3 {
                ds.mask.set(i, 0, false);
            }
        }
        ds.split = split_811(n, &mut rng);
        standardize_and_preimpute(&mut ds).unwrap();
        ds
    }

    #[test]
    fn training_improves_the_validation_bound() {
        let ds = toy_ds(200, 30);
        let schema = SchemaInfo::from_dataset(&ds);
        let cfg = ModelConfig { h: 8, nhl: 1, dz: 2, h_r: 4, nhl_r: 0, ..Default::default() };
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let model = build_model(&cfg, &schema, &mut rng).unwrap();
        let opts = TrainOptions { epochs_max: 30, batch_size: 64, lr: 0.01, seed: 32, ..Default::default() };
        let res = train(&model, &ds, &opts).unwrap();
        assert_eq!(res.log.len(), res.epochs_run);
        assert!(
            res.best_valid > res.log[0].valid_bound,
            "best {} first {}",
            res.best_valid,
            res.log[0].valid_bound
        );
    }

    #[test]
    fn training_is_deterministic_by_seed() {
        let ds = toy_ds(120, 33);
        let schema = SchemaInfo::from_dataset(&ds);
        let cfg = ModelConfig { h: 6, nhl: 0, dz: 2, h_r: 4, nhl_r: 0, ..Default::default() };
        let run = || {
            let mut rng = ChaCha20Rng::seed_from_u64(34);
            let model = build_model(&cfg, &schema, &mut rng).unwrap();
            let opts = TrainOptions { epochs_max: 5, batch_size: 50, seed: 35, ..Default::default() };
            let res = train(&model, &ds, &opts).unwrap();
            (res.best_valid, model.store.snapshot())
        };
        let (a_best, a_snap) = run();
        let (b_best, b_snap) = run();
        assert_eq!(a_best, b_best);
        assert_eq!(a_snap, b_snap);
    }

    #[test]
    fn grid_search_ranks_by_validation_bound() {
        let ds = toy_ds(120, 36);
        let schema = SchemaInfo::from_dataset(&ds);
        let base = ModelConfig { method: Method::Idlglm, dz: 2, ..Default::default() };
        let grid = GridSpec {
            h: vec![4, 8],
            nhl: vec![0],
            h_r: vec![0],
            nhl_r: vec![0],
            lr: vec![0.01],
        };
        let opts = TrainOptions { epochs_max: 4, batch_size: 60, ..Default::default() };
        let res = grid_search(&base, &schema, &ds, &opts, &grid, 37).unwrap();
        assert_eq!(res.outcomes.len(), 2);
        assert!(res.outcomes.iter().all(|o| o.error.is_none()));
        let best = res.best();
        for o in &res.outcomes {
            assert!(best.best_valid >= o.best_valid);
        }
        let rebuilt = model_from_outcome(&base, &schema, best, 37).unwrap();
        assert_eq!(rebuilt.store.snapshot(), best.snapshot);
    }

    #[test]
    fn failed_grid_cells_are_recorded() {
        let ds = toy_ds(120, 38);
        let schema = SchemaInfo::from_dataset(&ds);
        let base = ModelConfig { method: Method::Idlglm, dz: 2, ..Default::default() };
        let grid = GridSpec {
            h: vec![4],
            nhl: vec![0],
            h_r: vec![0],
            nhl_r: vec![0],
            lr: vec![f64::NAN, 0.01],
        };
        let opts = TrainOptions { epochs_max: 2, batch_size: 60, ..Default::default() };
        let res = grid_search(&base, &schema, &ds, &opts, &grid, 39).unwrap();
        assert!(res.outcomes[0].error.is_some());
        assert!(res.outcomes[1].error.is_none());
        assert_eq!(res.best_index, 1);

        let all_bad = GridSpec { h: vec![4], nhl: vec![0], h_r: vec![0], nhl_r: vec![0], lr: vec![f64::NAN] };
        assert!(grid_search(&base, &schema, &ds, &opts, &all_bad, 40).is_err());
    }
}
