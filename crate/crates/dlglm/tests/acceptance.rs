//! Acceptance suite: ten end-to-end checks covering the autodiff engine,
//! the importance-weighted bounds, the imputation and prediction paths,
//! mask generation, early stopping, initialization, metrics, and the
//! experiment pipeline. Each check prints one summary line; run with
//! `cargo test --test acceptance -- --test-threads 1 --nocapture` to see
//! them in order. The a05 study trains full-size models and takes the
//! longest by far.

use std::time::Instant;

use dlglm::bounds::{batch_from, compute_bound, iwae_from_log_w, weighted_samples};
use dlglm::data::{
    simulate_xy, split_811, standardize_and_preimpute, BlockKind, Dataset, FeatureBlock,
    SimConfig, Split,
};
use dlglm::experiment::{cmd_run, DataSource, ExperimentConfig, RunMethod};
use dlglm::glm::Family;
use dlglm::gradcheck::{central_diff, max_rel_err};
use dlglm::inference::impute;
use dlglm::init::semi_orthogonal_init;
use dlglm::metrics::{
    accuracy, auc, classify_binary, cohens_kappa, confusion_binary, confusion_matrix, f1,
    mean_abs_error_masked, percent_bias, ppv, ConfusionCounts,
};
use dlglm::missingness::{
    calibrate_phi0, draw_phi, simulate_mask, MaskMatrix, MechanismForm, MechanismKind,
    MechanismTemplate,
};
use dlglm::model::{build_model, DlglmModel, ModelConfig, SchemaInfo};
use dlglm::optim::ParameterStore;
use dlglm::tensor::{sigmoid, Tensor};
use dlglm::train::{train, EarlyStopState, GridSpec, TrainOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn toy_dataset(n: usize, p: usize, seed: u64, missing: &[usize]) -> Dataset {
    let cfg = SimConfig { n, p, d: 2, ..Default::default() };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut ds, _) = simulate_xy(&cfg, &mut rng).unwrap();
    for &j in missing {
        for i in (0..n).step_by(3) {
            ds.mask.set(i, j, false);
        }
    }
    ds.split = split_811(n, &mut rng);
    standardize_and_preimpute(&mut ds).unwrap();
    ds
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// One random composition of tensor ops, rebuilt from a flat parameter
// vector so central differences see the same graph every evaluation.
fn random_graph_err(seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let r = rng.gen_range(1..=3usize);
    let c = rng.gen_range(1..=3usize);
    let n_ops = rng.gen_range(3..=6usize);
    let ops: Vec<u8> = (0..n_ops).map(|_| rng.gen_range(0..=10u8)).collect();
    let reduce_lse = rng.gen_bool(0.5);
    let total = 2 * r * c + c * c;
    let flat: Vec<f64> = (0..total).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let build = |vals: &[f64]| -> (Tensor, [Tensor; 3]) {
        let a = Tensor::param(r, c, vals[..r * c].to_vec()).unwrap();
        let b = Tensor::param(r, c, vals[r * c..2 * r * c].to_vec()).unwrap();
        let m = Tensor::param(c, c, vals[2 * r * c..].to_vec()).unwrap();
        let mut t = a.clone();
        for &op in &ops {
            t = match op {
                0 => t.add(&b).unwrap(),
                1 => t.mul(&b).unwrap().mul_scalar(0.5),
                2 => t.sub(&b).unwrap(),
                3 => t.softplus(),
                4 => t.sigmoid(),
                5 => t.square().unwrap().mul_scalar(0.3),
                6 => t.matmul(&m).unwrap().mul_scalar(0.5),
                7 => t.add_scalar(0.25),
                8 => t.div(&b.softplus().add_scalar(0.5)).unwrap(),
                9 => t.softplus().add_scalar(0.3).ln(),
                10 => {
                    let wide = Tensor::concat_cols(&[t, b.clone()]).unwrap();
                    wide.narrow_cols(1, c).unwrap()
                }
                _ => unreachable!(),
            };
        }
        let out = if reduce_lse {
            t.log_sum_exp_cols().unwrap().sum_all()
        } else {
            t.mean_all()
        };
        (out, [a, b, m])
    };

    let (out, params) = build(&flat);
    out.backward().unwrap();
    let mut analytic = Vec::with_capacity(total);
    for p in &params {
        // A parameter the drawn ops never touch has a zero gradient.
        analytic.extend(p.grad().unwrap_or_else(|| vec![0.0; p.len()]));
    }
    let eval = |vals: &[f64]| build(vals).0.scalar_value().unwrap();
    let numeric = central_diff(&eval, &flat, 1e-5);
    max_rel_err(&analytic, &numeric)
}

#[test]
fn a01_autodiff_matches_finite_differences() {
    let t0 = Instant::now();

    let mut worst_graph = 0.0f64;
    for g in 0..50 {
        worst_graph = worst_graph.max(random_graph_err(1000 + g));
    }
    assert!(worst_graph <= 1e-4, "random graph max rel err {}", worst_graph);

    // Full bound instance: p=3, dz=2, K=2, two missing-prone features,
    // same noise on every evaluation.
    let ds = toy_dataset(10, 3, 12, &[0, 1]);
    let schema = SchemaInfo::from_dataset(&ds);
    let cfg = ModelConfig { h: 3, nhl: 0, dz: 2, h_r: 2, nhl_r: 0, ..Default::default() };
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let model = build_model(&cfg, &schema, &mut rng).unwrap();
    let batch = batch_from(&ds, &schema.missing_blocks, &ds.rows_in(Split::Train));
    let names = model.store.names();
    let sizes: Vec<usize> = names.iter().map(|n| model.store.get(n).unwrap().len()).collect();
    let set_all = |vals: &[f64]| {
        let mut off = 0;
        for (name, sz) in names.iter().zip(&sizes) {
            model.store.set_values(name, &vals[off..off + sz]).unwrap();
            off += sz;
        }
    };
    let flat: Vec<f64> = names.iter().flat_map(|n| model.store.get(n).unwrap().to_vec()).collect();
    let eval = |vals: &[f64]| {
        set_all(vals);
        let mut r = ChaCha20Rng::seed_from_u64(14);
        let (bound, _) = compute_bound(&model, &batch, 2, true, &mut r).unwrap();
        bound.scalar_value().unwrap()
    };
    set_all(&flat);
    let mut r = ChaCha20Rng::seed_from_u64(14);
    let (bound, _) = compute_bound(&model, &batch, 2, true, &mut r).unwrap();
    model.store.zero_grads();
    bound.backward().unwrap();
    let analytic: Vec<f64> =
        names.iter().flat_map(|n| model.store.get(n).unwrap().grad().expect("grad")).collect();
    let numeric = central_diff(&eval, &flat, 1e-5);
    let bound_err = max_rel_err(&analytic, &numeric);
    assert!(bound_err <= 1e-3, "full bound max rel err {}", bound_err);

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 60.0, "took {:.1}s", dt);
    println!(
        "acceptance 01 autodiff vs central differences: PASS (graphs {:.2e}, bound {:.2e}, {:.1}s)",
        worst_graph, bound_err, dt
    );
}

#[test]
fn a02_more_importance_draws_tighten_the_bound() {
    let t0 = Instant::now();
    let ds = toy_dataset(64, 4, 21, &[0, 1]);
    let schema = SchemaInfo::from_dataset(&ds);
    let cfg = ModelConfig { h: 6, nhl: 1, h_r: 3, nhl_r: 0, dz: 2, ..Default::default() };
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    let model = build_model(&cfg, &schema, &mut rng).unwrap();
    let batch = batch_from(&ds, &schema.missing_blocks, &ds.rows_in(Split::Train));

    let reps = 500;
    let sample = |k: usize, stream: u64| -> Vec<f64> {
        (0..reps)
            .map(|rep| {
                let mut r = ChaCha20Rng::seed_from_u64(stream + rep as u64);
                let (bound, _) = compute_bound(&model, &batch, k, true, &mut r).unwrap();
                bound.scalar_value().unwrap()
            })
            .collect()
    };
    let (m1, se1) = mean_and_se(&sample(1, 40_000));
    let (m5, se5) = mean_and_se(&sample(5, 50_000));
    let (m20, se20) = mean_and_se(&sample(20, 60_000));

    let gap_a = m5 - m1;
    let gap_b = m20 - m5;
    let se_a = (se1 * se1 + se5 * se5).sqrt();
    let se_b = (se5 * se5 + se20 * se20).sqrt();
    assert!(gap_a > -se_a, "K=1 to K=5 gap {} vs -1 se {}", gap_a, -se_a);
    assert!(gap_b > -se_b, "K=5 to K=20 gap {} vs -1 se {}", gap_b, -se_b);

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 120.0, "took {:.1}s", dt);
    println!(
        "acceptance 02 bound ordering in K: PASS (means {:.2} <= {:.2} <= {:.2}, gaps {:.2}/{:.2}, {:.1}s)",
        m1, m5, m20, gap_a, gap_b, dt
    );
}

// Exact log-density of a linear-Gaussian factor model via Cholesky.
fn factor_model_logpdf(x: &[f64], n: usize, p: usize, w: &[f64], d: usize, mu: &[f64], sd: f64) -> f64 {
    let mut c = vec![0.0; p * p];
    for j in 0..p {
        for l in 0..p {
            let mut v = if j == l { sd * sd } else { 0.0 };
            for k in 0..d {
                v += w[k * p + j] * w[k * p + l];
            }
            c[j * p + l] = v;
        }
    }
    let mut chol = vec![0.0; p * p];
    for j in 0..p {
        for l in 0..=j {
            let mut s = c[j * p + l];
            for k in 0..l {
                s -= chol[j * p + k] * chol[l * p + k];
            }
            if j == l {
                chol[j * p + j] = s.sqrt();
            } else {
                chol[j * p + l] = s / chol[l * p + l];
            }
        }
    }
    let logdet: f64 = (0..p).map(|j| 2.0 * chol[j * p + j].ln()).sum();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for i in 0..n {
        let mut v = vec![0.0; p];
        for j in 0..p {
            let mut s = x[i * p + j] - mu[j];
            for k in 0..j {
                s -= chol[j * p + k] * v[k];
            }
            v[j] = s / chol[j * p + j];
        }
        let quad: f64 = v.iter().map(|t| t * t).sum();
        total += -0.5 * (p as f64 * ln_2pi + logdet + quad);
    }
    total
}

#[test]
fn a03_factor_model_bound_approaches_the_exact_likelihood() {
    let t0 = Instant::now();
    let (n, p, d) = (2000usize, 4usize, 2usize);
    let w_true = [0.9, -0.6, 0.4, 0.2, 0.3, 0.8, -0.5, 0.7];
    let mu_true = [0.5, -0.2, 0.3, 0.0];
    let sd_true = 0.6;

    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let mut x = vec![0.0; n * p];
    for i in 0..n {
        let z: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for j in 0..p {
            let mut v = mu_true[j] + sd_true * rng.sample::<f64, _>(StandardNormal);
            for k in 0..d {
                v += z[k] * w_true[k * p + j];
            }
            x[i * p + j] = v;
        }
    }
    let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    // First 1500 rows train and validate; the last 500 stay held out for
    // both the bound and the exact value.
    let mut split = vec![Split::Train; n];
    for (i, s) in split.iter_mut().enumerate() {
        if (1350..1500).contains(&i) {
            *s = Split::Valid;
        } else if i >= 1500 {
            *s = Split::Test;
        }
    }
    let blocks: Vec<FeatureBlock> = (0..p)
        .map(|j| FeatureBlock { name: format!("x{}", j + 1), kind: BlockKind::Continuous, col_start: j })
        .collect();
    let ds = Dataset {
        x: x.clone(),
        n,
        p_cols: p,
        y,
        family: Family::Gaussian,
        mask: MaskMatrix::ones(n, p),
        blocks,
        split,
        standardization: None,
        y_levels: Vec::new(),
    };

    let schema = SchemaInfo::from_dataset(&ds);
    let cfg = ModelConfig {
        family: Family::Gaussian,
        dz: 2,
        h: 0,
        nhl: 0,
        h_r: 0,
        nhl_r: 0,
        ..Default::default()
    };
    let mut mrng = ChaCha20Rng::seed_from_u64(32);
    let model = build_model(&cfg, &schema, &mut mrng).unwrap();

    let eval_rows = ds.rows_in(Split::Test);
    let exact = {
        let mut xe = Vec::with_capacity(eval_rows.len() * p);
        for &i in &eval_rows {
            xe.extend_from_slice(ds.x_row(i));
        }
        factor_model_logpdf(&xe, eval_rows.len(), p, &w_true, d, &mu_true, sd_true)
    };

    // K=500 covariate-only bound over the held-out rows, in chunks.
    let eval_bound = |m: &DlglmModel, stream: u64| -> Vec<f64> {
        (0..16u64)
            .map(|rep| {
                let mut total = 0.0;
                for (ci, chunk) in eval_rows.chunks(125).enumerate() {
                    let mut r = ChaCha20Rng::seed_from_u64(stream + rep * 1000 + ci as u64);
                    let batch = batch_from(&ds, &schema.missing_blocks, chunk);
                    let ws = weighted_samples(m, &batch, 500, false, false, &mut r).unwrap();
                    total += iwae_from_log_w(&ws.log_w).unwrap().scalar_value().unwrap();
                }
                total
            })
            .collect()
    };

    let (init_mean, _) = mean_and_se(&eval_bound(&model, 70_000));

    let opts = TrainOptions {
        k_train: 5,
        lr: 0.01,
        batch_size: 256,
        epochs_max: 400,
        patience: 50,
        epsilon: 1e-4,
        seed: 33,
        optimizer: dlglm::train::OptimizerKind::Adam,
    };
    let result = train(&model, &ds, &opts).unwrap();

    let reps = eval_bound(&model, 80_000);
    let (final_mean, final_se) = mean_and_se(&reps);

    assert!(init_mean < exact, "random-init bound {} should sit below exact {}", init_mean, exact);
    assert!(
        final_mean <= exact + 3.0 * final_se,
        "bound {} exceeds exact {} + 3 se {}",
        final_mean,
        exact,
        3.0 * final_se
    );
    let recovered = (final_mean - init_mean) / (exact - init_mean);
    assert!(
        recovered >= 0.95,
        "recovered only {:.1}% of the init-to-exact gap ({} -> {} vs exact {})",
        100.0 * recovered,
        init_mean,
        final_mean,
        exact
    );

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 300.0, "took {:.1}s", dt);
    println!(
        "acceptance 03 factor-model oracle: PASS (exact {:.1}, bound {:.1} +/- {:.2}, {:.1}% of gap, {} epochs, {:.1}s)",
        exact, final_mean, final_se, 100.0 * recovered, result.epochs_run, dt
    );
}

#[test]
fn a04_importance_imputation_matches_quadrature() {
    let t0 = Instant::now();

    // Bivariate Gaussian with known psi; x2 self-masked, y Gaussian.
    let (psi_mu, psi_sd) = ([0.2f64, -0.1], [1.0f64, 0.8]);
    let (beta0, beta, alpha) = (0.2f64, [0.5f64, 1.5], 0.3f64);
    let (phi0, phi_x2) = (0.4f64, 1.2f64);
    let x1 = [0.6, -0.4, 0.1];
    let y = [1.1, -0.2, 0.4];
    let n = x1.len();

    let blocks = vec![
        FeatureBlock { name: "x1".into(), kind: BlockKind::Continuous, col_start: 0 },
        FeatureBlock { name: "x2".into(), kind: BlockKind::Continuous, col_start: 1 },
    ];
    let mut mask = MaskMatrix::ones(n, 2);
    let mut x = vec![0.0; n * 2];
    for i in 0..n {
        x[i * 2] = x1[i];
        mask.set(i, 1, false);
    }
    let ds = Dataset {
        x,
        n,
        p_cols: 2,
        y: y.to_vec(),
        family: Family::Gaussian,
        mask,
        blocks,
        split: vec![Split::Train; n],
        standardization: None,
        y_levels: Vec::new(),
    };

    let schema = SchemaInfo::from_dataset(&ds);
    let cfg = ModelConfig {
        method: dlglm::model::Method::Dlglmx,
        family: Family::Gaussian,
        h: 0,
        nhl: 0,
        h_r: 0,
        nhl_r: 0,
        h_y: 0,
        nhl_y: 0,
        ..Default::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    let model = build_model(&cfg, &schema, &mut rng).unwrap();
    let st = &model.store;
    st.set_values("psi.mu", &psi_mu).unwrap();
    st.set_values("psi.logsig", &[psi_sd[0].ln(), psi_sd[1].ln()]).unwrap();
    st.set_values("glm.out.w", &[beta[0], beta[1]]).unwrap();
    st.set_values("glm.out.b", &[beta0]).unwrap();
    st.set_values("alpha.log", &[alpha.ln()]).unwrap();
    // Mask model input is (x1, x2, y); only x2 drives the mask.
    st.set_values("miss.out.w", &[0.0, phi_x2, 0.0]).unwrap();
    st.set_values("miss.out.b", &[phi0]).unwrap();
    // Proposal over x2: fixed N(0, 1.2^2) regardless of input.
    st.set_values("imp.mu.w", &[0.0; 4]).unwrap();
    st.set_values("imp.mu.b", &[0.0]).unwrap();
    st.set_values("imp.logsig.w", &[0.0; 4]).unwrap();
    st.set_values("imp.logsig.b", &[1.2f64.ln()]).unwrap();

    let rows: Vec<usize> = (0..n).collect();
    let result = impute(&model, &ds, &rows, 500, 77).unwrap();

    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut worst = 0.0f64;
    let mut details = String::new();
    for i in 0..n {
        // E[x2 | x1, y, r2=0] by trapezoid quadrature on the log scale.
        let (lo, hi, steps) = (-12.0, 12.0, 48_000usize);
        let dt_step = (hi - lo) / steps as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for s in 0..=steps {
            let x2 = lo + s as f64 * dt_step;
            let lp_prior = -0.5 * ln_2pi
                - psi_sd[1].ln()
                - (x2 - psi_mu[1]).powi(2) / (2.0 * psi_sd[1] * psi_sd[1]);
            let eta = beta0 + beta[0] * x1[i] + beta[1] * x2;
            let lp_y = -0.5 * (ln_2pi + alpha.ln()) - (y[i] - eta).powi(2) / (2.0 * alpha);
            let lp_r = (1.0 - sigmoid(phi0 + phi_x2 * x2)).ln();
            let weight = (lp_prior + lp_y + lp_r).exp()
                * if s == 0 || s == steps { 0.5 } else { 1.0 };
            num += weight * x2;
            den += weight;
        }
        let quad = num / den;
        let snis = result.x_imputed[i * 2 + 1];
        let diff = (snis - quad).abs();
        worst = worst.max(diff);
        details.push_str(&format!(" row{}: snis {:.4} quad {:.4} ess {:.0};", i, snis, quad, result.ess[i]));
        assert!(
            diff <= 0.05,
            "row {}: snis {} vs quadrature {} differs by {}",
            i,
            snis,
            quad,
            diff
        );
    }

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 120.0, "took {:.1}s", dt);
    println!("acceptance 04 conjugate imputation oracle: PASS (max diff {:.4},{} {:.1}s)", worst, details, dt);
}

fn study_config(method: RunMethod, kind: MechanismKind, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        method,
        data: DataSource::Simulate { sim: SimConfig { n: 10_000, p: 8, d: 2, ..Default::default() } },
        mechanism: Some(MechanismTemplate {
            kind,
            form: MechanismForm::Linear,
            target_missing_rate: 0.3,
            frac_features_missing: 0.5,
        }),
        grid: GridSpec { h: vec![64], nhl: vec![1], h_r: vec![16], nhl_r: vec![0], lr: vec![0.001] },
        k_train: 5,
        k_eval: 200,
        batch_size: 250,
        epochs_max: 500,
        ..Default::default()
    }
}

#[test]
fn a05_simulation_study_orderings() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let seeds = [101u64, 202, 303];

    let run = |method: RunMethod, kind: MechanismKind, seed: u64| {
        let cfg = study_config(method, kind, seed);
        cfg.validate().unwrap();
        let out = dir.path().join(format!("{:?}_{:?}_{}", kind, method, seed));
        let report = cmd_run(&cfg, &out).unwrap();
        println!(
            "  {:?} seed {} {:<7} impL1 {:.4} pb {:>6.2} predI {:.4} epochs {:?}",
            kind,
            seed,
            format!("{:?}", method).to_lowercase(),
            report.imputation_l1.unwrap_or(f64::NAN),
            report.percent_bias.unwrap_or(f64::NAN),
            report.pred_l1_incomplete.unwrap_or(f64::NAN),
            report.epochs_run
        );
        report
    };

    let mut dlglm_beats_idlglm_pb = 0;
    for &seed in &seeds {
        let rd = run(RunMethod::Dlglm, MechanismKind::Mnar, seed);
        let ri = run(RunMethod::Idlglm, MechanismKind::Mnar, seed);
        let rm = run(RunMethod::Mean, MechanismKind::Mnar, seed);
        assert!(
            rd.imputation_l1.unwrap() < rm.imputation_l1.unwrap(),
            "seed {}: imputation L1 {} not below mean baseline {}",
            seed,
            rd.imputation_l1.unwrap(),
            rm.imputation_l1.unwrap()
        );
        assert!(
            rd.percent_bias.unwrap() < rm.percent_bias.unwrap(),
            "seed {}: percent bias {} not below mean baseline {}",
            seed,
            rd.percent_bias.unwrap(),
            rm.percent_bias.unwrap()
        );
        assert!(
            rd.pred_l1_incomplete.unwrap() < rm.pred_l1_incomplete.unwrap(),
            "seed {}: incomplete-row prediction L1 {} not below mean baseline {}",
            seed,
            rd.pred_l1_incomplete.unwrap(),
            rm.pred_l1_incomplete.unwrap()
        );
        if rd.percent_bias.unwrap() < ri.percent_bias.unwrap() {
            dlglm_beats_idlglm_pb += 1;
        }
    }
    assert!(
        dlglm_beats_idlglm_pb >= 2,
        "dlglm beat idlglm on percent bias in only {}/3 MNAR seeds",
        dlglm_beats_idlglm_pb
    );

    for kind in [MechanismKind::Mcar, MechanismKind::Mar] {
        let rd = run(RunMethod::Dlglm, kind, seeds[0]);
        let ri = run(RunMethod::Idlglm, kind, seeds[0]);
        let gap = (ri.percent_bias.unwrap() - rd.percent_bias.unwrap()).abs();
        assert!(
            gap <= 10.0,
            "{:?}: idlglm percent bias {} is {} points from dlglm {}",
            kind,
            ri.percent_bias.unwrap(),
            gap,
            rd.percent_bias.unwrap()
        );
    }

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 2700.0, "took {:.1}s", dt);
    println!(
        "acceptance 05 simulation study orderings: PASS (dlglm < mean 3/3, dlglm < idlglm pb {}/3, {:.0}s)",
        dlglm_beats_idlglm_pb, dt
    );
}

#[test]
fn a06_mask_generation_calibrates_and_points_the_right_way() {
    let t0 = Instant::now();
    let (n, p) = (100_000usize, 8usize);
    let cfg = SimConfig { n, p, d: 2, ..Default::default() };
    let mut rng = ChaCha20Rng::seed_from_u64(61);
    let (ds, _) = simulate_xy(&cfg, &mut rng).unwrap();

    let mut lines = String::new();
    for kind in [MechanismKind::Mcar, MechanismKind::Mar, MechanismKind::Mnar] {
        let template = MechanismTemplate {
            kind,
            form: MechanismForm::Linear,
            target_missing_rate: 0.3,
            frac_features_missing: 0.5,
        };
        let mut spec = draw_phi(&template, p, &mut rng).unwrap();
        calibrate_phi0(&mut spec, &ds.x, n, p, &ds.y).unwrap();
        let mask = simulate_mask(&spec, &ds.x, n, p, &ds.y, &mut rng).unwrap();
        for &j in &spec.missing_features {
            let rate = mask.col_missing_rate(j);
            assert!(
                (rate - 0.3).abs() <= 0.01,
                "{:?} feature {}: realized missing rate {}",
                kind,
                j,
                rate
            );
        }
        lines.push_str(&format!(
            " {:?} rates {:?};",
            kind,
            spec.missing_features.iter().map(|&j| (mask.col_missing_rate(j) * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ));

        if kind == MechanismKind::Mnar {
            // Each feature masks itself: with a positive driver weight the
            // observation probability rises in the value, so the realized
            // missing rate must fall from the bottom to the top quartile.
            for (t, &j) in spec.missing_features.iter().enumerate() {
                let driver = spec.phi3[t][j];
                assert!(driver > 0.0, "self-mask weight for feature {} is {}", j, driver);
                let mut vals: Vec<(f64, bool)> =
                    (0..n).map(|i| (ds.x[i * p + j], !mask.observed(i, j))).collect();
                vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let q = n / 4;
                let bottom = vals[..q].iter().filter(|v| v.1).count() as f64 / q as f64;
                let top = vals[n - q..].iter().filter(|v| v.1).count() as f64 / q as f64;
                assert!(
                    bottom > top + 0.1,
                    "feature {}: missing rate {} in bottom quartile vs {} in top",
                    j,
                    bottom,
                    top
                );
            }
        }
    }

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 60.0, "took {:.1}s", dt);
    println!("acceptance 06 mask calibration: PASS ({} {:.1}s)", lines.trim(), dt);
}

#[test]
fn a07_early_stopping_follows_the_literal_rule() {
    let t0 = Instant::now();
    let mut store = ParameterStore::new();
    store.register("p", Tensor::param(1, 1, vec![0.0]).unwrap()).unwrap();

    // A flat positive sequence strikes every check and stops at patience.
    let mut state = EarlyStopState::new(5.0, &store);
    for i in 0..49 {
        assert!(!state.update(5.0, 1e-4, 50, &store), "stopped early at check {}", i);
    }
    assert!(state.update(5.0, 1e-4, 50, &store), "did not stop at check 50");
    assert_eq!(state.strikes(), 50);

    // A strictly improving sequence never strikes and tracks the best.
    let mut state = EarlyStopState::new(-100.0, &store);
    let mut l = -100.0;
    for _ in 0..300 {
        l += 0.5;
        assert!(!state.update(l, 1e-4, 50, &store));
    }
    assert_eq!(state.strikes(), 0);
    assert!((state.best() - l).abs() < 1e-12);

    // The snapshot restored after stopping is the one taken at the best.
    let mut state = EarlyStopState::new(-10.0, &store);
    store.set_values("p", &[2.0]).unwrap();
    assert!(!state.update(-9.0, 1e-4, 3, &store));
    store.set_values("p", &[3.0]).unwrap();
    assert!(!state.update(-20.0, 1e-4, 3, &store));
    assert!(!state.update(-21.0, 1e-4, 3, &store));
    assert!(state.update(-22.0, 1e-4, 3, &store));
    state.restore_best(&store).unwrap();
    assert_eq!(store.get("p").unwrap().to_vec(), vec![2.0]);
    assert!((state.best() - (-9.0)).abs() < 1e-12);

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 1.0, "took {:.3}s", dt);
    println!("acceptance 07 early stopping: PASS ({:.3}s)", dt);
}

fn orthogonality_err(w: &[f64], rows: usize, cols: usize) -> f64 {
    // Gram over the smaller dimension must be the identity.
    let small = rows.min(cols);
    let mut worst = 0.0f64;
    for a in 0..small {
        for b in 0..small {
            let mut dot = 0.0;
            for k in 0..rows.max(cols) {
                let (va, vb) = if rows <= cols {
                    (w[a * cols + k], w[b * cols + k])
                } else {
                    (w[k * cols + a], w[k * cols + b])
                };
                dot += va * vb;
            }
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

#[test]
fn a08_initial_weights_are_semi_orthogonal() {
    let t0 = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(81);
    let mut worst = 0.0f64;

    for &(r, c) in &[(1usize, 1usize), (3, 8), (8, 3), (5, 5), (2, 7), (13, 4)] {
        let w = semi_orthogonal_init(r, c, &mut rng).unwrap();
        worst = worst.max(orthogonality_err(&w, r, c));
    }

    // Every weight matrix of freshly built models, across architectures.
    let ds = toy_dataset(40, 5, 82, &[0, 2]);
    let schema = SchemaInfo::from_dataset(&ds);
    for (method, nhl) in [
        (dlglm::model::Method::Dlglm, 2),
        (dlglm::model::Method::Idlglm, 1),
        (dlglm::model::Method::Dlglmx, 0),
    ] {
        let cfg = ModelConfig {
            method,
            dz: 2,
            h: 7,
            nhl,
            h_y: 3,
            nhl_y: 1,
            h_r: 4,
            nhl_r: 1,
            ..Default::default()
        };
        let model = build_model(&cfg, &schema, &mut rng).unwrap();
        for name in model.store.names() {
            if !name.ends_with(".w") {
                continue;
            }
            let tensor = model.store.get(&name).unwrap();
            let (r, c) = (tensor.rows(), tensor.cols());
            let err = orthogonality_err(&tensor.to_vec(), r, c);
            assert!(err <= 1e-6, "{} ({}x{}): orthogonality error {}", name, r, c, err);
            worst = worst.max(err);
        }
    }
    assert!(worst <= 1e-6, "worst orthogonality error {}", worst);

    let dt = t0.elapsed().as_secs_f64();
    println!("acceptance 08 semi-orthogonal init: PASS (worst {:.2e}, {:.2}s)", worst, dt);
}

#[test]
fn a09_metrics_match_hand_computed_values() {
    let t0 = Instant::now();

    let v = mean_abs_error_masked(
        &[1.0, 2.0, 3.0, 4.0],
        &[1.5, 2.0, 5.0, 0.0],
        &[true, false, true, false],
    )
    .unwrap();
    assert!((v - 1.25).abs() < 1e-15);

    let pb = percent_bias(&[0.25, -0.25], &[0.2, -0.3]).unwrap();
    assert!((pb - 20.0).abs() < 1e-12);
    assert!(percent_bias(&[0.0], &[0.1]).is_err());

    // tp=8 fp=2 tn=5 fn=1.
    let mut y_true = vec![1.0; 8];
    let mut y_pred = vec![1.0; 8];
    y_true.extend_from_slice(&[0.0, 0.0]);
    y_pred.extend_from_slice(&[1.0, 1.0]);
    y_true.extend_from_slice(&[0.0; 5]);
    y_pred.extend_from_slice(&[0.0; 5]);
    y_true.push(1.0);
    y_pred.push(0.0);
    let c = confusion_binary(&y_true, &y_pred).unwrap();
    assert_eq!(c, ConfusionCounts { tp: 8, fp: 2, tn: 5, fn_: 1 });
    assert!((accuracy(&c) - 13.0 / 16.0).abs() < 1e-15);
    assert!((ppv(&c, false).unwrap() - 0.8).abs() < 1e-15, "standard tp/(tp+fp)");
    assert!((ppv(&c, true).unwrap() - 8.0 / 13.0).abs() < 1e-15, "literal tp/(tp+tn)");
    assert!((f1(&c).unwrap() - 16.0 / 19.0).abs() < 1e-15);

    let m = vec![vec![20, 5], vec![10, 15]];
    assert!((cohens_kappa(&m).unwrap() - 0.4).abs() < 1e-12);

    let a = auc(&[1.0, 1.0, 1.0, 0.0, 0.0], &[0.9, 0.8, 0.5, 0.5, 0.3]).unwrap();
    assert!((a - 5.5 / 6.0).abs() < 1e-12, "ties count half");

    assert_eq!(classify_binary(&[0.4, 0.5, 0.6]), vec![0.0, 0.0, 1.0]);

    let mc = confusion_matrix(&[0.0, 1.0, 2.0, 2.0, 1.0, 0.0], &[0.0, 1.0, 2.0, 1.0, 1.0, 2.0], 3).unwrap();
    assert_eq!(mc[0], vec![1, 0, 1]);
    let k = cohens_kappa(&mc).unwrap();
    assert!(k > 0.0 && k < 1.0);

    let dt = t0.elapsed().as_secs_f64();
    println!("acceptance 09 metric values: PASS ({:.3}s)", dt);
}

#[test]
fn a10_repeated_runs_are_byte_identical() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        seed: 9,
        method: RunMethod::Dlglm,
        data: DataSource::Simulate { sim: SimConfig { n: 400, p: 4, d: 2, ..Default::default() } },
        grid: GridSpec { h: vec![8], nhl: vec![1], h_r: vec![4], nhl_r: vec![0], lr: vec![0.01] },
        k_train: 2,
        k_eval: 10,
        batch_size: 200,
        epochs_max: 3,
        ..Default::default()
    };
    cfg.validate().unwrap();

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cmd_run(&cfg, &a).unwrap();
    cmd_run(&cfg, &b).unwrap();
    let ma = std::fs::read(a.join("metrics.json")).unwrap();
    let mb = std::fs::read(b.join("metrics.json")).unwrap();
    assert!(!ma.is_empty());
    assert_eq!(ma, mb, "metrics.json differs between identical runs");

    let dt = t0.elapsed().as_secs_f64();
    println!(
        "acceptance 10 run determinism: PASS ({} identical bytes, {:.1}s)",
        ma.len(),
        dt
    );
}
