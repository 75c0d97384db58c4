use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dlglm::experiment::{
    cmd_evaluate, cmd_impute, cmd_mask, cmd_predict, cmd_run, cmd_simulate, mechanism_kind_parse,
    ExperimentConfig, RunMethod,
};
use dlglm::missingness::{MechanismForm, MechanismTemplate};
use dlglm::Error;

#[derive(Parser)]
#[command(name = "dlglm", version, about = "Deeply-learned GLMs with missing covariates")]
struct Cli {
    /// Worker threads for the hyperparameter grid (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config JSON; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// dlglm, idlglm, dlglmx, idlglmx, or mean.
    #[arg(long)]
    method: Option<String>,
    /// MCAR, MAR, or MNAR; keeps the config's form and target rate.
    #[arg(long)]
    mechanism: Option<String>,
    /// Importance samples per training step.
    #[arg(long = "k-train")]
    k_train: Option<usize>,
    /// Importance samples for imputation and prediction.
    #[arg(long = "k-eval")]
    k_eval: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a complete synthetic dataset (X.csv, Y.csv, truth.json).
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a missingness mask for complete data (X.csv + Y.csv).
    Mask {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory holding X.csv and Y.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline: data, mask, train, impute, predict, evaluate.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Impute missing entries of a data directory with a saved model.
    Impute {
        #[arg(long)]
        model: PathBuf,
        /// Directory holding X.csv, Y.csv, and optionally R.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Predict responses for a data directory with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Directory holding X.csv and optionally Y.csv, R.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute metrics from a run directory against reference data.
    Evaluate {
        /// Directory holding the reference X.csv, Y.csv, R.csv, truth.json.
        #[arg(long)]
        data: PathBuf,
        /// Directory holding predictions and imputations to score.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(args: &ConfigArgs) -> dlglm::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = &args.method {
        cfg.method = RunMethod::parse(m)?;
    }
    if let Some(mech) = &args.mechanism {
        let kind = mechanism_kind_parse(mech)?;
        match cfg.mechanism.as_mut() {
            Some(t) => t.kind = kind,
            None => {
                cfg.mechanism = Some(MechanismTemplate {
                    kind,
                    form: MechanismForm::Linear,
                    target_missing_rate: 0.3,
                    frac_features_missing: 0.5,
                })
            }
        }
    }
    if let Some(k) = args.k_train {
        cfg.k_train = k;
    }
    if let Some(k) = args.k_eval {
        cfg.k_eval = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_metric(name: &str, v: Option<f64>) {
    if let Some(v) = v {
        println!("  {:<20} {:.6}", name, v);
    }
}

fn run_command(cmd: &Cmd) -> dlglm::Result<()> {
    match cmd {
        Cmd::Simulate { cfg, out } => {
            let cfg = resolve_config(cfg)?;
            let m = cmd_simulate(&cfg, out)?;
            println!("simulated {} rows x {} features into {}", m.n, m.p_cols, out.display());
        }
        Cmd::Mask { cfg, data, out } => {
            let cfg = resolve_config(cfg)?;
            let (_, rate) = cmd_mask(&cfg, data, out)?;
            println!("realized missing rate: {:.4}", rate);
            println!("mask written to {}", out.display());
        }
        Cmd::Run { cfg, out } => {
            let cfg = resolve_config(cfg)?;
            let report = cmd_run(&cfg, out)?;
            println!(
                "run complete: method={} mechanism={} seed={}",
                report.method, report.mechanism, report.seed
            );
            println!(
                "  split train/valid/test: {}/{}/{}",
                report.n_train, report.n_valid, report.n_test
            );
            print_metric("best_valid_bound", report.best_valid_bound);
            print_metric("imputation_l1", report.imputation_l1);
            print_metric("percent_bias", report.percent_bias);
            print_metric("pred_l1_complete", report.pred_l1_complete);
            print_metric("pred_l1_incomplete", report.pred_l1_incomplete);
            print_metric("accuracy", report.accuracy);
            print_metric("kappa", report.kappa);
            print_metric("auc", report.auc);
            print_metric("ppv", report.ppv);
            print_metric("f1", report.f1);
            print_metric("ess_mean", report.ess_mean);
            println!("artifacts in {}", out.display());
        }
        Cmd::Impute { model, data, out, k, seed } => {
            let m = cmd_impute(model, data, out, *k, *seed)?;
            println!(
                "imputed {} rows (missing rate {:.4}) into {}",
                m.n,
                m.realized_missing_rate.unwrap_or(0.0),
                out.display()
            );
        }
        Cmd::Predict { model, data, out, k, seed } => {
            let m = cmd_predict(model, data, out, *k, *seed)?;
            println!("predicted {} rows into {}", m.n, out.display());
        }
        Cmd::Evaluate { data, run, out } => {
            let report = cmd_evaluate(data, run, out)?;
            println!("evaluated {} against {}", run.display(), data.display());
            print_metric("imputation_l1", report.imputation_l1);
            print_metric("pred_l1_complete", report.pred_l1_complete);
            print_metric("pred_l1_incomplete", report.pred_l1_incomplete);
            print_metric("accuracy", report.accuracy);
            print_metric("kappa", report.kappa);
            print_metric("auc", report.auc);
            print_metric("ppv", report.ppv);
            print_metric("f1", report.f1);
            println!("metrics written to {}", out.join("metrics.json").display());
        }
    }
    Ok(())
}

/// Stage-coded exit values: 2 config, 3 data, 4 mask, 5 training, 6
/// imputation, 7 prediction, 8 evaluation.
fn exit_code_for(cmd: &Cmd, e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        Error::Mask(_) => 4,
        Error::Train(_) | Error::Shape(_) => 5,
        Error::Inference(_) => match cmd {
            Cmd::Predict { .. } => 7,
            _ => 6,
        },
        Error::Metric(_) => 8,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run_command(&cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code_for(&cli.cmd, &e))
        }
    }
}
