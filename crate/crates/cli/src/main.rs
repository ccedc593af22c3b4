//! Command-line driver: scenario simulation, joint estimation runs, method
//! comparison sweeps, the noise-model study, and report aggregation.
//!
//! Exit codes: 0 success, 2 configuration/validation error, 3 numerical
//! failure. All commands are deterministic given (config, seed); wall times
//! are written as 0 unless `--timing` is passed so result files stay
//! byte-reproducible.

mod config;

use clap::{Parser, Subcommand, ValueEnum};
use config::AppConfig;
use mixloc::bilevel::{run_method, BilevelConfig, BilevelResult, Method};
use mixloc::io::{
    append_records, read_dataset, read_models, read_records, rmse, summarize, write_dataset,
    write_models, write_trajectory, ExperimentRecord,
};
use mixloc::lie::Pose;
use mixloc::scene::Dataset;
use mixloc::sim::{perturb_for_study, simulate};
use mixloc::vb::{fit_cgmm, fit_ugmm};
use mixloc::{bilevel, seeds};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "mixloc", version, about = "TDOA localization with learned mixture noise models")]
struct Cli {
    /// Configuration file (key = value format; see `mixloc default-config`)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, env = "MIXLOC_OUT", default_value = "mixloc-out")]
    out: PathBuf,
    /// Worker threads for sweeps (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Record real wall times (makes result files non-reproducible)
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Gauss,
    Cgmm,
    Ugmm,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Gauss => Method::Gauss,
            MethodArg::Cgmm => Method::CGmm,
            MethodArg::Ugmm => Method::UGmm,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset (with ground truth and truth noise models)
    Simulate {
        /// Spatial dimension (1, 2 or 3); overrides the config
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Estimate a trajectory and noise models from a dataset file
    Run {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "ugmm")]
        method: MethodArg,
        /// Zero every propagated variance (ugmm becomes cgmm)
        #[arg(long)]
        force_phi_zero: bool,
        /// Truth models file for KL evaluation (default: models_truth.txt
        /// next to the dataset, when present)
        #[arg(long)]
        truth_models: Option<PathBuf>,
    },
    /// Simulate and run all three methods over dimensions and seeds
    Compare {
        /// Number of seeds per dimension; overrides the config
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Noise-model learning study over uncertainty levels and mis-scalings
    StudyNoise,
    /// Aggregate result CSVs in a directory into a summary
    Report { dir: PathBuf },
    /// Print the canonical configuration with all defaults
    DefaultConfig,
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(run_cli(cli));
}

fn load_config(path: &Option<PathBuf>) -> Result<AppConfig, String> {
    match path {
        None => Ok(AppConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
            AppConfig::parse(&text)
        }
    }
}

fn run_cli(cli: Cli) -> i32 {
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    let cfg = match load_config(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match &cli.command {
        Command::DefaultConfig => {
            print!("{}", AppConfig::default_text());
            0
        }
        Command::Simulate { dim } => cmd_simulate(&cli, &cfg, *dim),
        Command::Run {
            dataset,
            method,
            force_phi_zero,
            truth_models,
        } => cmd_run(&cli, &cfg, dataset, (*method).into(), *force_phi_zero, truth_models),
        Command::Compare { seeds } => cmd_compare(&cli, &cfg, *seeds),
        Command::StudyNoise => cmd_study_noise(&cli, &cfg),
        Command::Report { dir } => cmd_report(dir),
    }
}

fn ensure_out(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

fn cmd_simulate(cli: &Cli, cfg: &AppConfig, dim: Option<usize>) -> i32 {
    let dim = dim.unwrap_or(cfg.dim);
    let seed = cli.seed.unwrap_or(0);
    let scenario = match cfg.scenario(dim, seed) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let out = match simulate(&scenario) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Err(e) = ensure_out(&cli.out) {
        eprintln!("error: {e}");
        return 2;
    }
    let dataset_path = cli.out.join("dataset.txt");
    let models_path = cli.out.join("models_truth.txt");
    if let Err(e) = write_dataset(&dataset_path, &out.dataset, Some(&out.truth))
        .and_then(|_| write_models(&models_path, &out.truth_theta))
    {
        eprintln!("error: {e}");
        return 2;
    }
    println!(
        "simulated dim={dim} T={} pairs={} measurements={} seed={seed} -> {}",
        out.dataset.num_steps(),
        out.dataset.anchors.pairs().len(),
        out.dataset.tdoa.len(),
        dataset_path.display()
    );
    0
}

struct RunOutput {
    result: BilevelResult,
    record: ExperimentRecord,
}

// Shared by run and compare: execute one method on one dataset and build
// its result record.
#[allow(clippy::too_many_arguments)]
fn execute(
    dataset: &Dataset,
    truth: Option<&[Pose]>,
    truth_theta: Option<&BTreeMap<(usize, usize), mixloc::mixture::Gmm1D>>,
    method: Method,
    bl_cfg: &BilevelConfig,
    app: &AppConfig,
    scenario_label: &str,
    seed: u64,
    timing: bool,
) -> Result<RunOutput, String> {
    let start = Instant::now();
    let result = run_method(dataset, method, bl_cfg, seed).map_err(|e| e.to_string())?;
    let wall = start.elapsed().as_secs_f64();

    let rmse_m = match truth {
        Some(truth) => rmse(&result.trajectory.poses, truth).map_err(|e| e.to_string())?,
        None => f64::NAN,
    };
    let mut per_pair_kl = Vec::new();
    if let Some(theta_true) = truth_theta {
        for (pair, gmm_true) in theta_true {
            if let Some(gmm_est) = result.theta.get(pair) {
                per_pair_kl.push(app.kl(gmm_true, gmm_est));
            }
        }
    }
    let kl_mean = if per_pair_kl.is_empty() {
        f64::NAN
    } else {
        per_pair_kl.iter().sum::<f64>() / per_pair_kl.len() as f64
    };
    let record = ExperimentRecord {
        scenario: scenario_label.to_string(),
        method: method.label().to_string(),
        seed,
        rmse_m,
        kl_mean,
        per_pair_kl,
        outer_iters: result.diagnostics.len(),
        term_reason: result.termination.label().to_string(),
        wall_s: if timing { wall } else { 0.0 },
    };
    Ok(RunOutput { result, record })
}

fn cmd_run(
    cli: &Cli,
    cfg: &AppConfig,
    dataset_path: &Path,
    method: Method,
    force_phi_zero: bool,
    truth_models: &Option<PathBuf>,
) -> i32 {
    let (dataset, truth) = match read_dataset(dataset_path) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let models_path = truth_models.clone().or_else(|| {
        let sibling = dataset_path.parent()?.join("models_truth.txt");
        sibling.exists().then_some(sibling)
    });
    let truth_theta = match models_path {
        Some(p) => match read_models(&p) {
            Ok(m) => Some(m),
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        },
        None => None,
    };
    let mut bl_cfg = cfg.bilevel();
    bl_cfg.force_phi_zero = bl_cfg.force_phi_zero || force_phi_zero;
    let seed = cli.seed.unwrap_or(0);
    let label = format!("sim{}d", dataset.dim());
    let run = match execute(
        &dataset,
        truth.as_deref(),
        truth_theta.as_ref(),
        method,
        &bl_cfg,
        cfg,
        &label,
        seed,
        cli.timing,
    ) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 3;
        }
    };
    if let Err(e) = ensure_out(&cli.out) {
        eprintln!("error: {e}");
        return 2;
    }
    let traj = &run.result.trajectory;
    let pair_cols = dataset.anchors.pairs().len();
    let io_result = write_trajectory(
        &cli.out.join("trajectory.txt"),
        &traj.poses,
        &traj.covariances,
        traj.final_loss,
    )
    .and_then(|_| write_models(&cli.out.join("models.txt"), &run.result.theta))
    .and_then(|_| append_records(&cli.out.join("record.csv"), &[run.record.clone()], pair_cols));
    if let Err(e) = io_result {
        eprintln!("error: {e}");
        return 2;
    }
    println!(
        "{} {}: rmse_m={} outer_iters={} term={}",
        label,
        run.record.method,
        if run.record.rmse_m.is_nan() {
            "n/a".to_string()
        } else {
            format!("{:.6}", run.record.rmse_m)
        },
        run.record.outer_iters,
        run.record.term_reason
    );
    if run.result.termination == mixloc::bilevel::Termination::Failed {
        eprintln!(
            "error: {}",
            run.result.error.as_deref().unwrap_or("solver failure")
        );
        return 3;
    }
    0
}

fn cmd_compare(cli: &Cli, cfg: &AppConfig, seeds_override: Option<u64>) -> i32 {
    let num_seeds = seeds_override.unwrap_or(cfg.compare_seeds);
    let dims = cfg.compare_dims.clone();
    let mut jobs_list = Vec::new();
    for &dim in &dims {
        for seed in 0..num_seeds {
            for method in [Method::Gauss, Method::CGmm, Method::UGmm] {
                jobs_list.push((dim, seed, method));
            }
        }
    }
    let bl_cfg = cfg.bilevel();
    let results: Vec<Result<ExperimentRecord, String>> = jobs_list
        .par_iter()
        .map(|&(dim, seed, method)| {
            let scenario = cfg.scenario(dim, seed)?;
            let out = simulate(&scenario).map_err(|e| e.to_string())?;
            let label = format!("sim{dim}d");
            match execute(
                &out.dataset,
                Some(&out.truth),
                Some(&out.truth_theta),
                method,
                &bl_cfg,
                cfg,
                &label,
                seed,
                cli.timing,
            ) {
                Ok(run) => Ok(run.record),
                Err(e) => {
                    // per-run numerical failures become records so the
                    // sweep continues
                    eprintln!("warning: {label} {} seed {seed}: {e}", method.label());
                    Ok(ExperimentRecord {
                        scenario: label,
                        method: method.label().to_string(),
                        seed,
                        rmse_m: f64::NAN,
                        kl_mean: f64::NAN,
                        per_pair_kl: vec![],
                        outer_iters: 0,
                        term_reason: "error".to_string(),
                        wall_s: 0.0,
                    })
                }
            }
        })
        .collect();
    let mut records = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        }
    }
    // canonical order regardless of completion order
    records.sort_by(|a, b| {
        (&a.scenario, &a.method, a.seed).cmp(&(&b.scenario, &b.method, b.seed))
    });
    if let Err(e) = ensure_out(&cli.out) {
        eprintln!("error: {e}");
        return 2;
    }
    let pair_cols = records.iter().map(|r| r.per_pair_kl.len()).max().unwrap_or(0);
    if let Err(e) = append_records(&cli.out.join("results.csv"), &records, pair_cols) {
        eprintln!("error: {e}");
        return 2;
    }
    let summary = summarize(&records);
    let mut text =
        String::from("scenario,method,n,rmse_mean,rmse_p50,rmse_p90,kl_mean,kl_p50,kl_p90\n");
    println!("scenario  method  n   rmse_mean  kl_mean");
    for g in &summary {
        println!(
            "{:<9} {:<7} {:<3} {:>9.5} {:>8.4}",
            g.scenario, g.method, g.count, g.rmse_mean, g.kl_mean
        );
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            g.scenario,
            g.method,
            g.count,
            mixloc::io::fmt_f64(g.rmse_mean),
            mixloc::io::fmt_f64(g.rmse_p50),
            mixloc::io::fmt_f64(g.rmse_p90),
            mixloc::io::fmt_f64(g.kl_mean),
            mixloc::io::fmt_f64(g.kl_p50),
            mixloc::io::fmt_f64(g.kl_p90),
        ));
    }
    if let Err(e) = fs::write(cli.out.join("summary.csv"), text) {
        eprintln!("error: {e}");
        return 2;
    }
    0
}

fn cmd_study_noise(cli: &Cli, cfg: &AppConfig) -> i32 {
    // 3-D setup, first pair only, one measurement per step
    let mut combos = Vec::new();
    for seed in 0..cfg.study_seeds {
        for &omega in &cfg.study_omegas {
            for &delta in &cfg.study_deltas {
                combos.push((seed, omega, delta));
            }
        }
    }
    let rows: Vec<Result<(f64, f64, u64, f64, f64), String>> = combos
        .par_iter()
        .map(|&(seed, omega, delta)| {
            let mut scenario = cfg.scenario(3, seed)?;
            scenario.t_steps = cfg.study_samples;
            scenario.pairs.truncate(1);
            scenario.noise_truth.truncate(1);
            let out = simulate(&scenario).map_err(|e| e.to_string())?;
            let pair = scenario.pairs[0];
            let truth_gmm = &out.truth_theta[&pair];

            let (noisy, covs) =
                perturb_for_study(&out.truth, omega, delta, seed, cfg.uniform_bounds);
            let samples =
                bilevel::extract_residual_samples(&out.dataset, &noisy, &covs, pair, cfg.kappa)
                    .map_err(|e| e.to_string())?;
            let values: Vec<f64> = samples.iter().map(|s| s.r).collect();
            let priors = cfg.vb_priors_for(&values);
            let fit_seed = seeds::derive(seed, seeds::VB_INIT, 0);
            let vb_cfg = mixloc::vb::VbConfig {
                max_sweeps: cfg.vb_max_sweeps,
                tol: cfg.vb_tol,
            };
            let (_, ugmm) = fit_ugmm(&samples, cfg.components, &priors, fit_seed, &vb_cfg)
                .map_err(|e| e.to_string())?;
            let (_, cgmm) = fit_cgmm(&values, cfg.components, &priors, fit_seed, &vb_cfg)
                .map_err(|e| e.to_string())?;
            let kl_u = cfg.kl(truth_gmm, &ugmm);
            let kl_c = cfg.kl(truth_gmm, &cgmm);
            Ok((omega, delta, seed, kl_u, kl_c))
        })
        .collect();

    let mut ok_rows = Vec::new();
    for r in rows {
        match r {
            Ok(row) => ok_rows.push(row),
            Err(e) => {
                eprintln!("error: {e}");
                return 3;
            }
        }
    }
    ok_rows.sort_by(|a, b| {
        (a.0, a.1, a.2)
            .partial_cmp(&(b.0, b.1, b.2))
            .expect("finite study keys")
    });
    if let Err(e) = ensure_out(&cli.out) {
        eprintln!("error: {e}");
        return 2;
    }
    let mut text = String::from("omega,delta,seed,kl_ugmm_nats,kl_cgmm_nats,improvement_nats\n");
    for (omega, delta, seed, kl_u, kl_c) in &ok_rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            omega,
            delta,
            seed,
            mixloc::io::fmt_f64(*kl_u),
            mixloc::io::fmt_f64(*kl_c),
            mixloc::io::fmt_f64(kl_c - kl_u)
        ));
    }
    let path = cli.out.join("study.csv");
    if let Err(e) = fs::write(&path, text) {
        eprintln!("error: {e}");
        return 2;
    }
    println!("study rows: {} -> {}", ok_rows.len(), path.display());
    0
}

fn cmd_report(dir: &Path) -> i32 {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", dir.display());
            return 2;
        }
    };
    let mut records = Vec::new();
    let mut paths: Vec<PathBuf> = entries
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    for path in paths {
        match read_records(&path) {
            Ok((mut rows, warnings)) => {
                for w in warnings {
                    eprintln!("warning: {}: {w}", path.display());
                }
                records.append(&mut rows);
            }
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    if records.is_empty() {
        eprintln!("error: no result records found in {}", dir.display());
        return 2;
    }
    records.sort_by(|a, b| {
        (&a.scenario, &a.method, a.seed).cmp(&(&b.scenario, &b.method, b.seed))
    });
    let summary = summarize(&records);
    let mut text =
        String::from("scenario,method,n,rmse_mean,rmse_p50,rmse_p90,kl_mean,kl_p50,kl_p90\n");
    println!("scenario  method  n   rmse_mean  rmse_p50  rmse_p90  kl_mean");
    for g in &summary {
        println!(
            "{:<9} {:<7} {:<3} {:>9.5} {:>9.5} {:>9.5} {:>8.4}",
            g.scenario, g.method, g.count, g.rmse_mean, g.rmse_p50, g.rmse_p90, g.kl_mean
        );
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            g.scenario,
            g.method,
            g.count,
            mixloc::io::fmt_f64(g.rmse_mean),
            mixloc::io::fmt_f64(g.rmse_p50),
            mixloc::io::fmt_f64(g.rmse_p90),
            mixloc::io::fmt_f64(g.kl_mean),
            mixloc::io::fmt_f64(g.kl_p50),
            mixloc::io::fmt_f64(g.kl_p90),
        ));
    }
    let out_path = dir.join("report_summary.csv");
    if let Err(e) = fs::write(&out_path, text) {
        eprintln!("error: {e}");
        return 2;
    }
    println!("summary -> {}", out_path.display());
    0
}
