//! Command-line front end: simulation, estimation, CRB evaluation,
//! Monte-Carlo experiments, runtime benchmarks and case validation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mlbest::crb;
use mlbest::dcmodel::{self, StatePrior};
use mlbest::estimators::{self, MlBestOptions, RecoveryMethod, SolverSettings};
use mlbest::graph;
use mlbest::harness::{self, AlphaSpec, ExperimentConfig, HarnessError, NoiseSpec, Scenario};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(
    name = "mlbest",
    about = "Blind estimation of power-grid states and topology from DC power measurements",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate DC power measurements for a case file.
    Simulate(SimulateArgs),
    /// Run the blind estimation pipeline on a measurements file.
    Estimate(EstimateArgs),
    /// Evaluate the Cramer-Rao bound for a case, prior and noise level.
    Crb(CrbArgs),
    /// Run a Monte-Carlo experiment from a config file.
    Experiment(ExperimentArgs),
    /// Runtime study of the topology-recovery methods.
    Bench(BenchArgs),
    /// Check the Laplacian properties of a case file.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// Learning rate for the augmented-Lagrangian update.
    #[arg(long, default_value_t = SolverSettings::default().eta)]
    eta: f64,
    /// Multiplier/penalty step.
    #[arg(long, default_value_t = SolverSettings::default().gamma)]
    gamma: f64,
    #[arg(long, default_value_t = SolverSettings::default().max_iters)]
    max_iters: usize,
    /// Stop when the iterate step norm falls below this.
    #[arg(long, default_value_t = SolverSettings::default().epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = SolverSettings::default().dykstra_max_iters)]
    dykstra_max_iters: usize,
    #[arg(long, default_value_t = SolverSettings::default().dykstra_tol)]
    dykstra_tol: f64,
}

impl SolverArgs {
    fn settings(&self) -> SolverSettings {
        SolverSettings {
            eta: self.eta,
            gamma: self.gamma,
            max_iters: self.max_iters,
            epsilon: self.epsilon,
            dykstra_max_iters: self.dykstra_max_iters,
            dykstra_tol: self.dykstra_tol,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Case file with the ground-truth topology.
    #[arg(long)]
    case: PathBuf,
    /// Number of time samples.
    #[arg(long)]
    n: usize,
    /// Target SNR in dB (mutually exclusive with --sigma2).
    #[arg(long, conflicts_with = "sigma2")]
    snr_db: Option<f64>,
    /// Noise variance.
    #[arg(long)]
    sigma2: Option<f64>,
    /// State prior scale: Sigma_theta = prior_c^2 I.
    #[arg(long, default_value_t = 1.0)]
    prior_c: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output measurements CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV with the true states.
    #[arg(long)]
    states_out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Measurements CSV (header bus_1..bus_M, one row per sample).
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long, default_value = "two_phase")]
    method: String,
    /// State prior scale: Sigma_theta = prior_c^2 I.
    #[arg(long, default_value_t = 1.0)]
    prior_c: f64,
    /// Sparsity fraction in (0,1), or "auto" for 4/M.
    #[arg(long, default_value = "auto")]
    alpha: String,
    /// Skip mean centering.
    #[arg(long)]
    no_center: bool,
    /// Output CSV for the estimated Laplacian.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output CSV for the estimated states (one row per sample).
    #[arg(long)]
    states_out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct CrbArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    prior_c: f64,
    #[arg(long, conflicts_with = "sigma2")]
    snr_db: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Sample count the bound is evaluated at.
    #[arg(long)]
    n: usize,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the worker budget (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Record wall-clock runtimes (makes the results CSV non-reproducible).
    #[arg(long)]
    measure_runtime: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Bus counts for the Watts-Strogatz sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![10, 20, 40])]
    m_list: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    degree: usize,
    #[arg(long, default_value_t = 0.2)]
    rewire_prob: f64,
    #[arg(long, default_value_t = 5.0)]
    frobenius: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![200])]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// State prior scale; the random-topology study uses c = sqrt(10).
    #[arg(long, default_value_t = 3.1622776601683795)]
    prior_c: f64,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    case: PathBuf,
    /// Tolerance for the property checks.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn solver(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_SOLVER,
            message: message.into(),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Estimator(_) => EXIT_SOLVER,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<graph::GraphError> for Failure {
    fn from(e: graph::GraphError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<dcmodel::DcModelError> for Failure {
    fn from(e: dcmodel::DcModelError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<crb::CrbError> for Failure {
    fn from(e: crb::CrbError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<estimators::EstimatorError> for Failure {
    fn from(e: estimators::EstimatorError) -> Self {
        Failure::solver(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::Estimate(args) => estimate(args),
        Command::Crb(args) => crb_command(args),
        Command::Experiment(args) => experiment(args),
        Command::Bench(args) => bench(args),
        Command::Validate(args) => validate(args),
    }
}

fn load_pair(path: &PathBuf) -> Result<graph::LaplacianPair, Failure> {
    let g = graph::load_case(path)?;
    Ok(graph::laplacian_from_graph(&g)?)
}

fn resolve_sigma2(
    lp: &graph::LaplacianPair,
    prior: &StatePrior,
    snr_db: Option<f64>,
    sigma2: Option<f64>,
) -> Result<f64, Failure> {
    match (snr_db, sigma2) {
        (Some(snr), None) => Ok(dcmodel::snr_to_noise_var(lp, prior, snr)?),
        (None, Some(s2)) if s2 >= 0.0 => Ok(s2),
        (None, Some(s2)) => Err(Failure::config(format!(
            "sigma2 must be nonnegative, got {s2}"
        ))),
        _ => Err(Failure::config(
            "specify exactly one of --snr-db and --sigma2",
        )),
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let lp = load_pair(&args.case)?;
    let prior = StatePrior::isotropic(lp.bus_count(), args.prior_c)?;
    let sigma2 = resolve_sigma2(&lp, &prior, args.snr_db, args.sigma2)?;
    let (ms, states) = dcmodel::simulate(&lp, &prior, sigma2, args.n, args.seed)?;
    harness::write_measurements(&ms, &args.out)?;
    if let Some(states_path) = &args.states_out {
        harness::write_matrix(&states.transpose(), states_path)?;
    }
    let snr = dcmodel::noise_var_to_snr_db(&lp, &prior, sigma2)?;
    println!(
        "wrote {} samples for {} buses to {} (sigma2 = {sigma2}, snr = {snr:.2} dB)",
        args.n,
        lp.bus_count(),
        args.out.display()
    );
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<(), Failure> {
    let ms = harness::read_measurements(&args.measurements)?;
    let m = ms.bus_count();
    let method: RecoveryMethod = args.method.parse().map_err(Failure::config)?;
    let alpha = if args.alpha == "auto" {
        AlphaSpec::Auto.resolve(m)
    } else {
        let a: f64 = args
            .alpha
            .parse()
            .map_err(|_| Failure::config(format!("invalid alpha '{}'", args.alpha)))?;
        if !(a > 0.0 && a < 1.0) {
            return Err(Failure::config("alpha must lie in (0,1)"));
        }
        a
    };
    let prior = StatePrior::isotropic(m, args.prior_c)?;
    let opts = MlBestOptions {
        method,
        settings: args.solver.settings(),
        alpha,
        center: !args.no_center,
    };
    let result = estimators::ml_best(&ms, &prior, &opts)?;

    println!("method:            {}", result.method);
    println!("sigma2_hat:        {}", result.sigma2_hat);
    println!("threshold tau:     {}", result.diagnostics.threshold);
    println!("iterations:        {}", result.diagnostics.iterations);
    println!("converged:         {}", result.diagnostics.converged);
    println!(
        "final residual:    {:.3e}",
        result.diagnostics.final_residual
    );
    println!(
        "constraint resid:  {:.3e}",
        result.diagnostics.projection_residual
    );
    if result.diagnostics.low_sample_warning {
        eprintln!("warning: fewer than 3M samples; estimates may be unstable");
    }
    let report = graph::validate_laplacian(&result.l_hat_pre_threshold, 1e-6);
    println!("pre-threshold estimate properties:\n{report}");
    let kept = result
        .l_hat
        .iter()
        .enumerate()
        .filter(|(idx, v)| {
            let (r, c) = (idx % m, idx / m);
            r != c && v.abs() > 0.0
        })
        .count();
    println!("off-diagonal nonzeros after thresholding: {kept}");
    if let Some(out) = &args.out {
        harness::write_matrix(&result.l_hat, out)?;
        println!("wrote Laplacian estimate to {}", out.display());
    }
    if let Some(states_out) = &args.states_out {
        harness::write_matrix(&result.states_hat.transpose(), states_out)?;
        println!("wrote state estimates to {}", states_out.display());
    }
    Ok(())
}

fn crb_command(args: CrbArgs) -> Result<(), Failure> {
    let lp = load_pair(&args.case)?;
    let prior = StatePrior::isotropic(lp.bus_count(), args.prior_c)?;
    let sigma2 = resolve_sigma2(&lp, &prior, args.snr_db, args.sigma2)?;
    let j = crb::fim(
        lp.reduced(),
        prior.sigma_theta_reduced(),
        sigma2,
        args.n,
        lp.reduction(),
    )?;
    let report = crb::crb_bound(&j, args.n)?;
    let json = harness::crb_report_to_json(&report);
    let body = serde_json::to_string_pretty(&json).expect("report serializes");
    match &args.out {
        Some(path) => {
            std::fs::write(path, body).map_err(|e| Failure::data(e.to_string()))?;
            println!("wrote CRB report to {}", path.display());
        }
        None => println!("{body}"),
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_text(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.mc_trials = trials;
    }
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    if args.measure_runtime {
        cfg.measure_runtime = true;
    }
    cfg.validate()?;

    let report = harness::run_experiment(&cfg)?;
    let results_path = cfg.output_dir.join("results.csv");
    harness::write_results(&report.rows, &results_path)?;
    harness::write_manifest(
        &cfg,
        &report.failures_per_point,
        &report.flagged_points,
        cfg.output_dir.join("manifest.json"),
    )?;
    println!(
        "wrote {} rows to {} ({} trials, {} failures)",
        report.rows.len(),
        results_path.display(),
        report.total_trials,
        report.total_failures
    );
    for point in &report.flagged_points {
        eprintln!("warning: failure rate above threshold at {point}");
    }
    if !report.flagged_points.is_empty() {
        return Err(Failure::solver(format!(
            "{} grid points exceeded the failure-rate threshold",
            report.flagged_points.len()
        )));
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let cfg = ExperimentConfig {
        scenario: Scenario::WattsStrogatz {
            m_list: args.m_list.clone(),
            degree: args.degree,
            rewire_prob: args.rewire_prob,
            frobenius_norm: args.frobenius,
        },
        noise: NoiseSpec::Sigma2(args.sigma2),
        n_list: args.n_list.clone(),
        mc_trials: args.trials,
        prior_c: args.prior_c,
        solver: args.solver.settings(),
        seed: args.seed,
        ..ExperimentConfig::default()
    };
    cfg.validate()?;
    let rows = harness::runtime_benchmark(&cfg)?;
    match &args.out {
        Some(path) => {
            harness::write_bench(&rows, path)?;
            println!("wrote {} bench rows to {}", rows.len(), path.display());
        }
        None => {
            println!("M,method,N,median_runtime_s,mean_runtime_s");
            for r in &rows {
                println!(
                    "{},{},{},{},{}",
                    r.m, r.method, r.n, r.median_runtime_s, r.mean_runtime_s
                );
            }
        }
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), Failure> {
    let g = graph::load_case(&args.case)?;
    println!(
        "{}: {} buses, {} branches, connected: {}",
        args.case.display(),
        g.bus_count(),
        g.branches().len(),
        g.is_connected()
    );
    let lp = graph::laplacian_from_graph(&g)?;
    let report = graph::validate_laplacian(lp.laplacian(), args.tol);
    print!("{report}");
    Ok(())
}
