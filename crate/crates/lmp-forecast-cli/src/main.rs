//! `lmpf` — dispatch, region enumeration, and price forecasting from the
//! command line.
//!
//! Every command reads a grid case (and usually a scenario), runs one of
//! the library pipelines, and writes a JSON report whose `metadata` block
//! records the full configuration including the root seed. Reports are
//! written to a temporary file and renamed into place, so a failed run
//! never leaves a partial output behind.
//!
//! Exit codes: 0 success, 1 usage or input-format problems, 2 infeasible
//! or empty results, 3 numerical failures inside the solvers.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use lmp_forecast::evaluation::{
    run_trajectory_experiment, write_reliability_csv, write_score_csv, EvaluationReport,
    TrajectoryExperiment,
};
use lmp_forecast::forecast::{
    dcrg_simulate, forecast_regions, forecast_via_dcrg, forecast_with_contingencies,
};
use lmp_forecast::mpp::{enumerate_regions, load_store, EnumerateOptions, RegionStore};
use lmp_forecast::network::{load_case, GridCase};
use lmp_forecast::opf::{build_mpp, MppProblem};
use lmp_forecast::stochastic::{load_scenario, ConditionalLaw, Scenario};
use lmp_forecast::{Error, ExecMode, Result};

#[derive(Parser)]
#[command(
    name = "lmpf",
    version,
    about = "Probabilistic short-term forecasting of nodal electricity prices",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the dispatch problem at one parameter point.
    SolveOpf(SolveOpfArgs),
    /// Enumerate all critical regions of a case into a store file.
    Enumerate(EnumerateArgs),
    /// Forecast region/price probabilities a horizon ahead.
    Forecast(ForecastArgs),
    /// Stream sampled parameters through the online region cache.
    SimulateDcrg(SimulateDcrgArgs),
    /// Score probabilistic and point forecasts over replicated trajectories.
    Evaluate(EvaluateArgs),
    /// Time direct solving vs the online cache vs store lookups.
    Bench(BenchArgs),
}

#[derive(clap::Args)]
struct SolveOpfArgs {
    /// Grid case JSON file.
    #[arg(long)]
    case: PathBuf,
    /// Snapshot time for scheduled topology changes.
    #[arg(long, default_value_t = 0)]
    time: u32,
    /// Parameter vector (one value per stochastic unit), comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    theta: Vec<f64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EnumerateArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long, default_value_t = 0)]
    time: u32,
    /// Stop after this many regions and mark the store truncated.
    #[arg(long, default_value_t = 10_000)]
    max_regions: usize,
    /// Root seed (interior-point search fallback).
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Worker threads (1 = sequential; default all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Write the region store here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ForecastMode {
    /// Locate samples against a pre-enumerated region store.
    Offline,
    /// Discover regions lazily from the sample stream itself.
    Dcrg,
}

#[derive(clap::Args)]
struct ForecastArgs {
    #[arg(long)]
    case: PathBuf,
    /// Scenario JSON file (mean trajectory + noise model).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    time: u32,
    /// Issue time on the scenario trajectory.
    #[arg(long, default_value_t = 0)]
    at: usize,
    /// Forecast horizon in trajectory steps.
    #[arg(long)]
    horizon: usize,
    /// Observed parameter vector at the issue time (defaults to the mean).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    observed: Option<Vec<f64>>,
    /// Monte Carlo samples per forecast.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Root seed (defaults to the scenario's seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ForecastMode::Offline)]
    mode: ForecastMode,
    /// Pre-enumerated region store (offline mode; enumerated on the fly
    /// when absent).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Mix over the case's contingency model (offline mode only).
    #[arg(long)]
    contingencies: bool,
    /// Condition on this contingency configuration having occurred
    /// (0 = unmodified case).
    #[arg(long)]
    observed_config: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SimulateDcrgArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    time: u32,
    #[arg(long, default_value_t = 0)]
    at: usize,
    #[arg(long)]
    horizon: usize,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    observed: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Warm-start from this region store instead of an empty cache.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Write the grown region store here.
    #[arg(long)]
    save_store: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    time: u32,
    #[arg(long)]
    horizon: usize,
    /// Monte Carlo samples per issued forecast.
    #[arg(long, default_value_t = 2_000)]
    samples: usize,
    /// Simulated trajectories to average over.
    #[arg(long, default_value_t = 200)]
    replications: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Reliability diagram bins.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Also write scores.csv and reliability.csv into this directory.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
    /// Worker threads (evaluation defaults to sequential for
    /// reproducible byte-identical reports).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    time: u32,
    #[arg(long, default_value_t = 0)]
    at: usize,
    #[arg(long)]
    horizon: usize,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    observed: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let outcome = match cli.command {
        Command::SolveOpf(args) => run_solve_opf(&args),
        Command::Enumerate(args) => run_enumerate(&args),
        Command::Forecast(args) => run_forecast(&args),
        Command::SimulateDcrg(args) => run_simulate_dcrg(&args),
        Command::Evaluate(args) => run_evaluate(&args),
        Command::Bench(args) => run_bench(&args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_)
        | Error::EmptyRegion(_)
        | Error::EmptyBox
        | Error::EmptyStore(_)
        | Error::OutsideStore => 2,
        Error::Unbounded(_)
        | Error::SolverFailure(_)
        | Error::Degenerate(_)
        | Error::NotPositiveDefinite(_) => 3,
        _ => 1,
    }
}

/// Resolve `--workers` into an execution mode, sizing the global rayon
/// pool on first use.
fn resolve_mode(workers: Option<usize>, parallel_default: bool) -> Result<ExecMode> {
    match workers {
        Some(0) => Err(Error::Evaluation("--workers must be at least 1".into())),
        Some(1) => Ok(ExecMode::Sequential),
        Some(n) => {
            // A second configuration attempt in the same process is fine;
            // the pool keeps its original size.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(ExecMode::Parallel)
        }
        None => Ok(if parallel_default { ExecMode::best() } else { ExecMode::Sequential }),
    }
}

/// Write `text` to `path` via a temporary sibling and an atomic rename.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    if let Err(e) = std::fs::write(&tmp, text) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

/// Emit a JSON report: pretty-printed to `--out` (atomically) or stdout.
fn emit(out: &Option<PathBuf>, report: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    match out {
        Some(path) => {
            write_atomic(path, &text)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn build_problem(case: &GridCase, time: u32) -> Result<MppProblem> {
    build_mpp(&case.snapshot_at(time)?)
}

/// Conditional distribution of the parameter `horizon` steps past `at`,
/// given the observation (scenario mean when none is supplied).
fn law_for(
    scenario: &Scenario,
    at: usize,
    horizon: usize,
    observed: &Option<Vec<f64>>,
) -> Result<ConditionalLaw> {
    let model = &scenario.model;
    if at >= model.len() {
        return Err(Error::HorizonOutOfRange { t: at, horizon, len: model.len() });
    }
    let theta_t = match observed {
        Some(v) => DVector::from_row_slice(v),
        None => model.mean_trajectory()[at].clone(),
    };
    model.conditional_law(at, horizon, &theta_t)
}

fn floats(v: &DVector<f64>) -> Vec<f64> {
    v.as_slice().to_vec()
}

fn run_solve_opf(args: &SolveOpfArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let problem = build_problem(&case, args.time)?;
    let theta = DVector::from_row_slice(&args.theta);
    let sol = problem.solve_at(&theta)?;
    let report = json!({
        "metadata": {
            "command": "solve-opf",
            "case": args.case.display().to_string(),
            "time": args.time,
            "theta": args.theta,
        },
        "solution": {
            "objective": sol.objective,
            "dispatch": floats(&sol.dispatch),
            "lambda": sol.lambda,
            "lmp": floats(&sol.lmp),
            "flows": floats(&sol.flows),
            "congestion": sol.congestion,
            "active_set": sol.active_set,
            "working_set": sol.working_set,
            "degenerate": sol.degenerate,
        },
    });
    emit(&args.out, &report)
}

fn run_enumerate(args: &EnumerateArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let problem = build_problem(&case, args.time)?;
    let opts = EnumerateOptions { max_regions: args.max_regions, seed: args.seed };
    // Enumeration itself walks the region graph sequentially for
    // deterministic ids; workers only matter for nested solves.
    let _ = resolve_mode(args.workers, true)?;
    let started = std::time::Instant::now();
    let store = enumerate_regions(&problem, &opts)?;
    log::info!(
        "enumerated {} regions in {:.2}s (truncated: {})",
        store.len(),
        started.elapsed().as_secs_f64(),
        store.truncated
    );
    let value = serde_json::to_value(&store)?;
    match &args.out {
        Some(path) => {
            let mut text = serde_json::to_string_pretty(&value)?;
            text.push('\n');
            write_atomic(path, &text)?;
            eprintln!(
                "wrote {} ({} regions, truncated: {})",
                path.display(),
                store.len(),
                store.truncated
            );
            Ok(())
        }
        None => emit(&None, &value),
    }
}

/// Load the store from `--store`, or enumerate one for the case.
fn obtain_store(
    store_path: &Option<PathBuf>,
    problem: &MppProblem,
    seed: u64,
) -> Result<RegionStore> {
    match store_path {
        Some(path) => {
            let store = load_store(path)?;
            if store.param_dim != problem.param_dim() {
                return Err(Error::Dimension {
                    what: "store parameter dimension",
                    expected: problem.param_dim(),
                    got: store.param_dim,
                });
            }
            Ok(store)
        }
        None => enumerate_regions(problem, &EnumerateOptions { seed, ..Default::default() }),
    }
}

fn run_forecast(args: &ForecastArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let scenario = load_scenario(&args.scenario)?;
    let seed = args.seed.unwrap_or(scenario.seed);
    let mode = resolve_mode(args.workers, true)?;
    let law = law_for(&scenario, args.at, args.horizon, &args.observed)?;

    let mode_name = match args.mode {
        ForecastMode::Offline => "offline",
        ForecastMode::Dcrg => "dcrg",
    };
    let metadata = json!({
        "command": "forecast",
        "case": args.case.display().to_string(),
        "scenario": args.scenario.display().to_string(),
        "time": args.time,
        "at": args.at,
        "horizon": args.horizon,
        "samples": args.samples,
        "seed": seed,
        "mode": mode_name,
        "contingencies": args.contingencies,
        "observed_config": args.observed_config,
    });

    if args.contingencies {
        if args.mode == ForecastMode::Dcrg {
            return Err(Error::Evaluation(
                "contingency mixtures require --mode offline".into(),
            ));
        }
        let model = case.contingencies.clone().ok_or_else(|| {
            Error::CaseFormat(format!(
                "--contingencies given but {} declares none",
                args.case.display()
            ))
        })?;
        let mut stores = Vec::with_capacity(model.n_outcomes());
        for k in 0..model.n_outcomes() {
            let variant = case.with_contingency(k)?;
            let problem = build_problem(&variant, args.time)?;
            stores.push(enumerate_regions(
                &problem,
                &EnumerateOptions { seed, ..Default::default() },
            )?);
        }
        let dist = forecast_with_contingencies(
            &stores,
            &model,
            &law,
            args.observed_config,
            args.at,
            args.samples,
            seed,
            mode,
        )?;
        if dist.plain_monte_carlo {
            log::warn!("law covariance is singular; estimates are plain Monte Carlo counts");
        }
        let report = json!({ "metadata": metadata, "forecast": serde_json::to_value(&dist)? });
        return emit(&args.out, &report);
    }

    let problem = build_problem(&case, args.time)?;
    let report = match args.mode {
        ForecastMode::Offline => {
            let store = obtain_store(&args.store, &problem, seed)?;
            let dist = forecast_regions(&store, &law, args.at, args.samples, seed, mode)?;
            if dist.plain_monte_carlo {
                log::warn!("law covariance is singular; estimates are plain Monte Carlo counts");
            }
            json!({ "metadata": metadata, "forecast": serde_json::to_value(&dist)? })
        }
        ForecastMode::Dcrg => {
            let mut store = match &args.store {
                Some(path) => load_store(path)?,
                None => {
                    let mut s = RegionStore::new(case.name.clone(), problem.param_dim());
                    s.seed = seed;
                    s
                }
            };
            let (dist, counters) =
                forecast_via_dcrg(&problem, &mut store, &law, args.at, args.samples, seed, mode)?;
            json!({
                "metadata": metadata,
                "forecast": serde_json::to_value(&dist)?,
                "cache": serde_json::to_value(counters)?,
                "regions_discovered": store.len(),
            })
        }
    };
    emit(&args.out, &report)
}

fn run_simulate_dcrg(args: &SimulateDcrgArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let scenario = load_scenario(&args.scenario)?;
    let seed = args.seed.unwrap_or(scenario.seed);
    let mode = resolve_mode(args.workers, true)?;
    let law = law_for(&scenario, args.at, args.horizon, &args.observed)?;
    let problem = build_problem(&case, args.time)?;

    let mut store = match &args.store {
        Some(path) => load_store(path)?,
        None => {
            let mut s = RegionStore::new(case.name.clone(), problem.param_dim());
            s.seed = seed;
            s
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thetas: Vec<DVector<f64>> = (0..args.samples).map(|_| law.sample(&mut rng)).collect();
    let started = std::time::Instant::now();
    let (samples, counters) = dcrg_simulate(&problem, &thetas, &mut store, seed, mode)?;
    let seconds = started.elapsed().as_secs_f64();

    if let Some(path) = &args.save_store {
        let mut text = serde_json::to_string_pretty(&store)?;
        text.push('\n');
        write_atomic(path, &text)?;
        eprintln!("wrote {} ({} regions)", path.display(), store.len());
    }

    let sample_rows: Vec<Value> = samples
        .iter()
        .map(|s| {
            json!({
                "region": s.region,
                "lmp": s.lmp.as_ref().map(floats),
                "congestion": s.congestion,
            })
        })
        .collect();
    let report = json!({
        "metadata": {
            "command": "simulate-dcrg",
            "case": args.case.display().to_string(),
            "scenario": args.scenario.display().to_string(),
            "time": args.time,
            "at": args.at,
            "horizon": args.horizon,
            "samples": args.samples,
            "seed": seed,
        },
        "cache": serde_json::to_value(counters)?,
        "regions": store.len(),
        "seconds": seconds,
        "stream": sample_rows,
    });
    emit(&args.out, &report)
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let scenario = load_scenario(&args.scenario)?;
    let seed = args.seed.unwrap_or(scenario.seed);
    // Byte-identical reports by default; opt into threads explicitly.
    let mode = resolve_mode(args.workers, false)?;
    let problem = build_problem(&case, args.time)?;
    let store = obtain_store(&args.store, &problem, seed)?;

    let cfg = TrajectoryExperiment {
        horizon: args.horizon,
        n_samples: args.samples,
        replications: args.replications,
        seed,
    };
    let scores = run_trajectory_experiment(&store, &scenario.model, &cfg, mode)?;
    let report = EvaluationReport::from_scores(scores, args.bins)?;

    if let Some(dir) = &args.csv_dir {
        std::fs::create_dir_all(dir)?;
        write_score_csv(dir.join("scores.csv"), &report.scores)?;
        write_reliability_csv(dir.join("reliability.csv"), &report.reliability)?;
        eprintln!("wrote {}", dir.join("scores.csv").display());
        eprintln!("wrote {}", dir.join("reliability.csv").display());
    }

    let value = json!({
        "metadata": {
            "command": "evaluate",
            "case": args.case.display().to_string(),
            "scenario": args.scenario.display().to_string(),
            "time": args.time,
            "horizon": args.horizon,
            "samples": args.samples,
            "replications": args.replications,
            "bins": args.bins,
            "seed": seed,
        },
        "report": serde_json::to_value(&report)?,
    });
    emit(&args.out, &value)
}

fn run_bench(args: &BenchArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let scenario = load_scenario(&args.scenario)?;
    let seed = args.seed.unwrap_or(scenario.seed);
    let mode = resolve_mode(args.workers, true)?;
    let law = law_for(&scenario, args.at, args.horizon, &args.observed)?;
    let problem = build_problem(&case, args.time)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thetas: Vec<DVector<f64>> = (0..args.samples).map(|_| law.sample(&mut rng)).collect();

    // Direct: one full solve per sample.
    let started = std::time::Instant::now();
    let mut solved = 0usize;
    let mut infeasible = 0usize;
    for theta in &thetas {
        match problem.solve_at(theta) {
            Ok(_) => solved += 1,
            Err(Error::Infeasible(_)) => infeasible += 1,
            Err(other) => return Err(other),
        }
    }
    let direct_seconds = started.elapsed().as_secs_f64();

    // Online cache: solves only on region discovery.
    let mut store = RegionStore::new(case.name.clone(), problem.param_dim());
    store.seed = seed;
    let started = std::time::Instant::now();
    let (_, counters) = dcrg_simulate(&problem, &thetas, &mut store, seed, mode)?;
    let dcrg_seconds = started.elapsed().as_secs_f64();

    // Store lookups: importance-sampled forecast over the grown store.
    let started = std::time::Instant::now();
    let dist = forecast_regions(&store, &law, args.at, args.samples, seed, mode)?;
    let forecast_seconds = started.elapsed().as_secs_f64();

    let report = json!({
        "metadata": {
            "command": "bench",
            "case": args.case.display().to_string(),
            "scenario": args.scenario.display().to_string(),
            "time": args.time,
            "at": args.at,
            "horizon": args.horizon,
            "samples": args.samples,
            "seed": seed,
        },
        "direct": { "seconds": direct_seconds, "solves": solved, "infeasible": infeasible },
        "dcrg": {
            "seconds": dcrg_seconds,
            "solves": counters.opf_solves,
            "cache_hits": counters.cache_hits,
            "infeasible": counters.infeasible,
            "regions": store.len(),
        },
        "region_forecast": {
            "seconds": forecast_seconds,
            "regions": store.len(),
            "unexplored_mass": dist.unexplored_mass,
        },
    });
    emit(&args.out, &report)
}
