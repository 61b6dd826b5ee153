use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use budgex::acquisition::write_scores_csv;
use budgex::estimator::{beta_bound, ConfidenceParams, RidgeSolution, SolutionDocument};
use budgex::experiment::{
    design_min_eigenvalue, evaluation_set, replication_seed, run_sweep, solution_auuc, sweep_summary,
    write_metrics_csv, SweepSpec,
};
use budgex::metrics::pehe;
use budgex::model::{read_jsonl, write_jsonl, ObsRecord, PoolUnit};
use budgex::protocol::{run_protocol, Mode, ProtocolConfig};
use budgex::synth::WorldSpec;
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(version, about = "Budgeted active experimentation simulator", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Theory,
    Fusion,
}

impl From<ModeArg> for Mode {
    fn from(arg: ModeArg) -> Self {
        match arg {
            ModeArg::Theory => Mode::Theory,
            ModeArg::Fusion => Mode::Fusion,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the pool and the observational log described by an env.json
    Generate {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed stored in env.json
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the acquisition protocol on a generated dataset
    Run {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        protocol: PathBuf,
        /// Directory holding pool.jsonl and obs.jsonl (defaults to --out)
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Master seed; replication r runs with a seed derived from (seed, r)
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the mode in protocol.json
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Fail instead of warning when the budget exceeds the pool
        #[arg(long)]
        strict_budget: bool,
    },
    /// Score the solutions of a previous `run` against the known truth
    Evaluate {
        #[arg(long)]
        env: PathBuf,
        /// protocol.json used for the run (propensity bounds for the radius)
        #[arg(long)]
        protocol: Option<PathBuf>,
        /// Output directory of the run; metrics.csv and summary.json go here too
        #[arg(long)]
        out: PathBuf,
        /// Failure probability of the confidence radius
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Held-out randomized units for AUUC (and PEHE on continuous covariates)
        #[arg(long, default_value_t = 2000)]
        n_test: usize,
    },
    /// Run a budget × strategy × replication grid
    Sweep {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

/// Serializes through `Value` so object keys come out sorted.
fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let value = serde_json::to_value(value)?;
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, &value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_jsonl(&mut w, items)?;
    w.flush()?;
    Ok(())
}

fn sha256_of<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

/// Every output directory records the exact configuration it was produced from.
fn write_manifest(out: &Path, command: &str, seed: u64, configs: &[(&str, Value)]) -> Result<()> {
    let mut inputs = serde_json::Map::new();
    for (name, config) in configs {
        inputs.insert(name.to_string(), json!({ "sha256": sha256_of(config)?, "config": config }));
    }
    write_json(
        &out.join("manifest.json"),
        &json!({ "command": command, "seed": seed, "inputs": inputs, "version": env!("CARGO_PKG_VERSION") }),
    )
}

fn generate(env: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: WorldSpec = read_json(env)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let world = spec.generate().context("invalid environment spec")?;
    fs::create_dir_all(out)?;
    write_jsonl_file(&out.join("pool.jsonl"), &world.pool)?;
    write_jsonl_file(&out.join("obs.jsonl"), &world.obs)?;
    write_manifest(out, "generate", spec.seed, &[("env", serde_json::to_value(&spec)?)])?;
    info!("wrote {} pool units and {} observational records to {}", world.pool.len(), world.obs.len(), out.display());
    Ok(())
}

struct RunArgs {
    env: PathBuf,
    protocol: PathBuf,
    data: Option<PathBuf>,
    out: PathBuf,
    reps: usize,
    seed: u64,
    mode: Option<ModeArg>,
    strict_budget: bool,
}

fn run(args: RunArgs) -> Result<()> {
    if args.reps == 0 {
        bail!("--reps must be at least 1");
    }
    let spec: WorldSpec = read_json(&args.env)?;
    spec.validate().context("invalid environment spec")?;
    let mut config: ProtocolConfig = read_json(&args.protocol)?;
    if let Some(mode) = args.mode {
        config.mode = mode.into();
    }
    config.validate(spec.environment.dim()).context("invalid protocol spec")?;

    let data = args.data.clone().unwrap_or_else(|| args.out.clone());
    let pool_path = data.join("pool.jsonl");
    if !pool_path.exists() {
        bail!("{} not found; run `budgex generate` first", pool_path.display());
    }
    let pool: Vec<PoolUnit> = read_jsonl_file(&pool_path)?;
    let obs_path = data.join("obs.jsonl");
    let obs: Vec<ObsRecord> = if obs_path.exists() {
        read_jsonl_file(&obs_path)?
    } else if config.mode == Mode::Fusion {
        bail!("fusion mode needs an observational log but {} does not exist", obs_path.display());
    } else {
        Vec::new()
    };
    if config.budget > pool.len() {
        if args.strict_budget {
            bail!("budget {} exceeds the pool of {} units", config.budget, pool.len());
        }
        warn!("budget {} exceeds the pool of {} units; the run stops when the pool is exhausted", config.budget, pool.len());
    }

    fs::create_dir_all(&args.out)?;
    let started = Instant::now();
    let reps = (0..args.reps)
        .into_par_iter()
        .map(|r| -> Result<Value> {
            let seed = replication_seed(args.seed, r);
            let rep_config = ProtocolConfig { seed, ..config.clone() };
            let t0 = Instant::now();
            let outcome = run_protocol(&rep_config, &spec.environment, &pool, &obs)?;
            let wall = t0.elapsed().as_secs_f64();
            let dir = args.out.join(format!("rep_{r}"));
            fs::create_dir_all(&dir)?;
            write_jsonl_file(&dir.join("rct.jsonl"), &outcome.records)?;
            for log in outcome.rounds.iter().filter(|l| !l.scores.is_empty()) {
                let selected: HashSet<usize> = log.selected.iter().copied().collect();
                let mut w = BufWriter::new(File::create(dir.join(format!("scores_round_{}.csv", log.round)))?);
                write_scores_csv(&mut w, &log.scores, &selected)?;
                w.flush()?;
            }
            write_json(&dir.join("solution.json"), &outcome.solution.to_document())?;
            Ok(json!({
                "replication": r,
                "seed": seed,
                "budget_used": outcome.records.len(),
                "batch_sizes": outcome.batch_sizes(),
                "wall_time_s": wall,
            }))
        })
        .collect::<Result<Vec<_>>>()?;

    write_json(
        &args.out.join("run_summary.json"),
        &json!({
            "budget": config.budget,
            "pool_size": pool.len(),
            "obs_size": obs.len(),
            "replications": reps,
            "wall_time_s": started.elapsed().as_secs_f64(),
        }),
    )?;
    write_manifest(
        &args.out,
        "run",
        args.seed,
        &[("env", serde_json::to_value(&spec)?), ("protocol", serde_json::to_value(&config)?)],
    )?;
    info!("finished {} replications in {}", args.reps, args.out.display());
    Ok(())
}

const EVAL_CSV_HEADER: &str = "replication,seed,records,pehe,auuc,min_eigenvalue,ellipsoid_distance,beta,violated";

fn evaluate(env: &Path, protocol: Option<&Path>, out: &Path, delta: f64, n_test: usize) -> Result<()> {
    let spec: WorldSpec = read_json(env)?;
    spec.validate().context("invalid environment spec")?;
    let bounds = match protocol {
        Some(path) => read_json::<ProtocolConfig>(path)?.bounds,
        None => Default::default(),
    };
    let summary: Value = read_json(&out.join("run_summary.json"))?;
    let reps = summary["replications"].as_array().context("run_summary.json has no replications")?;
    let env = &spec.environment;
    let theta_star = env.theta_star();

    let mut rows = Vec::with_capacity(reps.len());
    for rep in reps {
        let r = rep["replication"].as_u64().context("replication index")?;
        let seed = rep["seed"].as_u64().context("replication seed")?;
        let doc: SolutionDocument = read_json(&out.join(format!("rep_{r}")).join("solution.json"))?;
        let solution = RidgeSolution::from_document(&doc)?;
        let eval = evaluation_set(env, n_test, seed)?;
        let value = pehe(&solution, env, &eval.points)?.value;
        let auuc = solution_auuc(&solution, env, &eval.test)?;
        let distance = solution.ellipsoid_distance(&theta_star);
        // The radius is only defined for a positive ridge.
        let beta = if doc.lambda > 0.0 {
            let params = ConfidenceParams::with_default_sigma(&bounds, env.norm_budget(), delta, doc.lambda);
            Some(beta_bound(&params, &solution.info)?)
        } else {
            None
        };
        rows.push((r, seed, doc.n, value, auuc, design_min_eigenvalue(&solution.info), distance, beta));
    }

    let mut w = BufWriter::new(File::create(out.join("metrics.csv"))?);
    writeln!(w, "{EVAL_CSV_HEADER}")?;
    for (r, seed, n, value, auuc, eig, distance, beta) in &rows {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let violated = beta.map(|b| (distance > &b).to_string()).unwrap_or_default();
        writeln!(w, "{r},{seed},{n},{value},{},{eig},{distance},{},{violated}", opt(auuc), opt(beta))?;
    }
    w.flush()?;

    let n = rows.len() as f64;
    let pehes: Vec<f64> = rows.iter().map(|row| row.3).collect();
    let mean = pehes.iter().sum::<f64>() / n;
    let sd = if rows.len() > 1 { (pehes.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    let auucs: Vec<f64> = rows.iter().filter_map(|row| row.4).collect();
    let checked: Vec<bool> = rows.iter().filter_map(|row| row.7.map(|b| row.6 > b)).collect();
    write_json(
        &out.join("summary.json"),
        &json!({
            "replications": rows.len(),
            "mean_pehe": mean,
            "sd_pehe": sd,
            "mean_auuc": if auucs.is_empty() { Value::Null } else { json!(auucs.iter().sum::<f64>() / auucs.len() as f64) },
            "auuc_defined": auucs.len(),
            "delta": delta,
            "bound_checks": checked.len(),
            "violation_rate": if checked.is_empty() { Value::Null } else {
                json!(checked.iter().filter(|&&v| v).count() as f64 / checked.len() as f64)
            },
        }),
    )?;
    info!("evaluated {} replications, mean PEHE {mean:.4}", rows.len());
    Ok(())
}

fn sweep(path: &Path, out: &Path, reps: Option<usize>, seed: Option<u64>, mode: Option<ModeArg>) -> Result<()> {
    let mut spec: SweepSpec = read_json(path)?;
    if let Some(reps) = reps {
        spec.replications = reps;
    }
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if let Some(mode) = mode {
        spec.protocol.mode = mode.into();
    }
    spec.validate().context("invalid sweep spec")?;
    let rows = run_sweep(&spec)?;
    fs::create_dir_all(out)?;
    let mut w = BufWriter::new(File::create(out.join("metrics.csv"))?);
    write_metrics_csv(&mut w, &rows)?;
    w.flush()?;
    write_json(&out.join("summary.json"), &sweep_summary(&spec, &rows))?;
    write_manifest(out, "sweep", spec.seed, &[("sweep", serde_json::to_value(&spec)?)])?;
    info!("wrote {} rows to {}", rows.len(), out.join("metrics.csv").display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(threads) = std::env::var("BUDGEX_THREADS") {
        let n: usize = threads.parse().context("BUDGEX_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match Cli::parse().command {
        Command::Generate { env, out, seed } => generate(&env, &out, seed),
        Command::Run { env, protocol, data, out, reps, seed, mode, strict_budget } => {
            run(RunArgs { env, protocol, data, out, reps, seed, mode, strict_budget })
        }
        Command::Evaluate { env, protocol, out, delta, n_test } => {
            evaluate(&env, protocol.as_deref(), &out, delta, n_test)
        }
        Command::Sweep { sweep: path, out, reps, seed, mode } => sweep(&path, &out, reps, seed, mode),
    }
}
