use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use pcp::em::{fit, init_model, FitConfig, Schedule};
use pcp::error::PcpError;
use pcp::fisher::{fim_capped, numerical_rank, DEFAULT_ORDER_CAP};
use pcp::harness::{self, generate_model, sample_poisson, GenSpec, McGrid, RankGrid};
use pcp::io::{self, RunManifest};

const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_CAP: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "pcp", version, about = "Poisson CP tensor models: fitting, Fisher information, simulation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a rank-R model to a count tensor.
    Fit(FitArgs),
    /// Fisher information of a model, with eigenvalues and a rank verdict.
    Fim(FimArgs),
    /// Compare Monte Carlo score covariances with the analytic Fisher matrix.
    McValidate(McArgs),
    /// Numerical rank of expected Fisher matrices over a grid of models.
    RankSweep(RankArgs),
    /// Draw a synthetic model and one Poisson sample from it.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Tensor JSON file of counts.
    tensor: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    rank: u64,
    #[arg(long, value_enum, default_value = "mcecm")]
    schedule: ScheduleArg,
    /// Multiplicative updates per factor in each MCECM cycle.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    inner: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ScheduleArg {
    Ecm,
    Mcecm,
}

#[derive(Args)]
struct FimArgs {
    /// Model JSON file.
    model: PathBuf,
    /// Count tensor, required for the observed matrix.
    #[arg(long)]
    tensor: Option<PathBuf>,
    #[arg(long, conflicts_with = "expected")]
    observed: bool,
    #[arg(long)]
    expected: bool,
    /// Also write the eigenvalue-based rank verdict.
    #[arg(long)]
    rank_verdict: bool,
    /// Write the full matrix as JSON.
    #[arg(long)]
    write_matrix: bool,
    /// Largest allowed matrix order.
    #[arg(long, default_value_t = DEFAULT_ORDER_CAP)]
    cap: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct McArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 16, 64, 256, 1024])]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![10usize])]
    ns: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0f64])]
    means: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2])]
    ranks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![3usize])]
    orders: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![10usize, 25])]
    ns: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 3])]
    orders: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 3, 4])]
    ranks: Vec<usize>,
    #[arg(long, default_value_t = 4.0)]
    mean: f64,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run the P=3, N=8, R=20..28 sweep instead of the grid flags.
    #[arg(long)]
    underdetermined: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    #[arg(long, default_value_t = 1.0)]
    mean: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Failure carrying its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<PcpError> for Failure {
    fn from(e: PcpError) -> Self {
        let code = match e {
            PcpError::OrderCap { .. } => EXIT_CAP,
            PcpError::NonFinite { .. } => EXIT_NOT_CONVERGED,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        PcpError::from(e).into()
    }
}

/// Everything a finished command reports back for its manifest.
struct Outcome {
    code: u8,
    outputs: Vec<PathBuf>,
}

struct RunContext {
    command: &'static str,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    out_dir: PathBuf,
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<Outcome, Failure> {
    let x = io::read_counts(&a.tensor)?;
    let cfg = FitConfig {
        schedule: match a.schedule {
            ScheduleArg::Ecm => Schedule::Ecm,
            ScheduleArg::Mcecm => Schedule::Mcecm,
        },
        inner_iters: a.inner as usize,
        max_outer: a.max_iter,
        tol: a.tol,
        seed: a.seed,
        ..FitConfig::default()
    };
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    prepare_dir(&a.out)?;
    let init = init_model(&x, a.rank as usize, a.seed)?;
    let trace_path = a.out.join("trace.csv");
    let result = match fit(&x, init, &cfg) {
        Ok(r) => r,
        Err(PcpError::NonFinite { iteration, trace }) => {
            trace.write_csv(std::fs::File::create(&trace_path)?)?;
            return Err(PcpError::NonFinite { iteration, trace }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let model_path = a.out.join("model.json");
    io::write_model(&model_path, &result.model)?;
    result.trace.write_csv(std::fs::File::create(&trace_path)?)?;
    let last = result.trace.rows.last().map(|r| r.loglik).unwrap_or(f64::NAN);
    info!("loglik {last} after {} iterations", result.trace.rows.len() - 1);
    let code = if result.converged {
        0
    } else {
        warn!("stopped at the iteration limit without converging");
        EXIT_NOT_CONVERGED
    };
    Ok(Outcome {
        code,
        outputs: vec![model_path, trace_path],
    })
}

fn cmd_fim(a: &FimArgs) -> Result<Outcome, Failure> {
    if a.observed && a.tensor.is_none() {
        return Err(Failure::usage("--observed requires --tensor"));
    }
    let model = io::read_model(&a.model)?;
    let x = match (&a.tensor, a.observed) {
        (Some(path), true) => Some(io::read_counts(path)?),
        _ => None,
    };
    prepare_dir(&a.out)?;
    let fim = fim_capped(&model, x.as_ref(), a.cap)?;
    let mut outputs = Vec::new();
    if a.write_matrix {
        let path = a.out.join("fim.json");
        fim.write_json(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        outputs.push(path);
    }
    let verdict = numerical_rank(&fim)?;
    let path = a.out.join("eigenvalues.csv");
    verdict.write_eigenvalues_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
    outputs.push(path);
    if a.rank_verdict {
        let path = a.out.join("verdict.json");
        io::write_json(&path, &verdict)?;
        outputs.push(path);
        info!(
            "numerical rank {} (conjectured {})",
            verdict.numerical_rank, verdict.conjectured_rank
        );
    }
    Ok(Outcome { code: 0, outputs })
}

fn write_rows(dir: &Path, name: &str, rows: &[harness::Row]) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    harness::write_csv(rows, std::io::BufWriter::new(std::fs::File::create(&path)?))?;
    Ok(path)
}

fn cmd_mc(a: &McArgs) -> Result<Outcome, Failure> {
    let grid = McGrid {
        ks: a.ks.clone(),
        ns: a.ns.clone(),
        means: a.means.clone(),
        ranks: a.ranks.clone(),
        orders: a.orders.clone(),
    };
    if grid.is_empty() || a.reps == 0 {
        return Err(Failure::usage("empty experiment grid"));
    }
    if a.ks.iter().any(|&k| k < 2) || a.ns.contains(&0) || a.ranks.contains(&0) || a.orders.iter().any(|&p| p < 2) {
        return Err(Failure::usage("grid values out of range (K ≥ 2, N ≥ 1, R ≥ 1, P ≥ 2)"));
    }
    if a.means.iter().any(|&s| !(s > 0.0)) {
        return Err(Failure::usage("mean entries must be positive"));
    }
    prepare_dir(&a.out_dir)?;
    let rows = harness::run_mc_experiment(&grid, a.reps, a.seed)?;
    let path = write_rows(&a.out_dir, "mc_fim.csv", &rows)?;
    Ok(Outcome {
        code: 0,
        outputs: vec![path],
    })
}

fn cmd_rank(a: &RankArgs) -> Result<Outcome, Failure> {
    let (grid, name) = if a.underdetermined {
        (RankGrid::underdetermined(), "rank_underdetermined")
    } else {
        (
            RankGrid {
                ns: a.ns.clone(),
                orders: a.orders.clone(),
                ranks: a.ranks.clone(),
                mean: a.mean,
            },
            "rank_grid",
        )
    };
    if grid.is_empty() || a.reps == 0 {
        return Err(Failure::usage("empty experiment grid"));
    }
    if grid.ns.contains(&0) || grid.ranks.contains(&0) || grid.orders.iter().any(|&p| p < 2) || !(grid.mean > 0.0) {
        return Err(Failure::usage("grid values out of range (N ≥ 1, R ≥ 1, P ≥ 2, S > 0)"));
    }
    prepare_dir(&a.out_dir)?;
    let rows = harness::run_rank_experiment(&grid, a.reps, a.seed, name)?;
    let mismatches = rows.iter().filter(|r| r.metric == "ratio" && r.value != 1.0).count();
    if mismatches > 0 {
        warn!("{mismatches} models with numerical rank different from the conjectured rank");
    }
    let path = write_rows(&a.out_dir, &format!("{name}.csv"), &rows)?;
    Ok(Outcome {
        code: 0,
        outputs: vec![path],
    })
}

fn cmd_generate(a: &GenerateArgs) -> Result<Outcome, Failure> {
    let spec = GenSpec {
        n: a.n,
        order: a.order,
        rank: a.rank,
        mean: a.mean,
        seed: a.seed,
    };
    spec.validate().map_err(|e| Failure::usage(e.to_string()))?;
    prepare_dir(&a.out_dir)?;
    let model = generate_model(&spec)?;
    let x = sample_poisson(&model.full_tensor(), harness::derive_seed(a.seed, 1))?;
    let model_path = a.out_dir.join("model.json");
    let tensor_path = a.out_dir.join("tensor.json");
    io::write_model(&model_path, &model)?;
    io::write_tensor(&tensor_path, &x)?;
    Ok(Outcome {
        code: 0,
        outputs: vec![model_path, tensor_path],
    })
}

fn context(cmd: &Command) -> RunContext {
    match cmd {
        Command::Fit(a) => RunContext {
            command: "fit",
            config: json!({
                "rank": a.rank, "schedule": match a.schedule { ScheduleArg::Ecm => "ecm", ScheduleArg::Mcecm => "mcecm" },
                "inner": a.inner, "tol": a.tol, "max_iter": a.max_iter,
            }),
            seed: Some(a.seed),
            inputs: vec![a.tensor.clone()],
            out_dir: a.out.clone(),
        },
        Command::Fim(a) => RunContext {
            command: "fim",
            config: json!({
                "kind": if a.observed { "observed" } else { "expected" },
                "rank_verdict": a.rank_verdict, "write_matrix": a.write_matrix, "cap": a.cap,
            }),
            seed: None,
            inputs: std::iter::once(a.model.clone()).chain(a.tensor.clone()).collect(),
            out_dir: a.out.clone(),
        },
        Command::McValidate(a) => RunContext {
            command: "mc-validate",
            config: json!({"ks": a.ks, "ns": a.ns, "means": a.means, "ranks": a.ranks, "orders": a.orders, "reps": a.reps}),
            seed: Some(a.seed),
            inputs: vec![],
            out_dir: a.out_dir.clone(),
        },
        Command::RankSweep(a) => RunContext {
            command: "rank-sweep",
            config: if a.underdetermined {
                json!({"grid": RankGrid::underdetermined(), "reps": a.reps})
            } else {
                json!({"ns": a.ns, "orders": a.orders, "ranks": a.ranks, "mean": a.mean, "reps": a.reps})
            },
            seed: Some(a.seed),
            inputs: vec![],
            out_dir: a.out_dir.clone(),
        },
        Command::Generate(a) => RunContext {
            command: "generate",
            config: json!({"n": a.n, "order": a.order, "rank": a.rank, "mean": a.mean}),
            seed: Some(a.seed),
            inputs: vec![],
            out_dir: a.out_dir.clone(),
        },
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("PCP_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    warn!("could not set thread count: {e}");
                }
            }
            _ => warn!("ignoring PCP_THREADS={v:?}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    configure_threads();
    let ctx = context(&cli.command);
    let start = Instant::now();
    if let Err(e) = std::fs::create_dir_all(&ctx.out_dir) {
        eprintln!("error: cannot create {}: {e}", ctx.out_dir.display());
        return ExitCode::from(EXIT_INPUT);
    }
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Fim(a) => cmd_fim(a),
        Command::McValidate(a) => cmd_mc(a),
        Command::RankSweep(a) => cmd_rank(a),
        Command::Generate(a) => cmd_generate(a),
    };
    let (code, outputs) = match result {
        Ok(o) => (o.code, o.outputs),
        Err(f) => {
            eprintln!("error: {}", f.message);
            (f.code, vec![])
        }
    };
    {
        let manifest = RunManifest {
            command: ctx.command.to_string(),
            config: ctx.config,
            seed: ctx.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: ctx.inputs,
            outputs,
            wall_seconds: start.elapsed().as_secs_f64(),
            exit_code: code as i32,
        };
        if let Err(e) = io::write_json(&ctx.out_dir.join("manifest.json"), &manifest) {
            eprintln!("error: could not write manifest: {e}");
        }
    }
    ExitCode::from(code)
}
