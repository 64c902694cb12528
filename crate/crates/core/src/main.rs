use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use melo::harness::{
    estimate_dataset, load_csv_dataset, run_experiment, write_estimates_csv, write_experiment_outputs, DataSchema,
    ExperimentSpec, RESULTS_FILE, SUMMARIES_FILE,
};
use melo::problems::{FitSettings, Method, ProblemInstance, ProblemKind, INPUT_PRICE, OUTPUT_PRICE};
use melo::{verify, MeloError, Result};

/// Minimum expected loss estimation of ratios of model parameters.
#[derive(Parser, Debug)]
#[command(name = "melo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Posterior draws retained per fit.
    #[arg(long)]
    draws: Option<usize>,
    /// Discarded Gibbs iterations (probit).
    #[arg(long = "burn-in")]
    burn_in: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; MELO_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation study and write summaries.csv and results.json.
    Simulate {
        problem: String,
        /// JSON experiment file; the default grid is used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate on a CSV dataset and print estimates with frequentist standard errors.
    Estimate {
        problem: String,
        #[arg(long)]
        data: PathBuf,
        /// Covariate row (intercept first) at which to evaluate the odds ratio; repeatable.
        #[arg(long = "at")]
        at: Vec<String>,
        /// Column names, comma separated. optimal-input: input,output; odds-ratio:
        /// response then covariates; portfolio: assets; structural: q,p,z1,z2.
        #[arg(long)]
        columns: Option<String>,
        /// Methods, comma separated; all available methods when absent.
        #[arg(long)]
        methods: Option<String>,
        /// Input-to-output price ratio (optimal input).
        #[arg(long = "w-over-p")]
        w_over_p: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the oracle self-checks.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

fn threads(common: &Common) -> Result<Option<usize>> {
    match std::env::var("MELO_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| MeloError::Config(format!("MELO_THREADS must be a positive integer, got '{v}'"))),
        _ => Ok(common.threads),
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

fn simulate(problem: &str, config: Option<&Path>, reps: Option<usize>, common: &Common) -> Result<()> {
    let kind: ProblemKind = problem.parse()?;
    let mut spec = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| MeloError::Config(format!("cannot read {}: {e}", path.display())))?;
            let spec = ExperimentSpec::from_json(&text).map_err(|e| match e {
                MeloError::Config(m) => MeloError::Config(format!("{}: {m}", path.display())),
                other => other,
            })?;
            if spec.problem != kind {
                return Err(MeloError::Config(format!(
                    "{}: problem '{}' does not match command-line problem '{kind}'",
                    path.display(),
                    spec.problem
                )));
            }
            spec
        }
        None => ExperimentSpec::default_for(kind),
    };
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if let Some(r) = reps {
        spec.replications = r;
    }
    if let Some(d) = common.draws {
        spec.draws = d;
    }
    if let Some(b) = common.burn_in {
        spec.burn_in = Some(b);
    }
    spec.validate()?;
    let result = run_experiment(&spec, threads(common)?)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(format!("melo-{}", kind.name())));
    write_experiment_outputs(&result, &out)?;
    for (m, d) in &result.discard_counts {
        if *d > 0 {
            println!("{m}: {d} replication(s) with non-finite or failed estimates");
        }
    }
    println!("wrote {} and {}", out.join(SUMMARIES_FILE).display(), out.join(RESULTS_FILE).display());
    Ok(())
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    split_list(s)
        .iter()
        .map(|t| t.parse::<f64>().map_err(|_| MeloError::Config(format!("--at: '{t}' is not a number"))))
        .collect()
}

fn csv_headers(path: &Path) -> Result<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => MeloError::Io(std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string())),
        _ => MeloError::Csv(e),
    })?;
    Ok(r.headers()?.iter().map(str::to_string).collect())
}

#[allow(clippy::too_many_arguments)]
fn estimate(
    problem: &str,
    data: &Path,
    at: &[String],
    columns: Option<&str>,
    methods: Option<&str>,
    w_over_p: Option<f64>,
    common: &Common,
) -> Result<()> {
    let kind: ProblemKind = problem.parse()?;
    let cols = columns.map(split_list);
    let want = |n: usize, default: &[&str]| -> Result<Vec<String>> {
        match &cols {
            Some(c) if c.len() != n => {
                Err(MeloError::Config(format!("--columns: problem '{kind}' needs {n} names, got {}", c.len())))
            }
            Some(c) => Ok(c.clone()),
            None => Ok(default.iter().map(|s| s.to_string()).collect()),
        }
    };
    let mut points = Vec::new();
    let schema = match kind {
        ProblemKind::OptimalInput => {
            let c = want(2, &["input", "output"])?;
            DataSchema::Production { input: c[0].clone(), output: c[1].clone() }
        }
        ProblemKind::OddsRatio => {
            let c = match cols.clone() {
                Some(c) if c.len() >= 2 => c,
                Some(_) => return Err(MeloError::Config("--columns: need a response and at least one covariate".into())),
                None => {
                    let mut h = csv_headers(data)?;
                    if h.len() < 2 {
                        return Err(MeloError::Config("data needs a response and at least one covariate".into()));
                    }
                    let last = h.pop().expect("non-empty");
                    std::iter::once(last).chain(h).collect()
                }
            };
            if at.is_empty() {
                return Err(MeloError::Config("--at is required for odds-ratio (intercept first)".into()));
            }
            points = at.iter().map(|s| parse_point(s)).collect::<Result<Vec<_>>>()?;
            if let Some(p) = points.iter().find(|p| p.len() != c.len()) {
                return Err(MeloError::Config(format!(
                    "--at: {} values given, expected {} (intercept and {} covariate(s))",
                    p.len(),
                    c.len(),
                    c.len() - 1
                )));
            }
            DataSchema::Binary { response: c[0].clone(), covariates: c[1..].to_vec() }
        }
        ProblemKind::Portfolio => DataSchema::Returns { columns: cols.clone() },
        ProblemKind::Structural => {
            let c = want(4, &["q", "p", "z1", "z2"])?;
            DataSchema::System {
                quantity: c[0].clone(),
                price: c[1].clone(),
                instruments: [c[2].clone(), c[3].clone()],
            }
        }
    };
    let loaded = load_csv_dataset(data, &schema)?;
    let methods: Vec<Method> = match methods {
        Some(m) => split_list(m).iter().map(|s| s.parse()).collect::<Result<_>>()?,
        None => kind.supported_methods().to_vec(),
    };
    let n_targets = match kind {
        ProblemKind::OptimalInput => 1,
        ProblemKind::OddsRatio => points.len(),
        ProblemKind::Portfolio => loaded.columns.len(),
        ProblemKind::Structural => 4,
    };
    let a = w_over_p.unwrap_or(INPUT_PRICE / OUTPUT_PRICE);
    let instance = ProblemInstance::for_estimation(kind, n_targets, a, points);
    let settings = FitSettings {
        draws: common.draws.unwrap_or(20_000),
        burn_in: common.burn_in.unwrap_or(5_000),
        with_std_errors: true,
        ..FitSettings::default()
    };
    let rows = estimate_dataset(&instance, &loaded.dataset, &methods, &settings, common.seed.unwrap_or(1))?;
    println!("{} rows from {}", loaded.n_rows, data.display());
    println!("{:<16} {:<24} {:>14} {:>14}", "method", "component", "estimate", "std_error");
    for r in &rows {
        let se = r.std_error.map_or("NA".to_string(), |s| format!("{s:.4}"));
        println!("{:<16} {:<24} {:>14.4} {:>14}", r.method.name(), r.component, r.estimate, se);
    }
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        write_estimates_csv(&rows, std::fs::File::create(out.join("estimates.csv"))?)?;
    }
    Ok(())
}

fn run_verify(common: &Common) -> Result<bool> {
    let checks = verify::run_all(common.seed.unwrap_or(20_240_601))?;
    for c in &checks {
        println!("{c}");
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { problem, config, reps, common } => {
            simulate(&problem, config.as_deref(), reps, &common)?;
            Ok(true)
        }
        Command::Estimate { problem, data, at, columns, methods, w_over_p, common } => {
            estimate(&problem, &data, &at, columns.as_deref(), methods.as_deref(), w_over_p, &common)?;
            Ok(true)
        }
        Command::Verify { common } => run_verify(&common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more checks failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
