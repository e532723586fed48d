//! Batch front end for the regularization library and its experiments.
//!
//! Exit codes: 0 on success, 2 for bad arguments or configuration, 3 when a
//! solver or experiment fails.

mod range;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use copra::baselines::{self, GammaGrid, MethodId};
use copra::copra::{self as selector, CopraConfig};
use copra::diagnostics::{self, SNR_MAX_DB};
use copra::harness::{self, Manifest, ProblemSpec, SweepSpec, TomoSpec};
use copra::problems::{self, SignalDist};
use copra::spectral;
use copra::Error;

use range::parse_snr_list;

const SEED_ENV: &str = "COPRA_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "copra",
    version,
    about = "Regularization parameter selection for ill-posed linear systems"
)]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "copra-out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate x0 once with one method.
    Solve(SolveArgs),
    /// NMSE versus SNR on a fixed problem.
    Sweep(SweepArgs),
    /// NMSE versus SNR on random rank-deficient operators.
    Rankdef(RankdefArgs),
    /// Phantom restoration from random ray sums, scored by PSNR.
    Tomo(TomoArgs),
    /// Perturbation-bound approximation and approximation error bounds.
    Bounds(BoundsArgs),
    /// Mean selector runtime per method.
    Bench(BenchArgs),
    /// Write a test problem as JSON.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// shaw, baart, foxgood, heat, deriv2, wing, spikes, ilaplace, tomo, rankdef or identity.
    #[arg(long)]
    problem: String,
    #[arg(long, default_value_t = 50)]
    n: usize,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "copra")]
    method: MethodId,
    /// Partition constant for COPRA.
    #[arg(long, default_value_t = 0.1)]
    c: f64,
}

#[derive(Debug, Args)]
struct SweepCommon {
    /// `start:step:stop`, a comma list, or a single value.
    #[arg(long, default_value = "10:10:40", allow_hyphen_values = true)]
    snr: String,
    #[arg(long, default_value_t = harness::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "copra,gcv,lcurve,quasiopt,ols"
    )]
    methods: Vec<MethodId>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    c: f64,
    /// Clip plot data above this NMSE in dB.
    #[arg(long, allow_negative_numbers = true)]
    cap_db: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    common: SweepCommon,
}

#[derive(Debug, Args)]
struct RankdefArgs {
    #[arg(long, default_value_t = 50)]
    m: usize,
    #[arg(long, default_value_t = 45)]
    r: usize,
    #[arg(long, default_value = "gaussian")]
    dist: SignalDist,
    #[command(flatten)]
    common: SweepCommon,
}

#[derive(Debug, Args)]
struct TomoArgs {
    /// Image side length in pixels.
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Number of rays; defaults to one per pixel.
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long, default_value_t = 30.0, allow_negative_numbers = true)]
    snr: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "copra,quasiopt,lcurve,gcv"
    )]
    methods: Vec<MethodId>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    c: f64,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value = "0:10:40", allow_hyphen_values = true)]
    snr: String,
    #[arg(long, default_value_t = 0.1)]
    c: f64,
    #[arg(long, default_value_t = SNR_MAX_DB)]
    snr_max: f64,
    /// Ray seed for the tomography operator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value = "10:10:40", allow_hyphen_values = true)]
    snr: String,
    #[arg(long, default_value_t = 250)]
    trials: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "copra,gcv,lcurve,quasiopt"
    )]
    methods: Vec<MethodId>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    c: f64,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownProblem(_)
            | Error::InvalidDimension(_)
            | Error::InvalidThresholdConstant(_)
            | Error::InvalidConfig(_) => Failure::Usage(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn seed_override(flag: u64) -> Result<u64, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

struct Output<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl<'a> Output<'a> {
    fn new(dir: &'a Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Output {
            dir,
            written: Vec::new(),
        })
    }

    fn text(&mut self, name: &str, body: &str) -> CmdResult {
        harness::write_text(&self.dir.join(name), body)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CmdResult {
        self.text(name, &harness::to_json(value)?)
    }

    fn manifest<T: Serialize>(mut self, command: &str, seed: u64, config: &T) -> CmdResult {
        self.written.push("manifest.json".into());
        let m = Manifest::new(command, seed, config, self.written.clone())?;
        harness::write_text(&self.dir.join("manifest.json"), &harness::to_json(&m)?)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct SolveOutput {
    problem: String,
    method: MethodId,
    snr_db: f64,
    seed: u64,
    sigma_z2: f64,
    rho: Option<f64>,
    branch: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    copra: Option<selector::CopraResult>,
    nmse: f64,
    x_hat: Vec<f64>,
}

#[derive(Serialize)]
struct SolveConfig<'a> {
    problem: &'a ProblemSpec,
    snr_db: f64,
    seed: u64,
    method: MethodId,
    c: f64,
}

fn cmd_solve(a: &SolveArgs, out: &Path) -> CmdResult {
    let seed = seed_override(a.seed)?;
    let spec = ProblemSpec::parse(&a.problem.problem, a.problem.n)?;
    let cfg = CopraConfig {
        c: a.c,
        ..CopraConfig::default()
    };
    cfg.validate()?;
    let (p, prior) = spec.build(seed)?;
    let obs = problems::observe(&p, a.snr, seed)?;
    let svd = spectral::compute_svd(&p.a)?;
    let (x, rho, branch, full) = match a.method {
        MethodId::Copra => {
            let r = selector::estimate(&svd, &obs.y, &cfg)?;
            let x = nalgebra::DVector::from_vec(r.x_hat.clone());
            (x, Some(r.rho), Some(r.branch.name().to_string()), Some(r))
        }
        MethodId::Ols => (baselines::ols_solve(&svd, &obs.y)?.x, None, None, None),
        MethodId::Lmmse => {
            let r = prior.to_matrix(p.cols());
            (
                baselines::lmmse_data_space(&p.a, &r, obs.sigma_z2, &obs.y)?,
                None,
                None,
                None,
            )
        }
        m => {
            let grid = GammaGrid::for_svd(&svd)?;
            let b = selector::projected_observation(&svd, &obs.y)?;
            let sel = baselines::select_from_projection(m, &svd, &b, obs.y.norm_squared(), &grid)?;
            (
                selector::rls_from_projection(&svd, &b, sel.gamma)?,
                Some(sel.gamma),
                None,
                None,
            )
        }
    };
    let result = SolveOutput {
        problem: spec.label(),
        method: a.method,
        snr_db: a.snr,
        seed,
        sigma_z2: obs.sigma_z2,
        rho,
        branch,
        copra: full,
        nmse: (&x - &p.x0).norm_squared() / p.x0.norm_squared(),
        x_hat: x.iter().copied().collect(),
    };
    let mut o = Output::new(out)?;
    o.json("solve.json", &result)?;
    // a closed pipe on stdout is not a solver failure
    let _ = writeln!(
        std::io::stdout().lock(),
        "{}",
        serde_json::to_string(&result).map_err(Error::from)?
    );
    let config = SolveConfig {
        problem: &spec,
        snr_db: a.snr,
        seed,
        method: a.method,
        c: a.c,
    };
    o.manifest("solve", seed, &config)
}

fn write_sweep(
    spec: &SweepSpec,
    cap_db: Option<f64>,
    format: Format,
    out: &Path,
    command: &str,
) -> CmdResult {
    let report = harness::run_sweep(spec)?;
    let mut o = Output::new(out)?;
    match format {
        Format::Csv => {
            o.text("records.csv", &harness::records_csv(&report.records))?;
            o.text("plot.csv", &harness::plot_csv(&report, cap_db))?;
        }
        Format::Json => o.json("report.json", &report)?,
    }
    o.manifest(command, spec.seed, spec)?;
    for a in &report.aggregates {
        eprintln!(
            "{:>9} snr={:>5} nmse_db={} failures={}",
            a.method,
            a.snr_db,
            a.nmse_db.map_or("n/a".into(), |v| format!("{v:.3}")),
            a.failures
        );
    }
    if report.failed_methods.is_empty() {
        Ok(())
    } else {
        let names: Vec<String> = report
            .failed_methods
            .iter()
            .map(|m| m.to_string())
            .collect();
        Err(Failure::Solver(format!(
            "methods failed on too many trials: {}",
            names.join(",")
        )))
    }
}

fn sweep_spec(problem: ProblemSpec, c: &SweepCommon) -> Result<SweepSpec, Failure> {
    let mut spec = SweepSpec::new(
        problem,
        parse_snr_list(&c.snr).map_err(Failure::Usage)?,
        c.trials,
        c.methods.clone(),
        seed_override(c.seed)?,
    );
    spec.c = c.c;
    spec.validate()?;
    Ok(spec)
}

fn cmd_sweep(a: &SweepArgs, format: Format, out: &Path) -> CmdResult {
    let spec = sweep_spec(
        ProblemSpec::parse(&a.problem.problem, a.problem.n)?,
        &a.common,
    )?;
    write_sweep(&spec, a.common.cap_db, format, out, "sweep")
}

fn cmd_rankdef(a: &RankdefArgs, format: Format, out: &Path) -> CmdResult {
    let problem = ProblemSpec::RankDeficient {
        m: a.m,
        r: a.r,
        dist: a.dist,
    };
    let spec = sweep_spec(problem, &a.common)?;
    write_sweep(&spec, a.common.cap_db, format, out, "rankdef")
}

fn cmd_tomo(a: &TomoArgs, format: Format, out: &Path) -> CmdResult {
    let mut spec = TomoSpec::new(
        a.size,
        a.snr,
        a.trials,
        a.methods.clone(),
        seed_override(a.seed)?,
    );
    if let Some(r) = a.rays {
        spec.n_rays = r;
    }
    spec.c = a.c;
    let report = harness::run_tomo_restoration(&spec)?;
    let mut o = Output::new(out)?;
    match format {
        Format::Csv => o.text("psnr.csv", &harness::psnr_csv(&report))?,
        Format::Json => o.json("tomo.json", &report)?,
    }
    if let Some(images) = &report.images {
        for name in harness::write_tomo_images(&out.join("images"), images)? {
            o.written.push(format!("images/{name}"));
        }
    }
    for s in &report.summaries {
        eprintln!(
            "{:>9} psnr={} failures={}",
            s.method,
            s.mean_psnr.map_or("n/a".into(), |v| format!("{v:.3}")),
            s.failures
        );
    }
    o.manifest("tomo", spec.seed, &spec)
}

#[derive(Serialize)]
struct BoundsRow {
    snr_db: f64,
    rho: f64,
    delta_exact: f64,
    delta_approx: f64,
    nmse_db: f64,
    mu_a: f64,
    mu_x: Option<f64>,
    mu: f64,
    rho_min_lower: f64,
    mu_a_high_snr: f64,
}

#[derive(Serialize)]
struct BoundsOutput {
    problem: String,
    n1: usize,
    spearman: f64,
    rows: Vec<BoundsRow>,
}

#[derive(Serialize)]
struct BoundsConfig<'a> {
    problem: &'a ProblemSpec,
    snr_db: &'a [f64],
    c: f64,
    snr_max_db: f64,
    seed: u64,
}

pub const BOUNDS_CSV_HEADER: &str =
    "snr_db,rho,delta_exact,delta_approx,nmse_db,mu_a,mu_x,mu,rho_min_lower,mu_a_high_snr";

fn cmd_bounds(a: &BoundsArgs, format: Format, out: &Path) -> CmdResult {
    let seed = seed_override(a.seed)?;
    let spec = ProblemSpec::parse(&a.problem.problem, a.problem.n)?;
    let snr = parse_snr_list(&a.snr).map_err(Failure::Usage)?;
    let (p, prior) = spec.build(seed)?;
    let approx = harness::run_bound_approx_experiment(&p, &snr, a.c)?;
    let svd = spectral::compute_svd(&p.a)?;
    let part = spectral::partition(&svd, a.c)?;
    let rows = approx
        .rows
        .iter()
        .map(|r| {
            let eb = diagnostics::error_bounds(&svd, &part, r.rho, Some(&prior), a.snr_max)?;
            Ok(BoundsRow {
                snr_db: r.snr_db,
                rho: r.rho,
                delta_exact: r.delta_exact,
                delta_approx: r.delta_approx,
                nmse_db: r.nmse_db,
                mu_a: eb.mu_a,
                mu_x: eb.mu_x,
                mu: eb.mu,
                rho_min_lower: eb.rho_min_lower,
                mu_a_high_snr: eb.mu_a_high_snr,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let result = BoundsOutput {
        problem: spec.label(),
        n1: approx.n1,
        spearman: approx.spearman,
        rows,
    };
    let mut o = Output::new(out)?;
    match format {
        Format::Csv => {
            let mut s = format!("{BOUNDS_CSV_HEADER}\n");
            for r in &result.rows {
                s += &format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    r.snr_db,
                    r.rho,
                    r.delta_exact,
                    r.delta_approx,
                    r.nmse_db,
                    r.mu_a,
                    r.mu_x.map_or(String::new(), |v| v.to_string()),
                    r.mu,
                    r.rho_min_lower,
                    r.mu_a_high_snr
                );
            }
            o.text("bounds.csv", &s)?;
        }
        Format::Json => o.json("bounds.json", &result)?,
    }
    let config = BoundsConfig {
        problem: &spec,
        snr_db: &snr,
        c: a.c,
        snr_max_db: a.snr_max,
        seed,
    };
    o.manifest("bounds", seed, &config)
}

fn cmd_bench(a: &BenchArgs, format: Format, out: &Path) -> CmdResult {
    let mut spec = SweepSpec::new(
        ProblemSpec::parse(&a.problem.problem, a.problem.n)?,
        parse_snr_list(&a.snr).map_err(Failure::Usage)?,
        a.trials,
        a.methods.clone(),
        seed_override(a.seed)?,
    );
    spec.c = a.c;
    spec.timing = true;
    let report = harness::measure_runtime(&spec)?;
    let mut o = Output::new(out)?;
    match format {
        Format::Csv => o.text("runtime.csv", &harness::runtime_csv(&report))?,
        Format::Json => o.json("runtime.json", &report)?,
    }
    for t in &report.timings {
        eprintln!("{:>9} mean={:.0} ns", t.method, t.mean_ns);
    }
    o.manifest("bench", spec.seed, &spec)
}

fn cmd_generate(a: &GenerateArgs, out: &Path) -> CmdResult {
    let seed = seed_override(a.seed)?;
    let spec = ProblemSpec::parse(&a.problem.problem, a.problem.n)?;
    let (p, _) = spec.build(seed)?;
    let mut o = Output::new(out)?;
    o.text("problem.json", &p.to_json()?)?;
    o.manifest("generate", seed, &spec)
}

fn run(cli: &Cli) -> CmdResult {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Failure::Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let out = cli.out.as_path();
    match &cli.command {
        Command::Solve(a) => cmd_solve(a, out),
        Command::Sweep(a) => cmd_sweep(a, cli.format, out),
        Command::Rankdef(a) => cmd_rankdef(a, cli.format, out),
        Command::Tomo(a) => cmd_tomo(a, cli.format, out),
        Command::Bounds(a) => cmd_bounds(a, cli.format, out),
        Command::Bench(a) => cmd_bench(a, cli.format, out),
        Command::Generate(a) => cmd_generate(a, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
