//! Command-line front end. Every subcommand writes CSV (to `--out` or stdout)
//! with `#` header lines holding the resolved configuration as JSON.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cheb::build_coefficients;
use crate::error::{Error, Result};
use crate::harness::{
    count_divergences, fit_slope, invariant_measure_error, spde_cost_table, stage_history, strong_error, weak_error,
    ConvergenceTable, InvariantMode, McEstimate, McSettings, Observable, WeakReference,
};
use crate::integrators::{IntegratorConfig, Method, StageMode};
use crate::noise::NoiseKind;
use crate::problems::{
    make_heat_spde_with, make_population, problem_by_id, HeatInitial, PopulationParams, ProblemSpec, Reference,
};
use crate::stability::{
    default_damping_range, domain_length_for, optimize_damping, StabilityPolynomials, StabilityScan,
};

#[derive(Parser, Debug)]
#[command(name = "skrock", version, about = "Stabilized explicit integrators for stiff SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the method coefficients for (s, eta).
    Coeffs(CoeffsArgs),
    /// Mean-square amplification on a (p, q^2) grid. Columns: p,q2,amplification.
    StabilityScan(ScanArgs),
    /// Mean-square stability domain length L.
    DomainLength(LengthArgs),
    /// S-ROCK damping maximizing L for s stages.
    OptimizeDamping(OptimizeArgs),
    /// Strong or weak errors over a range of step sizes. Columns: h,error,std_error,cost.
    Convergence(ConvergenceArgs),
    /// Invariant-measure errors of E X_1^2. Columns: h,error,std_error,cost.
    Invariant(InvariantArgs),
    /// Stochastic heat equation run. Columns: step,t,stages,f_evals.
    Spde(SpdeArgs),
    /// Run the built-in coefficient and stability checks.
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct CoeffsArgs {
    #[arg(long, default_value_t = 5)]
    s: usize,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScanArgs {
    #[arg(long, value_enum, default_value_t = Method::SkRock)]
    method: Method,
    #[arg(long, default_value_t = 7)]
    s: usize,
    /// Damping; defaults to 0.05 (SK-ROCK) or the optimized value (S-ROCK).
    #[arg(long)]
    eta: Option<f64>,
    /// Left end of the p grid; defaults to -2.2 s^2.
    #[arg(long, allow_hyphen_values = true)]
    p_min: Option<f64>,
    /// Top of the q^2 grid; defaults to -2 p_min.
    #[arg(long)]
    q2_max: Option<f64>,
    #[arg(long, default_value_t = 201)]
    np: usize,
    #[arg(long, default_value_t = 101)]
    nq: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LengthArgs {
    #[arg(long, value_enum, default_value_t = Method::SkRock)]
    method: Method,
    #[arg(long, default_value_t = 7)]
    s: usize,
    #[arg(long)]
    eta: Option<f64>,
    /// Resolution on L; defaults to 1e-6 s^2.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[arg(long, default_value_t = 7)]
    s: usize,
    /// Upper end of the damping search; defaults to 3 sqrt(s) + 5.
    #[arg(long)]
    eta_max: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = Method::SkRock)]
    method: Method,
    /// Fixed stage count (ignored with --adaptive).
    #[arg(long, default_value_t = 1)]
    s: usize,
    #[arg(long)]
    eta: Option<f64>,
    /// Choose s every step from h * lambda_max.
    #[arg(long)]
    adaptive: bool,
    /// Overrides the problem's lambda_max bound.
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long, default_value = "pb1")]
    problem: String,
    /// Population model with -lambda1 = mu1^2 = 100.
    #[arg(long)]
    stiff: bool,
    /// Comma-separated step sizes.
    #[arg(long, value_delimiter = ',')]
    h: Vec<f64>,
    #[arg(long = "T")]
    t: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = NoiseKind::Gaussian)]
    noise: NoiseKind,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ErrorKind {
    Strong,
    Weak,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value_t = ErrorKind::Weak)]
    error: ErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    Ensemble,
    TimeAverage,
}

#[derive(Args, Debug)]
struct InvariantArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Ensemble)]
    mode: ModeArg,
}

#[derive(Args, Debug)]
struct SpdeArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.02)]
    h: f64,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long = "T", default_value_t = 1.0)]
    t: f64,
    #[arg(long, value_enum, default_value_t = Method::SkRock)]
    method: Method,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start from u = 1 instead of 5 cos(pi x).
    #[arg(long)]
    flat_initial: bool,
    /// Print the SK-ROCK / S-ROCK cost table over dt = 2^0 .. 2^-10 instead.
    #[arg(long)]
    cost_table: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code: 0 on success, 1 on usage or configuration errors, 2 on divergence.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(Status::Clean) => 0,
        Ok(Status::Diverged(n)) => {
            eprintln!("{n} trajectories diverged");
            2
        }
        Err(e @ Error::Divergence { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

enum Status {
    Clean,
    Diverged(usize),
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

fn run(command: Command) -> Result<Status> {
    match command {
        Command::Coeffs(a) => coeffs(a),
        Command::StabilityScan(a) => scan(a),
        Command::DomainLength(a) => length(a),
        Command::OptimizeDamping(a) => optimize(a),
        Command::Convergence(a) => convergence(a),
        Command::Invariant(a) => invariant(a),
        Command::Spde(a) => spde(a),
        Command::Selftest => selftest(),
    }
}

fn coeffs(a: CoeffsArgs) -> Result<Status> {
    let c = build_coefficients(a.s, a.eta)?;
    let text = match a.format {
        Format::Json => serde_json::to_string_pretty(&c).map_err(|e| Error::Io(e.to_string()))? + "\n",
        Format::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "# s={},eta={}", a.s, a.eta);
            let scalars = [
                ("omega0", c.omega0),
                ("omega1", c.omega1),
                ("c_squared", c.c_squared),
                ("alpha", c.alpha),
                ("c2", c.c2),
                ("c3", c.c3),
                ("c4", c.c4),
                ("r_s", c.r[a.s]),
            ];
            out.push_str("name,value\n");
            for (k, v) in scalars {
                let _ = writeln!(out, "{k},{v:.16e}");
            }
            out.push_str("stage,mu,nu,kappa,delta,r\n");
            for i in 1..=a.s {
                let _ = writeln!(
                    out,
                    "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    c.mu[i], c.nu[i], c.kappa[i], c.delta[i], c.r[i]
                );
            }
            out
        }
    };
    emit(&a.out, &text)?;
    Ok(Status::Clean)
}

fn resolve_eta(method: Method, s: usize, eta: Option<f64>) -> f64 {
    match (method, eta) {
        (_, Some(e)) => e,
        (Method::SRock, None) => crate::stability::srock_optimal_damping(s).eta,
        _ => crate::integrators::DEFAULT_ETA,
    }
}

fn scan(a: ScanArgs) -> Result<Status> {
    let eta = resolve_eta(a.method, a.s, a.eta);
    let p_min = a.p_min.unwrap_or(-2.2 * (a.s * a.s) as f64);
    if !(p_min < 0.0) {
        return Err(Error::Config(format!("--p-min must be negative, got {p_min}")));
    }
    let q2_max = a.q2_max.unwrap_or(-2.0 * p_min);
    let scan = StabilityScan::uniform(a.method, a.s, eta, p_min, q2_max, a.np, a.nq)?;
    emit(&a.out, &scan.to_csv())?;
    if a.out.is_some() {
        println!("L = {:.10}, L/s^2 = {:.6}", scan.length, scan.length / (a.s * a.s) as f64);
    }
    Ok(Status::Clean)
}

fn length(a: LengthArgs) -> Result<Status> {
    let eta = resolve_eta(a.method, a.s, a.eta);
    let tol = a.tolerance.unwrap_or(1e-6 * (a.s * a.s) as f64);
    let l = domain_length_for(a.method, a.s, eta, tol)?;
    println!("method,s,eta,L,L_over_s2");
    println!("{},{},{},{:.16e},{:.16e}", a.method.name(), a.s, eta, l, l / (a.s * a.s) as f64);
    Ok(Status::Clean)
}

fn optimize(a: OptimizeArgs) -> Result<Status> {
    let mut range = default_damping_range(a.s);
    if let Some(m) = a.eta_max {
        range.1 = m;
    }
    let tol = a.tolerance.unwrap_or(1e-6 * (a.s * a.s) as f64);
    let opt = optimize_damping(a.s, range, tol)?;
    println!("s,eta_opt,L_opt,L_over_s2");
    println!("{},{:.16e},{:.16e},{:.16e}", opt.s, opt.eta, opt.length, opt.length / (a.s * a.s) as f64);
    Ok(Status::Clean)
}

fn load_problem(run: &RunArgs) -> Result<ProblemSpec> {
    let mut spec = match (run.problem.as_str(), run.stiff) {
        ("population", true) => make_population(PopulationParams::stiff())?,
        (_, true) => return Err(Error::Config("--stiff only applies to the population problem".into())),
        _ => problem_by_id(&run.problem).map_err(|e| Error::Config(e.to_string()))?,
    };
    if let Some(l) = run.lambda_max {
        spec.problem = spec.problem.with_lambda_max(l);
    }
    Ok(spec)
}

fn config_for(run: &RunArgs, h: f64) -> IntegratorConfig {
    IntegratorConfig {
        method: run.method,
        eta: run.eta,
        stage_mode: if run.adaptive { StageMode::Adaptive } else { StageMode::Fixed(run.s) },
        h,
    }
}

fn default_hs(t: f64) -> Vec<f64> {
    (2..=7).map(|k| t * 2f64.powi(-k)).collect()
}

fn finish_table(
    run: &RunArgs,
    extra: &impl Serialize,
    table: &ConvergenceTable,
    diverged: usize,
    spec: &ProblemSpec,
) -> Result<Status> {
    let header = format!("problem={}\nconfig={}\noptions={}", spec.describe(), json(run), json(extra));
    emit(&run.out, &table.to_csv(&header))?;
    match fit_slope(table) {
        Ok(slope) => eprintln!("fitted slope {slope:.4}"),
        Err(e) => eprintln!("no slope: {e}"),
    }
    Ok(if diverged > 0 { Status::Diverged(diverged) } else { Status::Clean })
}

fn convergence(a: ConvergenceArgs) -> Result<Status> {
    let run = &a.run;
    let spec = load_problem(run)?;
    let t = run.t.unwrap_or(1.0);
    let hs = if run.h.is_empty() { default_hs(t) } else { run.h.clone() };
    let settings = McSettings::new(run.samples.unwrap_or(10_000), run.seed).noise(run.noise);
    let mut table = ConvergenceTable::new();
    let mut diverged = 0;
    for &h in &hs {
        let cfg = config_for(run, h);
        let est: McEstimate = match a.error {
            ErrorKind::Strong => strong_error(&spec.problem, &cfg, &spec.x0, t, settings)?,
            ErrorKind::Weak => {
                let (phi, reference) = weak_setup(&spec, t);
                weak_error(&spec.problem, &cfg, &spec.x0, t, settings, phi, reference)?
            }
        };
        diverged += est.diverged;
        table.push(h, &est);
    }
    finish_table(run, &a.error, &table, diverged, &spec)
}

fn second_moment(x: &[f64]) -> f64 {
    x[0] * x[0]
}

fn arcsinh_first(x: &[f64]) -> f64 {
    x[0].asinh()
}

/// Observable and reference used for weak errors of each built-in problem.
fn weak_setup(spec: &ProblemSpec, t: f64) -> (Observable<'static>, WeakReference) {
    match spec.id {
        "pb1" => (&arcsinh_first, WeakReference::Pathwise),
        "lintest" => (&second_moment, WeakReference::Pathwise),
        "ou" => {
            let p = |k: &str| spec.parameters.iter().find(|(n, _)| *n == k).map(|(_, v)| *v).unwrap_or(1.0);
            let (delta, sigma) = (p("delta"), p("sigma"));
            let x0 = spec.x0[0];
            let decay = (-2.0 * delta * t).exp();
            let v = x0 * x0 * decay + sigma * sigma / (2.0 * delta) * (1.0 - decay);
            (&second_moment, WeakReference::Value(v))
        }
        _ => (&second_moment, WeakReference::FineStep { refine: 64 }),
    }
}

fn invariant(a: InvariantArgs) -> Result<Status> {
    let run = &a.run;
    let spec = load_problem(run)?;
    let reference = match &spec.reference {
        Reference::Stationary { second_moment, .. } => Some(second_moment[0]),
        _ => None,
    };
    if reference.is_none() {
        return Err(Error::Config(format!("problem '{}' has no stationary reference", spec.id)));
    }
    let (mode, default_t, default_samples) = match a.mode {
        ModeArg::Ensemble => (InvariantMode::Ensemble, 10.0, 100_000),
        ModeArg::TimeAverage => (InvariantMode::time_average(), 10_000.0, 1),
    };
    let t = run.t.unwrap_or(default_t);
    let hs = if run.h.is_empty() { vec![0.5, 0.25, 0.125, 0.0625] } else { run.h.clone() };
    let settings = McSettings::new(run.samples.unwrap_or(default_samples), run.seed).noise(run.noise);
    let mut table = ConvergenceTable::new();
    let mut diverged = 0;
    for &h in &hs {
        let cfg = config_for(run, h);
        let est = invariant_measure_error(&spec.problem, &cfg, &spec.x0, t, mode, settings, &second_moment, reference)?;
        diverged += est.diverged;
        table.push(h, &est);
    }
    finish_table(run, &a.mode, &table, diverged, &spec)
}

fn spde(a: SpdeArgs) -> Result<Status> {
    let initial = if a.flat_initial { HeatInitial::Constant(1.0) } else { HeatInitial::Cosine };
    let spec = make_heat_spde_with(a.n, initial, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    if a.cost_table {
        let dts: Vec<f64> = (0..=10).map(|k| 2f64.powi(-k)).collect();
        let rows = spde_cost_table(
            &spec.problem,
            &spec.x0,
            1.0,
            &[(Method::SkRock, Some(a.eta)), (Method::SRock, None)],
            &dts,
            a.seed,
        )?;
        let mut out = String::new();
        let _ = writeln!(out, "# n={},T=1,seed={}", a.n, a.seed);
        out.push_str("dt,method,eta,steps,min_stages,max_stages,f_evals,finite\n");
        for r in &rows {
            let _ = writeln!(
                out,
                "{:.16e},{},{:.16e},{},{},{},{},{}",
                r.dt,
                r.method.name(),
                r.eta,
                r.steps,
                r.min_stages,
                r.max_stages,
                r.f_evals,
                r.finite
            );
        }
        emit(&a.out, &out)?;
        return Ok(Status::Clean);
    }
    let cfg = IntegratorConfig::new(a.method, a.h).adaptive().eta(a.eta);
    let (stages, state) = stage_history(&spec.problem, &cfg, &spec.x0, a.t, a.seed)?;
    let mut out = String::new();
    let _ = writeln!(out, "# n={},h={},eta={},T={},method={},seed={}", a.n, a.h, a.eta, a.t, a.method.name(), a.seed);
    out.push_str("step,t,stages,f_evals\n");
    let mut total = 0;
    for (k, s) in stages.iter().enumerate() {
        total += a.method.f_evals(*s);
        let _ = writeln!(out, "{},{:.16e},{},{}", k + 1, (k + 1) as f64 * a.h, s, total);
    }
    emit(&a.out, &out)?;
    let finite = state.iter().all(|v| v.is_finite());
    let (lo, hi) = (stages.iter().min().copied().unwrap_or(0), stages.iter().max().copied().unwrap_or(0));
    eprintln!("stages {lo}..{hi}, total f-evals {total}, final state finite: {finite}");
    Ok(Status::Clean)
}

/// Outcome of one built-in check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Coefficient identities and stability invariants on small grids.
pub fn selftest_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let etas = [0.0, 0.05, 0.5, 1.0, 4.0];
    let mut worst: f64 = 0.0;
    for s in 1..=50 {
        for &eta in &etas {
            match build_coefficients(s, eta) {
                Ok(c) => {
                    for i in 2..=s {
                        worst = worst.max((c.kappa[i] - (1.0 - c.nu[i])).abs());
                    }
                    let (r1, r2) = c.order_condition_residuals();
                    worst = worst.max(r1.abs()).max(r2.abs());
                    worst = worst.max((c.dt_s - s as f64 * c.u_s1).abs() / c.dt_s.abs().max(1.0));
                }
                Err(_) => worst = f64::INFINITY,
            }
        }
    }
    out.push(CheckResult {
        name: "coefficient identities",
        passed: worst <= 1e-12,
        detail: format!("max residual {worst:.3e}"),
    });

    let mut worst_amp: f64 = 0.0;
    for s in [1usize, 2, 5, 10, 25, 50] {
        let a = crate::stability::max_boundary_amplification(Method::SkRock, s, 0.0, -2.0 * (s * s) as f64, 10_000)
            .unwrap_or(f64::INFINITY);
        worst_amp = worst_amp.max(a);
    }
    out.push(CheckResult {
        name: "undamped boundary amplification <= 1",
        passed: worst_amp <= 1.0 + 1e-12,
        detail: format!("max {worst_amp:.15}"),
    });

    let mut lengths = Vec::new();
    for s in [7usize, 20] {
        let l = crate::stability::domain_length(s, 0.05, 1e-6 * (s * s) as f64).unwrap_or(0.0) / (s * s) as f64;
        lengths.push(l);
    }
    out.push(CheckResult {
        name: "domain length ratio for eta = 0.05",
        passed: lengths.iter().all(|l| (1.90..=2.00).contains(l)),
        detail: format!("{lengths:?}"),
    });

    let mut worst_ou: f64 = 0.0;
    for s in [1usize, 5, 10] {
        let poly = StabilityPolynomials::new(s, 0.0).expect("valid");
        for k in 1..=100 {
            let p = -1.99 * (s * s) as f64 * k as f64 / 100.0;
            if poly.a(p).abs() >= 1.0 {
                continue;
            }
            if let Ok(r) = crate::stability::ou_invariant_ratio(p, s, 0.0) {
                worst_ou = worst_ou.max((r.postprocessed - 1.0).abs());
            }
        }
    }
    out.push(CheckResult {
        name: "undamped postprocessed OU ratio = 1",
        passed: worst_ou <= 1e-10,
        detail: format!("max deviation {worst_ou:.3e}"),
    });

    let mut worst_est: f64 = f64::NEG_INFINITY;
    for s in 1..=50 {
        for k in 1..20 {
            let v = crate::stability::stability_estimate_ratio(s, k as f64 / 20.0).unwrap_or(f64::INFINITY);
            worst_est = worst_est.max(v);
        }
    }
    out.push(CheckResult {
        name: "stability estimate ratio <= 1",
        passed: worst_est <= 1.0 + 1e-12,
        detail: format!("max {worst_est:.15}"),
    });
    out
}

fn selftest() -> Result<Status> {
    let checks = selftest_checks();
    let mut failed = 0;
    for c in &checks {
        println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::Contract(format!("{failed} self-test checks failed")));
    }
    Ok(Status::Clean)
}

/// Fraction of trajectories of `spec` diverging under `config` on `[0, t]`.
pub fn divergence_fraction(spec: &ProblemSpec, config: &IntegratorConfig, t: f64, settings: McSettings) -> Result<f64> {
    let c = count_divergences(&spec.problem, config, &spec.x0, t, settings)?;
    Ok(c.diverged as f64 / c.samples as f64)
}
