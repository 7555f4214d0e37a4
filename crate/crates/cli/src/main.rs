use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use decomp_core::convergence::{kn_study, StudySource};
use decomp_core::field::{GridField, TvMode};
use decomp_core::io::{format_csv, parse_csv, read_field, write_field};
use decomp_core::multiscale::{decompose_from, energy_ledger_check, ScaleSchedule, Start};
use decomp_core::oracles::{radial_example, ramp_example};
use decomp_core::rof::{solve_rof, DualScheme, SolverConfig};
use decomp_core::shrinkage::solve_l2_lp;
use decomp_core::DecompError;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

mod error;

use error::CliError;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "decomp", version, about = "Tikhonov-regularization decompositions f = u + v")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// (L2, BV) pair at a single scale
    Rof(RofArgs),
    /// Hierarchical decomposition over a geometric scale schedule
    Multiscale(MultiscaleArgs),
    /// K-functional over a log-spaced grid of scales
    Kfun(KfunArgs),
    /// Collapse threshold ||f - mean||_* by bisection on t
    Starnorm(StarnormArgs),
    /// (l2, lp) shrinkage of a finite sequence
    Shrink(ShrinkArgs),
    /// K_n convergence study on dyadic grids for a closed-form example
    Study(StudyArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TvArg {
    Iso,
    Aniso,
}

impl From<TvArg> for TvMode {
    fn from(t: TvArg) -> Self {
        match t {
            TvArg::Iso => TvMode::Isotropic,
            TvArg::Aniso => TvMode::Anisotropic,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SchemeArg {
    Accelerated,
    FixedPoint,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SolverArgs {
    /// TV flavor
    #[arg(long, value_enum, default_value = "iso")]
    tv: TvArg,
    /// Stop when the largest change of z falls below this
    #[arg(long)]
    tol: Option<f64>,
    /// Relative duality-gap requirement for stopping
    #[arg(long)]
    gap_rtol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, value_enum, default_value = "accelerated")]
    scheme: SchemeArg,
    /// Dual step in grid units (default: 90% of the stability bound)
    #[arg(long)]
    tau: Option<f64>,
}

impl SolverArgs {
    fn config(&self, base: SolverConfig) -> SolverConfig {
        let mut cfg = base.with_tv(self.tv.into()).with_scheme(match self.scheme {
            SchemeArg::Accelerated => DualScheme::Accelerated,
            SchemeArg::FixedPoint => DualScheme::FixedPoint,
        });
        if let Some(t) = self.tol {
            cfg = cfg.with_tol(t);
        }
        if let Some(g) = self.gap_rtol {
            cfg = cfg.with_gap_rtol(g);
        }
        if let Some(m) = self.max_iters {
            cfg = cfg.with_max_iters(m);
        }
        if let Some(tau) = self.tau {
            cfg = cfg.with_tau(tau);
        }
        cfg
    }
}

#[derive(Args, Debug, Serialize)]
struct RofArgs {
    /// Input field (.csv or .pgm)
    input: PathBuf,
    #[arg(long)]
    t: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Where to write u
    #[arg(long = "out")]
    out_u: Option<PathBuf>,
    /// Where to write v
    #[arg(long = "out-v")]
    out_v: Option<PathBuf>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum StartArg {
    Zero,
    Mean,
}

#[derive(Args, Debug, Serialize)]
struct MultiscaleArgs {
    input: PathBuf,
    #[arg(long)]
    t0: f64,
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    #[arg(long)]
    levels: usize,
    #[arg(long, value_enum, default_value = "zero")]
    start: StartArg,
    #[command(flatten)]
    solver: SolverArgs,
    /// Directory for w_k and v_k files (created if missing)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct KfunArgs {
    input: PathBuf,
    /// `a:b:n`, n log-spaced scales in [a, b]
    #[arg(long)]
    t_grid: String,
    #[command(flatten)]
    solver: SolverArgs,
    /// CSV table destination (default stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct StarnormArgs {
    input: PathBuf,
    /// Bracket width on t
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Relative oscillation of u_t below which it counts as constant
    #[arg(long, default_value_t = decomp_core::rof::CONSTANCY_THRESHOLD)]
    constancy: f64,
    #[arg(long, value_enum, default_value = "iso")]
    tv: TvArg,
    /// Duality-gap requirement of each solve; the collapse test needs little
    #[arg(long, default_value_t = 1e-4)]
    gap_rtol: f64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ShrinkArgs {
    /// A CSV file with one value per line, or an inline list like "3,-1,0.5"
    input: String,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long)]
    t: f64,
    /// Destination for x (default stdout, comma separated)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "out-y")]
    out_y: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ExampleArg {
    Ramp,
    Radial,
}

#[derive(Args, Debug, Serialize)]
struct StudyArgs {
    #[arg(long, value_enum)]
    example: ExampleArg,
    #[arg(long)]
    t: f64,
    /// Inclusive level range `a..b`; level n has 2^n cells per axis
    #[arg(long, default_value = "4..10")]
    levels: String,
    #[command(flatten)]
    solver: SolverArgs,
    /// CSV table destination (default stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct RunReport {
    schema_version: u32,
    command: &'static str,
    config: Value,
    input: Option<InputDigest>,
    outputs: BTreeMap<String, String>,
    certificate: Option<Value>,
    results: Value,
    timings_ms: BTreeMap<String, f64>,
}

impl RunReport {
    fn new(command: &'static str, config: Value, input: Option<InputDigest>) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            command,
            config,
            input,
            outputs: BTreeMap::new(),
            certificate: None,
            results: Value::Null,
            timings_ms: BTreeMap::new(),
        }
    }

    fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.into(), path.display().to_string());
    }

    fn time(&mut self, name: &str, since: Instant) {
        self.timings_ms.insert(name.into(), since.elapsed().as_secs_f64() * 1e3);
    }

    /// Write to `dest`, or to stdout when `dest` is `None` and `stdout_default`.
    fn emit(&self, dest: Option<&Path>, stdout_default: bool) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        match dest {
            Some(p) => fs::write(p, text + "\n").map_err(|e| CliError::io(p, e)),
            None if stdout_default => {
                println!("{text}");
                Ok(())
            }
            None => Ok(()),
        }
    }
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load(path: &Path) -> Result<(GridField, InputDigest), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let field = read_field(path).map_err(|e| CliError::input(path, e))?;
    let d = InputDigest {
        path: path.display().to_string(),
        sha256: digest(&bytes),
        shape: field.grid().shape().to_vec(),
    };
    Ok((field, d))
}

fn save(path: &Path, u: &GridField) -> Result<(), CliError> {
    write_field(path, u).map_err(|e| CliError::input(path, e))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn positive(name: &str, x: f64) -> Result<f64, CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::Usage(format!("--{name} must be a positive number, got {x}")))
    }
}

fn cmd_rof(a: &RofArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let t = positive("t", a.t)?;
    let cfg = a.solver.config(SolverConfig::default());
    let (f, input) = load(&a.input)?;
    let mut report = RunReport::new("rof", json!({ "args": to_value(a), "solver": to_value(&cfg) }), Some(input));
    let solve = Instant::now();
    let sol = solve_rof(&f, t, &cfg)?;
    report.time("solve", solve);
    if let Some(p) = &a.out_u {
        save(p, &sol.u)?;
        report.output("u", p);
    }
    if let Some(p) = &a.out_v {
        save(p, &sol.v)?;
        report.output("v", p);
    }
    report.certificate = Some(json!({
        "certified": sol.certified,
        "converged": sol.converged,
        "sup_norm_z": sol.certificate.sup_norm_z,
        "pairing_residual": sol.certificate.pairing_residual,
        "mean_residual": sol.certificate.mean_residual,
    }));
    report.results = json!({
        "t": t,
        "iterations": sol.iterations,
        "tv_u": sol.tv_u,
        "energy": sol.energy,
        "k_direct": sol.k_direct(),
        "k_projection": sol.k_projection(&f),
        "tv_mode": sol.tv_mode,
    });
    report.time("total", start);
    report.emit(a.report.as_deref(), true)
}

fn cmd_multiscale(a: &MultiscaleArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let schedule = ScaleSchedule::new(a.t0, a.ratio, a.levels)?;
    let cfg = a.solver.config(SolverConfig::default());
    let (f, input) = load(&a.input)?;
    let mut report = RunReport::new("multiscale", json!({ "args": to_value(a), "solver": to_value(&cfg) }), Some(input));
    let s = match a.start {
        StartArg::Zero => Start::Zero,
        StartArg::Mean => Start::Mean,
    };
    let solve = Instant::now();
    let d = decompose_from(&f, &schedule, &cfg, s)?;
    report.time("solve", solve);
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let ext = a.input.extension().and_then(|e| e.to_str()).filter(|e| e.eq_ignore_ascii_case("pgm")).unwrap_or("csv");
        for (k, w) in d.details.iter().enumerate() {
            let p = dir.join(format!("w_{}.{ext}", k + 1));
            save(&p, w)?;
            report.output(&format!("w_{}", k + 1), &p);
        }
        for (k, v) in d.residuals.iter().enumerate().skip(1) {
            let p = dir.join(format!("v_{k}.{ext}"));
            save(&p, v)?;
            report.output(&format!("v_{k}"), &p);
        }
    }
    let check = energy_ledger_check(&d);
    report.certificate = Some(json!({
        "all_certified": d.all_certified(),
        "levels": d.ledger.iter().map(|r| json!({
            "level": r.level,
            "certified": r.certified,
            "sup_norm_z": r.certificate.sup_norm_z,
            "pairing_residual": r.certificate.pairing_residual,
            "mean_residual": r.certificate.mean_residual,
        })).collect::<Vec<_>>(),
    }));
    report.results = json!({ "ledger": to_value(&d.ledger), "ledger_check": to_value(&check) });
    report.time("total", start);
    report.emit(a.report.as_deref(), true)
}

fn parse_t_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("--t-grid expects a:b:n with 0 < a <= b and n >= 1, got {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(a > 0.0 && b >= a && b.is_finite()) || n == 0 {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    let (la, lb) = (a.ln(), b.ln());
    Ok((0..n)
        .map(|i| if i + 1 == n { b } else { (la + (lb - la) * i as f64 / (n - 1) as f64).exp() })
        .collect())
}

fn cmd_kfun(a: &KfunArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let ts = parse_t_grid(&a.t_grid)?;
    let cfg = a.solver.config(SolverConfig::default());
    let (f, input) = load(&a.input)?;
    let mut report = RunReport::new("kfun", json!({ "args": to_value(a), "solver": to_value(&cfg) }), Some(input));
    let solve = Instant::now();
    let rows = ts
        .par_iter()
        .map(|&t| decomp_core::rof::k_functional(&f, t, &cfg))
        .collect::<Result<Vec<_>, DecompError>>()?;
    report.time("solve", solve);
    let mut csv = String::from("t,k_direct,k_projection,gap,certified\n");
    for r in &rows {
        csv.push_str(&format!("{:e},{:.12e},{:.12e},{:.3e},{}\n", r.t, r.k_direct, r.k_projection, r.gap(), r.certified));
    }
    write_text(a.out.as_deref(), &csv)?;
    if let Some(p) = &a.out {
        report.output("table", p);
    }
    report.certificate = Some(json!({ "all_certified": rows.iter().all(|r| r.certified) }));
    report.results = to_value(&rows);
    report.time("total", start);
    report.emit(a.report.as_deref(), false)
}

fn cmd_starnorm(a: &StarnormArgs) -> Result<(), CliError> {
    let start = Instant::now();
    positive("tol", a.tol)?;
    positive("constancy", a.constancy)?;
    let cfg = SolverConfig::default().with_tv(a.tv.into()).with_gap_rtol(a.gap_rtol);
    cfg.validate(1)?;
    let (f, input) = load(&a.input)?;
    let mut report = RunReport::new("starnorm", json!({ "args": to_value(a), "solver": to_value(&cfg) }), Some(input));
    let solve = Instant::now();
    let est = decomp_core::rof::estimate_star_norm_with(&f, a.tol, a.constancy, &cfg)?;
    report.time("solve", solve);
    let mut results = to_value(&est);
    if f.grid().dims() == 1 && f.grid().mask().is_none() {
        results["exact_1d"] = json!(decomp_core::rof::star_norm_1d(&f)?);
    }
    report.results = results;
    report.time("total", start);
    report.emit(a.report.as_deref(), true)
}

fn parse_sequence(input: &str) -> Result<(Vec<f64>, Option<InputDigest>), CliError> {
    let path = Path::new(input);
    if path.is_file() {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = String::from_utf8_lossy(&bytes);
        let field = parse_csv(&text).map_err(|e| CliError::input(path, e))?;
        if field.grid().dims() != 1 {
            return Err(CliError::Usage(format!("{}: shrink expects a 1D sequence", path.display())));
        }
        let d = InputDigest { path: input.into(), sha256: digest(&bytes), shape: field.grid().shape().to_vec() };
        return Ok((field.into_values(), Some(d)));
    }
    let vals = input
        .split(',')
        .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| CliError::Usage(format!("{input:?} is neither a readable file nor a comma-separated list of numbers")))?;
    let d = InputDigest { path: "<inline>".into(), sha256: digest(input.as_bytes()), shape: vec![vals.len()] };
    Ok((vals, Some(d)))
}

fn join(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

fn cmd_shrink(a: &ShrinkArgs) -> Result<(), CliError> {
    let start = Instant::now();
    positive("t", a.t)?;
    let (b, input) = parse_sequence(&a.input)?;
    let mut report = RunReport::new("shrink", json!({ "args": to_value(a) }), input);
    let pair = solve_l2_lp(&b, a.t, a.p)?;
    match &a.out {
        Some(p) => {
            fs::write(p, format_csv(&GridField::from_1d(pair.x.clone())?).map_err(|e| CliError::input(p, e))?)
                .map_err(|e| CliError::io(p, e))?;
            report.output("x", p);
        }
        None => println!("{}", join(&pair.x)),
    }
    if let Some(p) = &a.out_y {
        fs::write(p, format_csv(&GridField::from_1d(pair.y.clone())?).map_err(|e| CliError::input(p, e))?)
            .map_err(|e| CliError::io(p, e))?;
        report.output("y", p);
    }
    report.results = to_value(&pair);
    report.time("total", start);
    report.emit(a.report.as_deref(), false)
}

fn parse_levels(s: &str) -> Result<Vec<u32>, CliError> {
    let bad = || CliError::Usage(format!("--levels expects an inclusive range a..b, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn cmd_study(a: &StudyArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let t = positive("t", a.t)?;
    let levels = parse_levels(&a.levels)?;
    // the K_n gaps shrink like h^2, so the solver must be far more accurate
    // than the discretization error at the finest level
    let cfg = a.solver.config(SolverConfig::default().with_tol(1e-9).with_gap_rtol(1e-9));
    let ex = match a.example {
        ExampleArg::Ramp => ramp_example(t)?,
        ExampleArg::Radial => radial_example(2, 0.5, 1.0, t)?,
    };
    let mut report = RunReport::new("study", json!({ "args": to_value(a), "solver": to_value(&cfg), "example": to_value(&ex) }), None);
    let solve = Instant::now();
    let r = kn_study(&StudySource::Analytic(ex), t, &levels, &cfg)?;
    report.time("solve", solve);
    write_text(a.out.as_deref(), &r.to_csv())?;
    if let Some(p) = &a.out {
        report.output("table", p);
    }
    report.certificate = Some(json!({ "all_certified": r.rows.iter().all(|x| x.certified) }));
    report.results = to_value(&r);
    report.time("total", start);
    report.emit(a.report.as_deref(), false)
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("DECOMP_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("DECOMP_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Rof(a) => cmd_rof(a),
        Command::Multiscale(a) => cmd_multiscale(a),
        Command::Kfun(a) => cmd_kfun(a),
        Command::Starnorm(a) => cmd_starnorm(a),
        Command::Shrink(a) => cmd_shrink(a),
        Command::Study(a) => cmd_study(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("decomp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
