//! Command-line front end. Every command writes CSV (and JSON where noted)
//! into `--out-dir` together with a `manifest.json`, or prints the CSV to
//! stdout when no directory is given.
//!
//! Exit codes: 0 success, 1 domain failure, 2 usage or parse error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::generator_matrix;
use crate::model::{load_model_file, AffineModel};
use crate::polyalg::Polynomial;
use crate::scheme::{convergence_study, Method};
use crate::semigroup::{dynkin_expand, exact_semigroup, growth_constant, moment_table, remainder_bound};
use crate::verify::{all_pass, run_suite, write_records, Suite};

pub const THREADS_ENV: &str = "AFFINE_DYNKIN_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "affine-dynkin",
    version,
    about = "Generator calculus for polynomial affine processes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check admissibility of a model file.
    Validate(ModelArg),
    /// Truncated Dynkin expansion against the exact semigroup over a time grid.
    Expand(ExpandArgs),
    /// Weak convergence study of a time-stepping scheme.
    Converge(ConvergeArgs),
    /// Run a verification suite.
    Verify(VerifyArgs),
    /// Moments E^x[X_t^α] for every monomial up to a given order.
    Moments(MomentsArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct ModelArg {
    /// Model configuration (JSON).
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct OutArg {
    /// Directory for report files; CSV goes to stdout when omitted.
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ExpandArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Test function, e.g. "2.5*x1^3*x2 - x1 + 1".
    #[arg(long)]
    pub f: String,
    #[arg(long)]
    pub nu: usize,
    /// Comma-separated times; fractions like 1/8 are accepted.
    #[arg(long = "t-grid")]
    pub t_grid: String,
    /// Comma-separated start point.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Deterministic,
    Euler,
}

#[derive(Args, Debug, Serialize)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub f: String,
    #[arg(long, value_enum, default_value = "deterministic")]
    pub method: MethodKind,
    /// Expansion order of the deterministic scheme.
    #[arg(long, default_value_t = 1)]
    pub nu: usize,
    /// Horizon.
    #[arg(long = "T")]
    pub horizon: String,
    /// Comma-separated step sizes; each must divide T.
    #[arg(long = "h-grid")]
    pub h_grid: String,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// identities, derivatives, bounds or all.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug, Serialize)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Time t.
    #[arg(long = "T")]
    pub horizon: String,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long = "max-order", default_value_t = 4)]
    pub max_order: usize,
    #[command(flatten)]
    pub out: OutArg,
}

/// Parses a decimal or a fraction `p/q`.
pub fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad number '{s}'")))?;
            let q: f64 = q
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad number '{s}'")))?;
            p / q
        }
        None => s.parse().map_err(|_| Error::Parse(format!("bad number '{s}'")))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Parse(format!("bad number '{s}'")))
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_number).collect()
}

fn parse_point(s: &str, model: &AffineModel) -> Result<Vec<f64>> {
    let x = parse_list(s)?;
    if x.len() != model.dim() {
        return Err(Error::Parse(format!(
            "--x0 has {} coordinates, the model has d = {}",
            x.len(),
            model.dim()
        )));
    }
    if !model.in_state_space(&x) {
        return Err(Error::InvalidArgument(format!("x0 = {x:?} is not in the state space")));
    }
    Ok(x)
}

fn model_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

#[derive(Serialize)]
struct RunManifest<'a, P: Serialize> {
    command: &'a str,
    model: &'a Path,
    model_fingerprint: String,
    params: &'a P,
    version: &'a str,
    timestamp_unix: u64,
    outputs: Vec<PathBuf>,
}

/// Writes the named reports into `out_dir` (or the first CSV to stdout) and a manifest.
fn emit<P: Serialize>(
    command: &str,
    model_path: &Path,
    model: &AffineModel,
    params: &P,
    out: &OutArg,
    files: Vec<(&str, Vec<u8>)>,
) -> Result<()> {
    let Some(dir) = &out.out_dir else {
        let mut stdout = std::io::stdout().lock();
        if let Some((_, body)) = files.iter().find(|(name, _)| name.ends_with(".csv")) {
            stdout.write_all(body)?;
        }
        for (_, body) in files.iter().filter(|(name, _)| !name.ends_with(".csv")) {
            stdout.write_all(body)?;
        }
        return Ok(());
    };
    fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();
    for (name, body) in &files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        outputs.push(path);
    }
    let manifest = RunManifest {
        command,
        model: model_path,
        model_fingerprint: model.fingerprint(),
        params,
        version: env!("CARGO_PKG_VERSION"),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn cmd_validate(args: &ModelArg) -> Result<i32> {
    let violations = match load_model_file(&args.model) {
        Ok(_) => Vec::new(),
        Err(Error::Inadmissible(v)) => v,
        Err(e) => return Err(e),
    };
    if violations.is_empty() {
        println!("{}: admissible", args.model.display());
        Ok(0)
    } else {
        for v in &violations {
            println!("{}: {v}", args.model.display());
        }
        Ok(1)
    }
}

fn cmd_expand(args: &ExpandArgs) -> Result<i32> {
    let model = load_model_file(&args.model.model)?;
    let f = Polynomial::parse(&args.f, model.dim())?;
    let t_grid = parse_list(&args.t_grid)?;
    let x = parse_point(&args.x0, &model)?;
    if let Some(t) = t_grid.iter().find(|t| **t < 0.0) {
        return Err(Error::InvalidArgument(format!("negative time {t} in --t-grid")));
    }
    let expansion = dynkin_expand(&model, &f, args.nu)?;
    let g = generator_matrix(&model, f.degree())?;
    let eta = f.degree().div_ceil(2).max(1);
    let cert = growth_constant(&model, eta).ok();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "truncated", "exact", "remainder", "bound"])?;
    for &t in &t_grid {
        let truncated = expansion.evaluate(t, &x);
        let exact = exact_semigroup(&g, &f, t)?.evaluate(&x);
        let rem = if t == 0.0 { 0.0 } else { exact - truncated };
        let bound = cert
            .as_ref()
            .map(|c| num(remainder_bound(c, f.coefficient_norm(), args.nu, t, &x)))
            .unwrap_or_default();
        w.write_record([num(t), num(truncated), num(exact), num(rem), bound])?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    emit(
        "expand",
        &args.model.model,
        &model,
        args,
        &args.out,
        vec![("expand.csv", body)],
    )?;
    Ok(0)
}

fn cmd_converge(args: &ConvergeArgs) -> Result<i32> {
    let model = load_model_file(&args.model.model)?;
    let f = Polynomial::parse(&args.f, model.dim())?;
    let horizon = parse_number(&args.horizon)?;
    let h_grid = parse_list(&args.h_grid)?;
    let x0 = parse_point(&args.x0, &model)?;
    let method = match args.method {
        MethodKind::Deterministic => Method::Deterministic { nu: args.nu },
        MethodKind::Euler => {
            if model.has_jumps() {
                return Err(Error::JumpsUnsupported);
            }
            Method::EulerMc {
                paths: args.paths,
                seed: args.seed,
            }
        }
    };
    let report = convergence_study(&model, &f, &x0, horizon, &h_grid, &method)?;
    let mut csv_body = Vec::new();
    report.write_csv(&mut csv_body)?;
    let json = serde_json::to_string_pretty(&report.summary_json()).map_err(|e| Error::Parse(e.to_string()))? + "\n";
    emit(
        "converge",
        &args.model.model,
        &model,
        args,
        &args.out,
        vec![("convergence.csv", csv_body), ("convergence.json", json.into_bytes())],
    )?;
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let suite: Suite = args.suite.parse()?;
    let model = load_model_file(&args.model.model)?;
    if suite == Suite::All && model.has_constant_part() {
        eprintln!("note: derivatives suite skipped, it requires zero constant characteristics");
    }
    let records = run_suite(&model, &model_label(&args.model.model), suite)?;
    let mut body = Vec::new();
    write_records(&records, &mut body)?;
    emit(
        "verify",
        &args.model.model,
        &model,
        args,
        &args.out,
        vec![("verify.csv", body)],
    )?;
    let failed = records.iter().filter(|r| !r.pass).count();
    if all_pass(&records) {
        eprintln!("{} checks passed", records.len());
        Ok(0)
    } else {
        eprintln!("{failed} of {} checks failed", records.len());
        Ok(1)
    }
}

fn cmd_moments(args: &MomentsArgs) -> Result<i32> {
    let model = load_model_file(&args.model.model)?;
    let t = parse_number(&args.horizon)?;
    let x = parse_point(&args.x0, &model)?;
    let g = generator_matrix(&model, args.max_order)?;
    let table = moment_table(&g, t, &x, args.max_order)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["monomial", "order", "moment"])?;
    for (alpha, value) in &table.values {
        w.write_record([alpha.render(), alpha.order().to_string(), num(*value)])?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    emit(
        "moments",
        &args.model.model,
        &model,
        args,
        &args.out,
        vec![("moments.csv", body)],
    )?;
    Ok(0)
}

/// Runs a parsed command and maps errors onto exit codes.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Expand(a) => cmd_expand(a),
        Command::Converge(a) => cmd_converge(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Moments(a) => cmd_moments(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got '{value}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// Process entry point: parses `std::env::args` and returns the exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 2;
    }
    run(&cli)
}
