//! `slowdrive`: sweeps and verification suites for slowly driven quantum
//! heat engines.
//!
//! Subcommands: `run` (evaluate a sweep from a config file into CSV + JSON
//! sidecar), `verify` (seeded invariant suites), `info` (print resolved
//! settings). Exit codes: 0 success, 1 verification failure, 2 config
//! parse/validation error, 3 numeric non-convergence, 4 invariant violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use slowdrive_core::models::{oscillator_matrix_report, FourierDrivenModel};
use slowdrive_core::opalg::HermitianOperator;
use slowdrive_core::oscillator::{self, OscillatorParams};
use slowdrive_core::thermo::{
    complete_report, temperature_profile, Curve, DrivenSystem, EngineReport, GridPolicy, Protocol,
};
use slowdrive_core::verify;
use slowdrive_core::Error as CoreError;

const SCHEMA_VERSION: u32 = 1;

/// Pinned CSV layout; the golden-file test guards both lines.
const CSV_PREAMBLE: &str = "# slowdrive-csv schema_version=1";
const CSV_HEADER: &str = "t_eq,gamma,t_c,t_h,omega0,tau,fock_dim,time_nodes,P_w,P_W,J_q,\
DeltaP_w,DeltaI_w,ratio_2dIw_over_dPw,sigma_dot,W_ad,w_avg,eta,eta_C,eta_PS,eta_Q,eta_cl,\
f_value,tur_residual,engine_flag";

#[derive(Parser)]
#[command(name = "slowdrive", version, about = "Slow-driving heat-engine sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Evaluate the sweep described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// CSV output path; overrides the config's output section.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the sweep (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run seeded verification suites.
    Verify {
        /// Single suite name; default runs all of them.
        #[arg(long)]
        suite: Option<String>,
        #[arg(long, default_value_t = 12345)]
        seed: u64,
        /// Case-count override for randomized suites.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Print the resolved configuration and sweep size.
    Info {
        #[arg(long)]
        config: PathBuf,
    },
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    #[serde(default = "default_schema_version")]
    schema_version: u32,
    engine: EngineConfig,
    #[serde(default)]
    sweep: Vec<SweepAxis>,
    #[serde(default)]
    numerics: Numerics,
    #[serde(default)]
    output: OutputConfig,
    #[serde(default = "default_seed")]
    seed: u64,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_seed() -> u64 {
    12345
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum EngineConfig {
    /// Closed-form single-ion engine pipeline.
    OscillatorAnalytic { params: OscillatorParams },
    /// Truncated-Fock matrix pipeline for the same engine.
    OscillatorMatrix { params: OscillatorParams },
    /// H(t) = H0 + lambda(t) H1 with thermal jumps on adjacent levels.
    CustomDetailedBalanced { spec: CustomSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomSpec {
    h_base: MatrixSpec,
    h_drive: MatrixSpec,
    /// sin^2 Fourier coefficients of the mechanical drive lambda(t).
    coeffs: Vec<f64>,
    /// Upward rates for the adjacent-level jumps (d - 1 entries).
    gamma_up: Vec<f64>,
    t_c: f64,
    t_h: f64,
    tau: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixSpec {
    re: Vec<Vec<f64>>,
    #[serde(default)]
    im: Option<Vec<Vec<f64>>>,
}

impl MatrixSpec {
    fn build(&self, what: &str) -> Result<HermitianOperator, String> {
        let d = self.re.len();
        if d == 0 || self.re.iter().any(|row| row.len() != d) {
            return Err(format!("{what}: 're' must be a non-empty square matrix"));
        }
        if let Some(im) = &self.im {
            if im.len() != d || im.iter().any(|row| row.len() != d) {
                return Err(format!("{what}: 'im' must match the shape of 're'"));
            }
        }
        let mut m = ndarray::Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                let re = self.re[i][j];
                let im = self.im.as_ref().map_or(0.0, |v| v[i][j]);
                m[[i, j]] = num_complex::Complex64::new(re, im);
            }
        }
        HermitianOperator::new(m).map_err(|e| format!("{what}: {e}"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepAxis {
    parameter: String,
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default)]
    range: Option<RangeSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RangeSpec {
    min: f64,
    max: f64,
    points: usize,
    #[serde(default = "default_scale")]
    scale: String,
}

fn default_scale() -> String {
    "linear".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Numerics {
    initial_nodes: usize,
    max_nodes: usize,
    rel_tol: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self { initial_nodes: 257, max_nodes: 4097, rel_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputConfig {
    #[serde(default)]
    csv: Option<PathBuf>,
}

impl Config {
    fn grid(&self) -> GridPolicy {
        GridPolicy {
            initial_nodes: self.numerics.initial_nodes,
            max_nodes: self.numerics.max_nodes,
            rel_tol: self.numerics.rel_tol,
        }
    }

    fn sweepable_parameters(&self) -> &'static [&'static str] {
        match self.engine {
            EngineConfig::OscillatorAnalytic { .. } | EngineConfig::OscillatorMatrix { .. } => {
                &["omega0", "t_c", "t_h", "gamma", "tau"]
            }
            EngineConfig::CustomDetailedBalanced { .. } => &["t_c", "t_h", "tau", "gamma_scale"],
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.numerics.initial_nodes < 5
            || self.numerics.max_nodes < self.numerics.initial_nodes
            || !(self.numerics.rel_tol > 0.0)
        {
            return Err("numerics: need initial_nodes >= 5, max_nodes >= initial_nodes, rel_tol > 0".into());
        }
        let allowed = self.sweepable_parameters();
        for axis in &self.sweep {
            if !allowed.contains(&axis.parameter.as_str()) {
                return Err(format!(
                    "sweep parameter '{}' not available for this engine (allowed: {})",
                    axis.parameter,
                    allowed.join(", ")
                ));
            }
            if axis.resolve()?.is_empty() {
                return Err(format!("sweep axis '{}' has no points", axis.parameter));
            }
        }
        if let EngineConfig::CustomDetailedBalanced { spec } = &self.engine {
            spec.h_base.build("h_base")?;
            spec.h_drive.build("h_drive")?;
        }
        Ok(())
    }

    /// Cartesian product of sweep axes; one empty assignment when no axes.
    fn sweep_points(&self) -> Result<Vec<Vec<(String, f64)>>, String> {
        let mut points: Vec<Vec<(String, f64)>> = vec![Vec::new()];
        for axis in &self.sweep {
            let values = axis.resolve()?;
            let mut next = Vec::with_capacity(points.len() * values.len());
            for base in &points {
                for v in &values {
                    let mut p = base.clone();
                    p.push((axis.parameter.clone(), *v));
                    next.push(p);
                }
            }
            points = next;
        }
        Ok(points)
    }
}

impl SweepAxis {
    fn resolve(&self) -> Result<Vec<f64>, String> {
        match (&self.values, &self.range) {
            (Some(v), None) => Ok(v.clone()),
            (None, Some(r)) => {
                if r.points == 0 || !(r.min.is_finite() && r.max.is_finite()) {
                    return Err(format!("axis '{}': empty or non-finite range", self.parameter));
                }
                if r.points == 1 {
                    return Ok(vec![r.min]);
                }
                let n = r.points;
                match r.scale.as_str() {
                    "linear" => Ok((0..n)
                        .map(|k| r.min + (r.max - r.min) * k as f64 / (n - 1) as f64)
                        .collect()),
                    "log" => {
                        if r.min <= 0.0 || r.max <= 0.0 {
                            return Err(format!(
                                "axis '{}': log scale needs positive endpoints",
                                self.parameter
                            ));
                        }
                        let (a, b) = (r.min.ln(), r.max.ln());
                        Ok((0..n)
                            .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
                            .collect())
                    }
                    other => Err(format!("axis '{}': unknown scale '{other}'", self.parameter)),
                }
            }
            _ => Err(format!(
                "axis '{}': exactly one of 'values' or 'range' required",
                self.parameter
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Sweep evaluation
// ---------------------------------------------------------------------------

/// Inputs + report for one sweep point; serialized whole into the sidecar.
#[derive(Debug, Clone, Serialize)]
struct Row {
    t_eq: Option<f64>,
    gamma: Option<f64>,
    t_c: f64,
    t_h: f64,
    omega0: Option<f64>,
    tau: f64,
    fock_dim: Option<usize>,
    report: EngineReport,
}

fn apply_oscillator_assignment(
    base: &OscillatorParams,
    assignment: &[(String, f64)],
) -> OscillatorParams {
    let mut p = *base;
    for (name, v) in assignment {
        match name.as_str() {
            "omega0" => p.omega0 = *v,
            "t_c" => p.t_c = *v,
            "t_h" => p.t_h = *v,
            "gamma" => p.gamma = *v,
            "tau" => p.tau = *v,
            _ => unreachable!("validated axis"),
        }
    }
    p
}

fn custom_model(spec: &CustomSpec, assignment: &[(String, f64)]) -> Result<FourierDrivenModel, CoreError> {
    let (mut t_c, mut t_h, mut tau, mut gamma_scale) = (spec.t_c, spec.t_h, spec.tau, 1.0);
    for (name, v) in assignment {
        match name.as_str() {
            "t_c" => t_c = *v,
            "t_h" => t_h = *v,
            "tau" => tau = *v,
            "gamma_scale" => gamma_scale = *v,
            _ => unreachable!("validated axis"),
        }
    }
    let h_base = spec.h_base.build("h_base").map_err(CoreError::Protocol)?;
    let h_drive = spec.h_drive.build("h_drive").map_err(CoreError::Protocol)?;
    let pi = std::f64::consts::PI;
    let alpha = Curve::with_derivative(
        move |t| (pi * t / tau).sin().powi(2),
        move |t| (pi / tau) * (2.0 * pi * t / tau).sin(),
    );
    let protocol = Protocol::new(tau, temperature_profile(t_c, t_h, alpha)?)?;
    let gamma_up: Vec<f64> = spec.gamma_up.iter().map(|g| g * gamma_scale).collect();
    FourierDrivenModel::new(h_base, h_drive, spec.coeffs.clone(), gamma_up, protocol)
}

fn evaluate_point(config: &Config, assignment: &[(String, f64)]) -> Result<Row, CoreError> {
    let grid = config.grid();
    match &config.engine {
        EngineConfig::OscillatorAnalytic { params } => {
            let p = apply_oscillator_assignment(params, assignment);
            let report = oscillator::evaluate(&p)?;
            Ok(Row {
                t_eq: Some(p.t_eq()),
                gamma: Some(p.gamma),
                t_c: p.t_c,
                t_h: p.t_h,
                omega0: Some(p.omega0),
                tau: p.tau,
                fock_dim: None,
                report,
            })
        }
        EngineConfig::OscillatorMatrix { params } => {
            let p = apply_oscillator_assignment(params, assignment);
            let (report, dim) = oscillator_matrix_report(&p, &grid)?;
            Ok(Row {
                t_eq: Some(p.t_eq()),
                gamma: Some(p.gamma),
                t_c: p.t_c,
                t_h: p.t_h,
                omega0: Some(p.omega0),
                tau: p.tau,
                fock_dim: Some(dim),
                report,
            })
        }
        EngineConfig::CustomDetailedBalanced { spec } => {
            let model = custom_model(spec, assignment)?;
            let report = complete_report(&model, &grid)?;
            let tau = model.protocol().tau();
            // Relaxation time from the smallest spectral gap along the cycle.
            let mut min_gap = f64::INFINITY;
            for k in 0..=8 {
                min_gap = min_gap.min(model.lindbladian(tau * k as f64 / 8.0)?.spectral_gap()?);
            }
            Ok(Row {
                t_eq: Some(1.0 / min_gap),
                gamma: None,
                t_c: model.protocol().t_c(),
                t_h: model.protocol().t_h(),
                omega0: None,
                tau,
                fock_dim: None,
                report,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

/// 17 significant digits, '.' decimal, locale-free; round-trips f64 exactly.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn csv_line(row: &Row) -> String {
    let r = &row.report;
    [
        fmt_opt(row.t_eq),
        fmt_opt(row.gamma),
        fmt(row.t_c),
        fmt(row.t_h),
        fmt_opt(row.omega0),
        fmt(row.tau),
        row.fock_dim.map(|d| d.to_string()).unwrap_or_default(),
        r.time_nodes.to_string(),
        fmt(r.p_w),
        fmt(r.p_w_adiabatic),
        fmt(r.j_q),
        fmt(r.delta_p_w),
        fmt(r.delta_i_w),
        fmt(r.ratio_2diw_over_dpw()),
        fmt(r.sigma_dot),
        fmt(r.w_ad),
        fmt(r.w_avg),
        fmt(r.eta),
        fmt(r.eta_c),
        fmt_opt(r.eta_ps),
        fmt_opt(r.eta_q),
        fmt_opt(r.eta_cl),
        fmt_opt(r.f_value),
        fmt_opt(r.tur_residual),
        r.engine_flag.to_string(),
    ]
    .join(",")
}

#[derive(Debug, Serialize)]
struct PointViolations {
    index: usize,
    messages: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    schema_version: u32,
    config: &'a Config,
    points: usize,
    violations: Vec<PointViolations>,
    rows: &'a [Row],
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("report.json")
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

/// All evaluation-stage core errors are numeric failures (exit 3); config
/// problems are caught before evaluation starts (exit 2), and invariant
/// violations are report-level, not errors (exit 4).
fn exit_code_for(_err: &CoreError) -> u8 {
    3
}

fn load_config(path: &Path) -> Result<Config, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let config: Config =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    config.validate()?;
    Ok(config)
}

fn cmd_run(config_path: &Path, out: Option<PathBuf>, jobs: Option<usize>) -> u8 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return 2;
        }
    };
    let out = match out.or_else(|| config.output.csv.clone()) {
        Some(p) => p,
        None => {
            eprintln!("config error: no output path (set output.csv or pass --out)");
            return 2;
        }
    };
    if let Some(n) = jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }
    let points = match config.sweep_points() {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return 2;
        }
    };

    // Evaluate concurrently, collect in sweep order for deterministic output.
    let results: Vec<Result<Row, CoreError>> =
        points.par_iter().map(|a| evaluate_point(&config, a)).collect();
    let mut rows = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                eprintln!("point {i} failed: {e}");
                return exit_code_for(&e);
            }
        }
    }

    let violations: Vec<PointViolations> = rows
        .iter()
        .enumerate()
        .filter_map(|(index, row)| {
            let messages = row.report.violations();
            (!messages.is_empty()).then_some(PointViolations { index, messages })
        })
        .collect();

    let mut csv = String::new();
    csv.push_str(CSV_PREAMBLE);
    csv.push('\n');
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&csv_line(row));
        csv.push('\n');
    }
    if let Err(e) = std::fs::write(&out, csv) {
        eprintln!("cannot write {}: {e}", out.display());
        return 3;
    }
    let violation_points = violations.len();
    let sidecar = Sidecar {
        schema_version: SCHEMA_VERSION,
        config: &config,
        points: rows.len(),
        violations,
        rows: &rows,
    };
    let sidecar_out = sidecar_path(&out);
    let js = match serde_json::to_string_pretty(&sidecar) {
        Ok(js) => js,
        Err(e) => {
            eprintln!("sidecar serialization failed: {e}");
            return 3;
        }
    };
    if let Err(e) = std::fs::write(&sidecar_out, js + "\n") {
        eprintln!("cannot write {}: {e}", sidecar_out.display());
        return 3;
    }
    if violation_points > 0 {
        eprintln!(
            "invariant violations at {violation_points} sweep point(s); see {}",
            sidecar_out.display()
        );
        return 4;
    }
    0
}

fn cmd_verify(suite: Option<String>, seed: u64, count: Option<usize>) -> u8 {
    let outcome = match &suite {
        Some(name) => verify::run_suite(name, seed, count).map(|s| verify::VerifyReport {
            seed,
            suites: vec![s],
        }),
        None => verify::run_all(seed),
    };
    match outcome {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            if report.passed() {
                0
            } else {
                1
            }
        }
        Err(CoreError::Domain(msg)) if msg.contains("unknown suite") => {
            eprintln!("{msg}");
            2
        }
        Err(e) => {
            eprintln!("verification aborted: {e}");
            exit_code_for(&e)
        }
    }
}

fn cmd_info(config_path: &Path) -> u8 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return 2;
        }
    };
    let points = match config.sweep_points() {
        Ok(p) => p.len(),
        Err(msg) => {
            eprintln!("config error: {msg}");
            return 2;
        }
    };
    let resolved = serde_json::json!({
        "config": config,
        "sweep_points": points,
        "csv_header": CSV_HEADER,
        "sidecar": config.output.csv.as_ref().map(|p| sidecar_path(p)),
    });
    println!("{}", serde_json::to_string_pretty(&resolved).unwrap());
    0
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Commands::Run { config, out, jobs } => cmd_run(&config, out, jobs),
        Commands::Verify { suite, seed, count } => cmd_verify(suite, seed, count),
        Commands::Info { config } => cmd_info(&config),
    };
    ExitCode::from(code)
}
