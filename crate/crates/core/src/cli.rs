//! Command-line front end. [`run`] does all the work and returns the text for
//! stdout plus a [`RunManifest`]; the binary only prints and sets the exit code.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{self, Config};
use crate::format::{parse_number, sig9};
use crate::paths::VectorPath;
use crate::ratefn::{solve_overflow, tandem_rate, OverflowProblem, RateSolution, SolverOptions};
use crate::reflection::{reflect, reflect_fixedpoint_oracle, ReflectionSolution};
use crate::simulate::{self, decay_field, estimate_overflow, McConfig, McEstimate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fluidnet", version, about = "Stochastic fluid networks with Weibull-type inputs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the network constraints and stability conditions.
    Validate { config: PathBuf },
    /// Reflect an input path through the network.
    Reflect {
        config: PathBuf,
        path_file: PathBuf,
        /// Also run the grid fixed-point oracle with this many steps.
        #[arg(long)]
        oracle_grid: Option<usize>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Solve the overflow rate problem for one or more thresholds.
    Rate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        b: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<f64>,
        #[arg(long, default_value_t = 41)]
        grid: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Closed-form rate for the two-node tandem with b = (0, 1).
    Tandem {
        config: PathBuf,
        #[arg(long)]
        y: f64,
    },
    /// Monte Carlo estimate of the overflow probability and its decay.
    Simulate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        b: Vec<f64>,
        #[arg(long)]
        y: f64,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        n: Vec<u64>,
        #[arg(long, default_value_t = 100_000)]
        reps: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rate values next to Monte Carlo decay estimates.
    Compare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        b: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        n: Vec<u64>,
        #[arg(long, default_value_t = 100_000)]
        reps: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 41)]
        grid: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Reflect { .. } => "reflect",
            Command::Rate { .. } => "rate",
            Command::Tandem { .. } => "tandem",
            Command::Simulate { .. } => "simulate",
            Command::Compare { .. } => "compare",
        }
    }

    fn config_path(&self) -> &Path {
        match self {
            Command::Validate { config }
            | Command::Reflect { config, .. }
            | Command::Rate { config, .. }
            | Command::Tandem { config, .. }
            | Command::Simulate { config, .. }
            | Command::Compare { config, .. } => config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::new(EXIT_OTHER, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str, outputs: &mut Vec<String>) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::new(EXIT_OTHER, format!("{}: {e}", path.display())))?;
    outputs.push(path.display().to_string());
    Ok(())
}

fn load(text: &str, path: &Path) -> CliResult<Config> {
    config::parse(text).map_err(|e| CliError::new(EXIT_INVALID, format!("{}: {e}", path.display())))
}

fn ensure_valid(cfg: &Config) -> CliResult<()> {
    let report = cfg.network.validate();
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::new(EXIT_INVALID, format!("invalid network\n{report}")))
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|&x| sig9(x)).collect::<Vec<_>>().join(", ")
}

/// Runs one command. `threads` caps the Monte Carlo worker count.
pub fn run(cli: &Cli, threads: Option<usize>) -> CliResult<Outcome> {
    let started = Instant::now();
    let cfg_path = cli.command.config_path();
    let text = read(cfg_path)?;
    let mut manifest = RunManifest {
        command: cli.command.name().to_string(),
        config_hash: config::config_hash(&text),
        seed: None,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: 0.0,
        outputs: vec![],
    };
    let cfg = load(&text, cfg_path)?;
    let mut out = String::new();
    let mut code = EXIT_OK;

    match &cli.command {
        Command::Validate { .. } => {
            let report = cfg.network.validate();
            out.push_str(&report.to_string());
            if !report.passed() {
                code = EXIT_INVALID;
            }
        }
        Command::Reflect {
            path_file,
            oracle_grid,
            csv,
            ..
        } => {
            ensure_valid(&cfg)?;
            let x: VectorPath = read(path_file)?
                .parse()
                .map_err(|e| CliError::new(EXIT_INVALID, format!("{}: {e}", path_file.display())))?;
            let refl = cfg.network.reflection_matrix().map_err(|e| CliError::new(EXIT_INVALID, e))?;
            let sol = reflect(&refl, &x).map_err(|e| CliError::new(EXIT_OTHER, e))?;
            let _ = writeln!(out, "Z(T): {}", join(sol.terminal_content()));
            let _ = writeln!(out, "Y(T): {}", join(sol.terminal_regulator()));
            let _ = writeln!(out, "breakpoints: {}", sol.times().len());
            if let Some(n) = oracle_grid {
                let oracle = reflect_fixedpoint_oracle(&refl, &x, *n).map_err(|e| CliError::new(EXIT_OTHER, e))?;
                let _ = writeln!(out, "oracle sup difference: {}", sig9(oracle.sup_difference(&sol)));
                let _ = writeln!(out, "oracle iterations: {}", oracle.iterations);
            }
            if let Some(path) = csv {
                write(path, &reflection_csv(&sol), &mut manifest.outputs)?;
            }
        }
        Command::Rate { b, y, grid, csv, .. } => {
            ensure_valid(&cfg)?;
            let rows = rate_rows(&cfg, b, y, *grid)?;
            for (y, s) in &rows {
                out.push_str(&rate_report(*y, s));
            }
            if rows.iter().any(|(_, s)| !s.feasible) {
                code = EXIT_INFEASIBLE;
            }
            if let Some(path) = csv {
                write(path, &rate_csv(&rows), &mut manifest.outputs)?;
            }
        }
        Command::Tandem { y, .. } => {
            ensure_valid(&cfg)?;
            let p = OverflowProblem::new(cfg.network.clone(), vec![0.0, 1.0], *y, cfg.horizon)
                .map_err(|e| CliError::new(EXIT_INVALID, e))?;
            let t = tandem_rate(&p).map_err(|e| CliError::new(EXIT_INVALID, e))?;
            let _ = writeln!(out, "regime: {}", t.regime.number());
            let _ = writeln!(out, "case: {}", t.case);
            let _ = writeln!(out, "value: {}", sig9(t.solution.value));
            let _ = writeln!(out, "x: {}", join(&t.solution.x_star));
            let _ = writeln!(out, "u: {}", join(&t.solution.u_star));
        }
        Command::Simulate {
            b,
            y,
            n,
            reps,
            seed,
            csv,
            ..
        } => {
            ensure_valid(&cfg)?;
            manifest.seed = Some(*seed);
            let mc = McConfig {
                n_values: n.clone(),
                reps: *reps,
                seed: *seed,
                b: b.clone(),
                y: *y,
                horizon: cfg.horizon,
            };
            let est = estimate_overflow(&cfg.network, &mc, threads).map_err(|e| CliError::new(EXIT_OTHER, e))?;
            let table = simulate::write_csv(&est);
            out.push_str(&table);
            if let Some(path) = csv {
                write(path, &table, &mut manifest.outputs)?;
            }
        }
        Command::Compare {
            b,
            y,
            n,
            reps,
            seed,
            grid,
            csv,
            ..
        } => {
            ensure_valid(&cfg)?;
            manifest.seed = Some(*seed);
            let table = compare(&cfg, b, y, n, *reps, *seed, *grid, threads)?;
            let text = table.to_csv();
            out.push_str(&text);
            if table.rates.iter().any(|s| !s.feasible) {
                code = EXIT_INFEASIBLE;
            }
            if let Some(path) = csv {
                write(path, &text, &mut manifest.outputs)?;
            }
        }
    }
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    Ok(Outcome {
        code,
        stdout: out,
        manifest,
    })
}

/// `t, Z_1..Z_d, Y_1..Y_d` at every breakpoint; a jump epoch gets a row for
/// the left limit followed by a row for the value.
pub fn reflection_csv(sol: &ReflectionSolution) -> String {
    let d = sol.dim();
    let mut s = String::from("t");
    for i in 1..=d {
        let _ = write!(s, ",Z_{i}");
    }
    for i in 1..=d {
        let _ = write!(s, ",Y_{i}");
    }
    s.push('\n');
    let row = |s: &mut String, t: f64, z: &[f64], y: &[f64]| {
        s.push_str(&sig9(t));
        for v in z.iter().chain(y) {
            s.push(',');
            s.push_str(&sig9(*v));
        }
        s.push('\n');
    };
    for (k, &t) in sol.times().iter().enumerate() {
        if k > 0 && sol.content_left_at(k) != sol.content_at(k) {
            row(&mut s, t, sol.content_left_at(k), sol.regulator_at(k));
        }
        row(&mut s, t, sol.content_at(k), sol.regulator_at(k));
    }
    s
}

fn rate_rows(cfg: &Config, b: &[f64], ys: &[f64], grid: usize) -> CliResult<Vec<(f64, RateSolution)>> {
    let opts = SolverOptions::with_grid(grid);
    ys.iter()
        .map(|&y| {
            let p = OverflowProblem::new(cfg.network.clone(), b.to_vec(), y, cfg.horizon)
                .map_err(|e| CliError::new(EXIT_INVALID, e))?;
            let s = solve_overflow(&p, &opts).map_err(|e| CliError::new(EXIT_OTHER, e))?;
            Ok((y, s))
        })
        .collect()
}

fn rate_report(y: f64, s: &RateSolution) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "y: {}", sig9(y));
    let _ = writeln!(out, "value: {}", sig9(s.value));
    let _ = writeln!(out, "feasible: {}", s.feasible);
    if s.feasible {
        let _ = writeln!(out, "method: {}", s.method);
        let _ = writeln!(out, "x: {}", join(&s.x_star));
        let _ = writeln!(out, "u: {}", join(&s.u_star));
        let _ = writeln!(out, "achieved: {}", sig9(s.achieved));
    }
    out
}

/// Columns `y, value, feasible, x_1..x_d, u_1..u_d`.
pub fn rate_csv(rows: &[(f64, RateSolution)]) -> String {
    let d = rows.first().map_or(0, |(_, s)| s.x_star.len());
    let mut s = String::from("y,value,feasible");
    for i in 1..=d {
        let _ = write!(s, ",x_{i}");
    }
    for i in 1..=d {
        let _ = write!(s, ",u_{i}");
    }
    s.push('\n');
    for (y, r) in rows {
        let _ = write!(s, "{},{},{}", sig9(*y), sig9(r.value), r.feasible);
        for v in r.x_star.iter().chain(&r.u_star) {
            let _ = write!(s, ",{}", sig9(*v));
        }
        s.push('\n');
    }
    s
}

/// A parsed CSV table: header plus string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> CliResult<Table> {
        let bad = |e: csv::Error| CliError::new(EXIT_OTHER, format!("csv: {e}"));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(bad)?.iter().map(String::from).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()).map_err(bad))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k].as_str()).collect())
    }

    /// Numeric view; `>=x` cells read as `x`, `true`/`false` as 1/0.
    pub fn numbers(&self) -> CliResult<Vec<Vec<f64>>> {
        self.rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| {
                        let c = c.strip_prefix(">=").unwrap_or(c);
                        match c {
                            "true" => Some(1.0),
                            "false" => Some(0.0),
                            _ => parse_number(c),
                        }
                        .ok_or_else(|| CliError::new(EXIT_OTHER, format!("bad number `{c}`")))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Rate values and per-`n` Monte Carlo decay estimates for each threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub ys: Vec<f64>,
    pub rates: Vec<RateSolution>,
    pub estimates: Vec<Vec<McEstimate>>,
    pub n_values: Vec<u64>,
}

impl CompareTable {
    /// Columns `y, V, decay_n<n>...`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("y,V");
        for n in &self.n_values {
            let _ = write!(s, ",decay_n{n}");
        }
        s.push('\n');
        for ((y, r), est) in self.ys.iter().zip(&self.rates).zip(&self.estimates) {
            let _ = write!(s, "{},{}", sig9(*y), sig9(r.value));
            for e in est {
                let _ = write!(s, ",{}", decay_field(e));
            }
            s.push('\n');
        }
        s
    }
}

#[allow(clippy::too_many_arguments)]
pub fn compare(
    cfg: &Config,
    b: &[f64],
    ys: &[f64],
    n_values: &[u64],
    reps: u64,
    seed: u64,
    grid: usize,
    threads: Option<usize>,
) -> CliResult<CompareTable> {
    let rows = rate_rows(cfg, b, ys, grid)?;
    let mut estimates = Vec::with_capacity(ys.len());
    for &y in ys {
        let mc = McConfig {
            n_values: n_values.to_vec(),
            reps,
            seed,
            b: b.to_vec(),
            y,
            horizon: cfg.horizon,
        };
        estimates.push(estimate_overflow(&cfg.network, &mc, threads).map_err(|e| CliError::new(EXIT_OTHER, e))?);
    }
    Ok(CompareTable {
        ys: ys.to_vec(),
        rates: rows.into_iter().map(|(_, s)| s).collect(),
        estimates,
        n_values: n_values.to_vec(),
    })
}

/// Entry point used by the binary: parses `args`, runs, prints, returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match run(&cli, simulate::threads_from_env()) {
        Ok(o) => {
            print!("{}", o.stdout);
            eprintln!("{}", serde_json::to_string(&o.manifest).expect("manifest serializes"));
            o.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
