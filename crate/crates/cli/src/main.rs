//! `nlaccel` command line: run experiments, build iteration tables and dump
//! numerical ranges.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nlaccel::bench::{self, BenchError, ExperimentConfig, ReferenceCache, RunOutput};
use nlaccel::numrange;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// `println!` that ignores a closed stdout.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "nlaccel",
    version,
    about = "Nonlinear acceleration experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write its reports.
    Run {
        config: PathBuf,
        /// Config overrides as `--section.key value` pairs.
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "OVERRIDES"
        )]
        overrides: Vec<String>,
    },
    /// Run every config matching a glob and print iterations to tolerance.
    Table {
        pattern: String,
        /// Comma-separated tolerances on f - f*.
        #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-4,1e-6")]
        tol: Vec<f64>,
        /// Also write reports here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "OVERRIDES"
        )]
        overrides: Vec<String>,
    },
    /// Sample the numerical range of an operator, e.g. `nesterov:ratio=4`.
    Range {
        operator: String,
        #[arg(long, default_value_t = numrange::DEFAULT_ANGLES)]
        angles: usize,
        /// Write `theta,re,im` here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::NumRange(_) => Failure::Numerical(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| Failure::Config(format!("expected `--section.key`, got `{flag}`")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Failure::Config(format!("missing value for `--{key}`")))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((key, value));
    }
    Ok(out)
}

fn report_run(out: &RunOutput) {
    let last = out.log.last();
    out!(
        "{}: {} iterations, f = {}, resid = {}{}",
        out.name,
        last.map_or(0, |r| r.iter),
        last.map_or(f64::NAN, |r| r.f),
        last.map_or(f64::NAN, |r| r.resid),
        match &out.log.termination {
            Some(t) => format!(" ({t})"),
            None => String::new(),
        }
    );
}

fn cmd_run(config: &Path, overrides: &[String]) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config, &parse_overrides(overrides)?)?;
    let out = bench::run_experiment(&cfg)?;
    let files = bench::emit_reports(std::slice::from_ref(&out), &[], &cfg.run.output_dir)?;
    report_run(&out);
    for f in files {
        out!("wrote {}", f.display());
    }
    if out.aborted {
        return Err(Failure::Numerical(
            out.log.termination.unwrap_or_else(|| "run aborted".into()),
        ));
    }
    Ok(())
}

fn cmd_table(
    pattern: &str,
    tol: &[f64],
    out_dir: Option<&Path>,
    overrides: &[String],
) -> Result<(), Failure> {
    let overrides = parse_overrides(overrides)?;
    let paths = glob::glob(pattern)
        .map_err(|e| Failure::Config(format!("bad pattern `{pattern}`: {e}")))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Config(e.to_string()))?;
    if paths.is_empty() {
        return Err(Failure::Config(format!("no config matches `{pattern}`")));
    }
    let configs = paths
        .iter()
        .map(|p| ExperimentConfig::load(p, &overrides))
        .collect::<Result<Vec<_>, _>>()?;
    let key = configs[0].problem_hash();
    if configs.iter().any(|c| c.problem_hash() != key) {
        return Err(Failure::Config(
            "configs in a table must share the problem and seed".into(),
        ));
    }
    let longest = configs
        .iter()
        .max_by_key(|c| c.run.iterations)
        .expect("nonempty");
    let mut cache = ReferenceCache::default();
    let reference = cache.get_or_compute(longest)?;
    let outputs = bench::run_all(&configs)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let logs: Vec<_> = outputs
        .iter()
        .map(|o| (o.name.clone(), o.log.clone()))
        .collect();
    let observed = bench::min_value(&logs.iter().map(|(_, l)| l.clone()).collect::<Vec<_>>());
    let table = bench::tolerance_table(&logs, tol, reference.min(observed));
    out!("f* = {:.12e}\n", table.f_opt);
    let _ = write!(std::io::stdout(), "{}", table.to_markdown());
    if let Some(dir) = out_dir {
        bench::emit_reports(&outputs, &[], dir)?;
        std::fs::write(dir.join("table.md"), table.to_markdown())
            .map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    }
    if let Some(bad) = outputs.iter().find(|o| o.aborted) {
        return Err(Failure::Numerical(format!(
            "{}: {}",
            bad.name,
            bad.log.termination.as_deref().unwrap_or("aborted")
        )));
    }
    Ok(())
}

fn cmd_range(operator: &str, angles: usize, out: Option<&Path>) -> Result<(), Failure> {
    if angles < numrange::MIN_ANGLES {
        return Err(Failure::Config(format!(
            "--angles must be at least {}",
            numrange::MIN_ANGLES
        )));
    }
    let spec: bench::OperatorSpec = operator.parse()?;
    let op = spec.build()?;
    let boundary =
        numrange::boundary_points(&op.g, angles).map_err(|e| Failure::Numerical(e.to_string()))?;
    let mut csv = Vec::new();
    boundary
        .write_csv(&mut csv)
        .map_err(|e| Failure::Numerical(e.to_string()))?;
    match out {
        Some(path) => {
            std::fs::write(path, &csv)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let _ = std::io::stdout().write_all(&csv);
        }
    }
    eprintln!(
        "dim = {}, max re = {:.12}, radius = {:.12}, area = {:.6e}, feasible = {}",
        op.g.rows(),
        boundary.max_real,
        boundary.radius(),
        boundary.area(),
        numrange::acceleration_feasible(&boundary)
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, overrides } => cmd_run(config, overrides),
        Command::Table {
            pattern,
            tol,
            out,
            overrides,
        } => cmd_table(pattern, tol, out.as_deref(), overrides),
        Command::Range {
            operator,
            angles,
            out,
        } => cmd_range(operator, *angles, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
