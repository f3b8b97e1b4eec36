//! `moebxii`: fit, sample and simulate the MOEBXII distribution.

mod dataset;
mod fit;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use moebxii::estimators::{MEstConfig, Method, ObreConfig};
use moebxii::numkit::OptimConfig;
use moebxii::sim::{self, FitSettings, Scenario};
use moebxii::Params;

use crate::dataset::Dataset;
use crate::fit::{run_fit, write_density_csv, FitOptions};

/// Overrides the Gauss–Legendre points per panel used by OBRE.
const QUAD_NODES_VAR: &str = "MOEBXII_QUAD_NODES";

#[derive(Parser, Debug)]
#[command(name = "moebxii", version, about = "Fit, sample and simulate the MOEBXII distribution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a dataset and print a JSON report.
    Fit(FitArgs),
    /// Draw a sample, one value per line.
    Sample(SampleArgs),
    /// Run a Monte Carlo bias/RMSE study.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Text file with one positive value per line; `#` starts a comment.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated subset of ml, ls, m, obre.
    #[arg(long, value_delimiter = ',', default_value = "ml,ls,m,obre")]
    methods: Vec<Method>,
    /// OBRE influence bound.
    #[arg(long, default_value_t = 3.0)]
    cb: f64,
    /// Tukey biweight cutoff.
    #[arg(long, default_value_t = 1.345)]
    b: f64,
    /// Stopping tolerance for the OBRE and M iterations.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Write fitted densities on a 512-point grid as CSV.
    #[arg(long)]
    density_out: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    c: f64,
    #[arg(long)]
    k: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Nine parameter triples at n = 25, 50, 100 with 1, 2, 4 outliers.
    #[arg(long, alias = "paper-grid", conflicts_with_all = ["alpha", "c", "k", "n", "outliers", "heavy_grid"])]
    study_grid: bool,
    /// Nine parameter triples at n = 50 with 4 outliers.
    #[arg(long, conflicts_with_all = ["alpha", "c", "k", "n", "outliers"])]
    heavy_grid: bool,
    #[arg(long, required_unless_present_any = ["study_grid", "heavy_grid"])]
    alpha: Option<f64>,
    #[arg(long, required_unless_present_any = ["study_grid", "heavy_grid"])]
    c: Option<f64>,
    #[arg(long, required_unless_present_any = ["study_grid", "heavy_grid"])]
    k: Option<f64>,
    #[arg(long, required_unless_present_any = ["study_grid", "heavy_grid"])]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    outliers: usize,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Table,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            // clap's first line carries the diagnostic; the rest is usage text.
            let text = e.render().to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn obre_config(c_b: f64, tol: f64) -> Result<ObreConfig> {
    let mut cfg = ObreConfig {
        c_b,
        tol,
        ..ObreConfig::default()
    };
    if let Ok(v) = std::env::var(QUAD_NODES_VAR) {
        cfg.quad.nodes = v
            .trim()
            .parse()
            .with_context(|| format!("{QUAD_NODES_VAR} must be a positive integer, got `{v}`"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    if a.methods.is_empty() {
        bail!("--methods is empty");
    }
    if !(a.b > 0.0) || !(a.tol > 0.0) {
        bail!("--b and --tol must be positive");
    }
    let data = Dataset::read(&a.input)?;
    let opts = FitOptions {
        optim: OptimConfig::default(),
        mest: MEstConfig {
            b: a.b,
            tol: a.tol,
            ..MEstConfig::default()
        },
        obre: obre_config(a.cb, a.tol)?,
    };
    let report = run_fit(&data, &a.methods, &opts)?;
    if let Some(path) = &a.density_out {
        let max = data.observations.iter().copied().fold(0.0, f64::max);
        write_density_csv(&report, max, output(Some(path))?)?;
    }
    let mut out = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let p = Params::new(a.alpha, a.c, a.k)?;
    let s = p.sample(a.n as usize, a.seed)?;
    let mut out = output(a.out.as_deref())?;
    for x in s.values() {
        writeln!(out, "{x}")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let scenarios = if a.study_grid {
        sim::study_grid(a.replications, a.seed)
    } else if a.heavy_grid {
        sim::heavy_grid(a.replications, a.seed)
    } else {
        // clap guarantees these are present without a grid flag.
        let (Some(alpha), Some(c), Some(k), Some(n)) = (a.alpha, a.c, a.k, a.n) else {
            bail!("--alpha, --c, --k and --n are required without a grid flag");
        };
        vec![Scenario::new(Params::new(alpha, c, k)?, n, a.outliers, a.replications, a.seed)?]
    };
    let settings = FitSettings {
        obre: obre_config(ObreConfig::default().c_b, ObreConfig::default().tol)?,
        ..FitSettings::default()
    };
    let results = sim::with_jobs(a.jobs, || {
        scenarios
            .iter()
            .map(|sc| sim::run_scenario_with(sc, &settings))
            .collect::<moebxii::Result<Vec<_>>>()
    })??;
    let mut out = output(a.out.as_deref())?;
    match a.format {
        Format::Csv => sim::write_csv(&results, &mut out)?,
        Format::Table => out.write_all(sim::format_table(&results).as_bytes())?,
    }
    out.flush()?;
    Ok(())
}
