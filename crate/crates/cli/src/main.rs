//! `shotnoise` command-line runner.

mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use shotnoise::Exec;

use crate::config::{ConfigError, RawConfig};
use crate::experiments::{load, Experiment, Plan};

#[derive(Parser)]
#[command(name = "shotnoise", version, about = "Heavy-tailed shot noise experiments from a TOML config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Keys can be overridden with SNP_SECTION__KEY.
    #[arg(long, short)]
    config: PathBuf,
    /// Seed; overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the JSON report on standard output.
    #[arg(long)]
    stdout: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in `[run] experiment`.
    Run(Common),
    /// Sample one path and write its trace.
    SimulatePath(Common),
    /// Tail ratio of the norm of a random-length sequence over a threshold ladder.
    TailRatio(Common),
    /// Ruin probability ratio against its closed-form constant.
    Ruin(Common),
    /// Monte Carlo risk indicators against their closed-form constants.
    Indicators(Common),
    /// Empirical spectral atoms of a random-length sequence.
    Spectral(Common),
    /// Extremal index in each requested mode.
    ExtremalIndex(Common),
    /// Indicator ratios over a threshold ladder with the reference constant.
    ConvergenceStudy(Common),
    /// Pairwise joint-exceedance diagnostic of the marginal sequence.
    H2Check(Common),
}

impl Command {
    fn split(self) -> (Option<Experiment>, Common) {
        match self {
            Command::Run(c) => (None, c),
            Command::SimulatePath(c) => (Some(Experiment::SimulatePath), c),
            Command::TailRatio(c) => (Some(Experiment::TailRatio), c),
            Command::Ruin(c) => (Some(Experiment::Ruin), c),
            Command::Indicators(c) => (Some(Experiment::Indicators), c),
            Command::Spectral(c) => (Some(Experiment::Spectral), c),
            Command::ExtremalIndex(c) => (Some(Experiment::ExtremalIndex), c),
            Command::ConvergenceStudy(c) => (Some(Experiment::ConvergenceStudy), c),
            Command::H2Check(c) => (Some(Experiment::H2Check), c),
        }
    }
}

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn plan(path: &Path, forced: Option<Experiment>, seed: Option<u64>) -> Result<Plan, ConfigError> {
    let file = path.display().to_string();
    let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
        file: file.clone(),
        origin: config::Origin::Unknown,
        key: String::new(),
        message: format!("cannot read config: {e}"),
    })?;
    let mut raw = RawConfig::parse(&file, &source)?;
    raw.apply_env(std::env::vars())?;
    load(&raw, forced, seed)
}

fn write_outputs(dir: &Path, files: &[(String, String)]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let (forced, common) = Cli::parse().command.split();
    let plan = match plan(&common.config, forced, common.seed) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let hash = plan.resolved.hash();
    eprintln!("# resolved config (scenario hash {hash})");
    eprintln!("{}", plan.resolved.to_toml());
    let mut output = toml::Table::new();
    output.insert("output".into(), toml::Value::Table(plan.output_table.clone()));
    eprint!("{}", toml::to_string(&output).unwrap_or_default());

    let exec = Exec::with_workers(common.workers);
    match exec.workers() {
        0 => eprintln!("running {} on all cores", plan.experiment.name()),
        n => eprintln!("running {} with {n} worker(s)", plan.experiment.name()),
    }
    let outcome = match plan.execute(&exec) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("numeric failure in scenario {hash}: {e}");
            return ExitCode::from(EXIT_NUMERIC);
        }
    };
    let report = json!({
        "experiment": plan.experiment.name(),
        "seed": plan.seed,
        "scenario_hash": hash,
        "config": plan.resolved.0,
        "results": outcome.results,
    });
    let text = serde_json::to_string_pretty(&report).expect("report values are plain JSON") + "\n";

    let dir = common.out.clone().unwrap_or_else(|| plan.output.dir.clone());
    let mut files = vec![(plan.output.report.clone(), text.clone())];
    if plan.output.csv {
        files.extend(outcome.csv);
    }
    if let Err(e) = write_outputs(&dir, &files) {
        eprintln!("cannot write outputs to {}: {e}", dir.display());
        return ExitCode::from(EXIT_IO);
    }
    for (name, _) in &files {
        eprintln!("wrote {}", dir.join(name).display());
    }
    if common.stdout {
        print!("{text}");
    }
    ExitCode::SUCCESS
}
