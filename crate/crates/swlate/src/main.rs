use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use swlate::config::{issues_to_error, parse_config_unchecked, parse_learners_flag, MappingSource, Mode, RunConfig};
use swlate::{run, CliError, CliResult};

/// Survey-weighted LATE estimation, ATE bounds, and simulation studies.
#[derive(Parser)]
#[command(name = "swlate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate study A's LATE from study B's trial data.
    Estimate(Flags),
    /// Estimate bounds on study A's ATE.
    Bounds(Flags),
    /// Run a replication study on the simulation design.
    Simulate(Flags),
    /// Split one cohort into target and resampled current cohorts.
    CohortSplit(Flags),
    /// Write one simulated pair of cohorts as CSV.
    GenData(Flags),
    /// Check a config file and list every problem found.
    Validate {
        config: PathBuf,
        /// Mode to validate against; defaults to the file's own `mode`.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
}

#[derive(Args)]
struct Flags {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Preset (glm, ensemble, forest, additive) or a JSON learner spec.
    #[arg(long)]
    learners: Option<String>,
    #[arg(long, conflicts_with = "unweighted")]
    weighted: bool,
    #[arg(long)]
    unweighted: bool,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for replications (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    study_a: Option<PathBuf>,
    #[arg(long)]
    study_b: Option<PathBuf>,
    /// Key-value column mapping file.
    #[arg(long)]
    mapping: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown mode `{s}`"))
}

fn load_config(path: Option<&PathBuf>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
            parse_config_unchecked(&text).map_err(|issues| issues_to_error(&issues))
        }
    }
}

fn build_config(mode: Mode, f: &Flags) -> CliResult<RunConfig> {
    let mut c = load_config(f.config.as_ref())?;
    c.mode = Some(mode);
    if let Some(s) = f.seed {
        c.seed = s;
    }
    if let Some(k) = f.folds {
        c.crossfit.folds = Some(k);
    }
    if let Some(a) = f.alpha {
        c.alpha = a;
    }
    if let Some(l) = &f.learners {
        c.crossfit.learners = parse_learners_flag(l)?;
    }
    if f.weighted {
        c.weighted = true;
    }
    if f.unweighted {
        c.weighted = false;
    }
    if let Some(r) = f.reps {
        c.simulation.get_or_insert_with(Default::default).reps = r;
    }
    if let Some(o) = &f.out {
        c.out = o.clone();
    }
    if let Some(p) = &f.study_a {
        c.study_a = Some(p.clone());
    }
    if let Some(p) = &f.study_b {
        c.study_b = Some(p.clone());
    }
    if let Some(p) = &f.mapping {
        c.mapping = Some(MappingSource::File(p.clone()));
    }
    let issues = c.validate();
    if !issues.is_empty() {
        return Err(issues_to_error(&issues));
    }
    Ok(c)
}

fn execute(cli: Cli) -> CliResult<()> {
    let (mode, flags) = match &cli.command {
        Command::Estimate(f) => (Mode::Estimate, f),
        Command::Bounds(f) => (Mode::Bounds, f),
        Command::Simulate(f) => (Mode::Simulate, f),
        Command::CohortSplit(f) => (Mode::CohortSplit, f),
        Command::GenData(f) => (Mode::GenData, f),
        Command::Validate { config, mode } => {
            let mut c = load_config(Some(config))?;
            if let Some(m) = mode {
                c.mode = Some(*m);
            }
            let issues = c.validate();
            if !issues.is_empty() {
                return Err(issues_to_error(&issues));
            }
            println!("{}: valid {} config", config.display(), serde_json::to_string(&c.mode()).unwrap_or_default().trim_matches('"'));
            return Ok(());
        }
    };
    let config = build_config(mode, flags)?;
    let out = run(&config, flags.threads)?;
    print!("{}", out.summary);
    println!("wrote {}", out.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
