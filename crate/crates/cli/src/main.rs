//! `nxwlan`: runs scenarios and the built-in experiments, writes CSV results.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use nxwlan_core::sim::experiments::{experiment1, experiment2, ExperimentParams};
use nxwlan_core::sim::{run, Metrics, Mode, Scenario, ScenarioError};
use nxwlan_core::steering::{calc_probe_response_tx_powers, MacMode, ProbeSnapshot, SteeringParams};

#[derive(Parser)]
#[command(name = "nxwlan", version, about = "Neighborhood-extensible WLAN simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run(RunArgs),
    /// Extended coverage experiment, both modes.
    Exp1(ExpArgs),
    /// Load balancing experiment, both modes.
    Exp2(ExpArgs),
    /// Print the steering decision for one probe snapshot.
    Steer {
        #[arg(long)]
        snapshot: PathBuf,
        /// Steering parameters; defaults apply when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, env = "NXWLAN_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the number of repetitions per location.
    #[arg(long)]
    repetitions: Option<u32>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct ExpArgs {
    #[command(flatten)]
    common: Common,
    /// Equal-airtime MAC instead of DCF packet fairness.
    #[arg(long)]
    txop: bool,
}

/// Failure classes, mapped to exit codes.
enum Failure {
    Input(anyhow::Error),
    Io(anyhow::Error),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Input(e.into())
    }
}

fn io<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Io(e.into())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).map_err(io)
}

fn write_results(dir: &Path, metrics: &Metrics) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).map_err(io)?;
    for (name, body) in [("throughput.csv", metrics.throughput_csv()), ("summary.csv", metrics.summary_csv())] {
        let path = dir.join(name);
        fs::write(&path, body).with_context(|| format!("cannot write {}", path.display())).map_err(io)?;
    }
    Ok(())
}

fn run_scenario(args: RunArgs) -> Result<(), Failure> {
    let text = read(&args.scenario)?;
    let mut sc = Scenario::from_json(&text)
        .map_err(|e| Failure::Input(anyhow::Error::new(e).context(args.scenario.display().to_string())))?;
    if let Some(mode) = args.mode {
        sc.mode = mode;
    }
    if let Some(r) = args.common.repetitions {
        sc.schedule.repetitions = r;
    }
    let metrics = run(&sc, args.common.seed)?;
    write_results(&args.common.out, &metrics)
}

fn run_experiment(build: fn(&ExperimentParams) -> Scenario, args: ExpArgs) -> Result<(), Failure> {
    let mut params = ExperimentParams::default();
    if let Some(r) = args.common.repetitions {
        params.repetitions = r;
    }
    if args.txop {
        params.mac_mode = MacMode::Txop;
    }
    let mut metrics = Metrics::default();
    for mode in [Mode::Baseline, Mode::Nxwlan] {
        metrics = metrics.merge(run(&build(&params.clone().with_mode(mode)), args.common.seed)?);
    }
    write_results(&args.common.out, &metrics)
}

fn steer(snapshot: &Path, params: Option<&Path>) -> Result<(), Failure> {
    let snap: ProbeSnapshot = serde_json::from_str(&read(snapshot)?)
        .with_context(|| format!("invalid snapshot {}", snapshot.display()))
        .map_err(Failure::Input)?;
    let params: SteeringParams = match params {
        Some(p) => serde_json::from_str(&read(p)?)
            .with_context(|| format!("invalid steering parameters {}", p.display()))
            .map_err(Failure::Input)?,
        None => SteeringParams::default(),
    };
    params.validate().map_err(|e| Failure::Input(e.into()))?;
    let decision = calc_probe_response_tx_powers(&params, &snap).map_err(|e| Failure::Input(e.into()))?;
    println!("{}", serde_json::to_string_pretty(&decision).expect("decision serializes"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run_scenario(args),
        Command::Exp1(args) => run_experiment(experiment1, args),
        Command::Exp2(args) => run_experiment(experiment2, args),
        Command::Steer { snapshot, params } => steer(&snapshot, params.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
