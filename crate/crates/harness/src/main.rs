use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grfmhe_harness::bench::{self, write_bench, write_report};
use grfmhe_harness::config::{Constraints, EstimatorKind, ScenarioConfig};
use grfmhe_harness::{io, HarnessError, Result, Trace};

#[derive(Parser)]
#[command(name = "grfmhe", version, about = "Simulate, estimate and score ground reaction force estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its sensor log.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run estimators on a persisted log and write their traces.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        est: EstimatorArgs,
        /// Directory holding the sensor log.
        #[arg(long)]
        log: PathBuf,
    },
    /// Score persisted traces against the log truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        #[arg(long)]
        log: PathBuf,
        /// Directory holding the traces; defaults to the log directory.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Simulate, estimate and score in one go.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        est: EstimatorArgs,
        /// Run estimators one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the scenario setting.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimatorArgs {
    /// Comma-separated subset of mhe, mhe_nc, dkf, mbo.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Run the `mhe` estimator without contact constraints.
    #[arg(long)]
    no_constraints: bool,
    #[arg(long)]
    window: Option<usize>,
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    let mut config = match &common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.scenario.seed = seed;
    }
    if let Some(out) = &common.out {
        config.scenario.output = out.clone();
    }
    Ok(config)
}

fn parse_kinds(list: &[String]) -> Result<Vec<EstimatorKind>> {
    list.iter().map(|s| s.parse()).collect()
}

fn apply(config: &mut ScenarioConfig, est: &EstimatorArgs) -> Result<()> {
    if let Some(list) = &est.estimators {
        config.scenario.estimators = parse_kinds(list)?;
    }
    if est.no_constraints {
        config.mhe.constraints = Constraints::None;
    }
    if let Some(w) = est.window {
        config.mhe.window_size = w;
    }
    config.validate()
}

fn faults(traces: &[Trace]) -> Result<()> {
    let failed: Vec<String> = traces
        .iter()
        .filter_map(|t| t.fault.as_ref().map(|f| format!("{}: {f}", t.name)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Estimator {
            name: "bench".into(),
            reason: failed.join("; "),
        })
    }
}

fn read_log(config: &ScenarioConfig, dir: &Path) -> Result<(grfmhe::Model, grfmhe::sim::SensorLog)> {
    let model = config.model()?;
    let log = io::read_log(dir, model.gravity)?;
    Ok((model, log))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let config = load(&common)?;
            let (_, log) = bench::simulate(&config)?;
            io::write_log(&config.scenario.output, &log)?;
            println!("wrote log to {}", config.scenario.output.display());
            Ok(())
        }
        Command::Estimate { common, est, log } => {
            let mut config = load(&common)?;
            apply(&mut config, &est)?;
            let out = common.out.clone().unwrap_or_else(|| log.clone());
            let (model, log) = read_log(&config, &log)?;
            let traces = bench::estimate(&config, &model, &log, &config.scenario.estimators, true)?;
            for t in &traces {
                io::save_trace(&out, t)?;
            }
            faults(&traces)
        }
        Command::Evaluate {
            common,
            estimators,
            log,
            traces,
        } => {
            let mut config = load(&common)?;
            if let Some(list) = &estimators {
                config.scenario.estimators = parse_kinds(list)?;
                config.validate()?;
            }
            let dir = traces.unwrap_or_else(|| log.clone());
            let out = common.out.clone().unwrap_or_else(|| dir.clone());
            let (model, log) = read_log(&config, &log)?;
            let traces = config
                .scenario
                .estimators
                .iter()
                .map(|k| io::load_trace(&dir, k.name()))
                .collect::<Result<Vec<_>>>()?;
            let report = bench::evaluate(&config, &model, &log, &traces)?;
            write_report(&out, &report)?;
            print!("{}", report.summary());
            faults(&traces)
        }
        Command::Bench { common, est, sequential } => {
            let mut config = load(&common)?;
            apply(&mut config, &est)?;
            let out = bench::run_benchmark(&config, !sequential)?;
            write_bench(&config.scenario.output, &out)?;
            print!("{}", out.report.summary());
            faults(&out.traces)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
