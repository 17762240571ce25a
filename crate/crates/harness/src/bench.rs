//! Simulate once, run every selected estimator on the same log, score them.

use std::path::Path;

use grfmhe::dynamics::RobotModel;
use grfmhe::sim::{synthesize_sensors, GaitController, SensorLog, Simulator};

use crate::config::{EstimatorKind, ScenarioConfig};
use crate::error::Result;
use crate::io;
use crate::metrics::MetricsReport;
use crate::run::{run_estimator, ticks};
use crate::trace::Trace;

pub const REPORT: &str = "report.csv";
pub const TIMING: &str = "timing.csv";
pub const SUMMARY: &str = "summary.txt";

/// Runs the gait controller in closed loop and synthesizes the sensor streams.
pub fn simulate(config: &ScenarioConfig) -> Result<(RobotModel<f64>, SensorLog)> {
    let model = config.model()?;
    let sim = Simulator::new(model.clone(), config.sim_config());
    let mut ctrl = GaitController::new(&model, config.gait_params())?;
    let initial = ctrl.initial_state(&model)?;
    let trace = sim.run(initial, &mut ctrl, config.scenario.duration)?;
    let log = synthesize_sensors(&trace, model.gravity, &config.noise_config(), &config.vo_config())?;
    Ok((model, log))
}

/// Runs the estimators in `kinds` on one log, in parallel when `parallel` is set.
/// Traces come back in the order of `kinds`.
pub fn estimate(config: &ScenarioConfig, model: &RobotModel<f64>, log: &SensorLog, kinds: &[EstimatorKind], parallel: bool) -> Result<Vec<Trace>> {
    let ticks = ticks(config, log)?;
    let run = |k: EstimatorKind| run_estimator(k, model, config, &ticks, &log.truth);
    if !parallel {
        return Ok(kinds.iter().map(|k| run(*k)).collect());
    }
    Ok(std::thread::scope(|s| {
        let handles: Vec<_> = kinds.iter().map(|k| (*k, s.spawn(move || run(*k)))).collect();
        handles
            .into_iter()
            .map(|(k, h)| {
                h.join().unwrap_or_else(|_| Trace {
                    name: k.name().to_string(),
                    rows: Vec::new(),
                    fault: Some("estimator thread panicked".into()),
                })
            })
            .collect()
    }))
}

pub fn foot_names(model: &RobotModel<f64>) -> Vec<String> {
    model.legs.iter().map(|l| l.name.clone()).collect()
}

pub fn evaluate(config: &ScenarioConfig, model: &RobotModel<f64>, log: &SensorLog, traces: &[Trace]) -> Result<MetricsReport> {
    MetricsReport::evaluate(traces, &log.truth, foot_names(model), config.scenario.eval_start)
}

#[derive(Clone, Debug)]
pub struct BenchOutput {
    pub model: RobotModel<f64>,
    pub log: SensorLog,
    pub traces: Vec<Trace>,
    pub report: MetricsReport,
}

/// The end-to-end benchmark. An estimator fault does not abort the run; it shows up
/// in the report.
pub fn run_benchmark(config: &ScenarioConfig, parallel: bool) -> Result<BenchOutput> {
    let (model, log) = simulate(config)?;
    let traces = estimate(config, &model, &log, &config.scenario.estimators, parallel)?;
    let report = evaluate(config, &model, &log, &traces)?;
    Ok(BenchOutput { model, log, traces, report })
}

/// Writes the report, timing table and human-readable summary into `dir`.
pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    io::create_dir(dir)?;
    report.write_csv(&dir.join(REPORT))?;
    report.write_timing(&dir.join(TIMING))?;
    let path = dir.join(SUMMARY);
    std::fs::write(&path, report.summary()).map_err(|source| crate::error::HarnessError::Io { path, source })
}

/// Writes the log, every trace and the report into `dir`.
pub fn write_bench(dir: &Path, out: &BenchOutput) -> Result<()> {
    io::write_log(dir, &out.log)?;
    for t in &out.traces {
        io::save_trace(dir, t)?;
    }
    write_report(dir, &out.report)
}
