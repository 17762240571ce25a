//! Running one estimator over a sensor log.

use std::time::Instant;

use grfmhe::baselines::{Dkf, Mbo, MboInput};
use grfmhe::dynamics::{GeneralizedState, RobotModel};
use grfmhe::mhe::{build_ticks, MheEstimator, StateLayout, StepStatus, TickInput};
use grfmhe::sim::{SensorLog, TruthSample};
use nalgebra::{DVector, Vector2};

use crate::config::{EstimatorKind, ScenarioConfig};
use crate::error::{HarnessError, Result};
use crate::trace::{RowStatus, Trace, TraceRow};

/// Resamples the log onto the estimator tick grid.
pub fn ticks(config: &ScenarioConfig, log: &SensorLog) -> Result<Vec<TickInput<f64>>> {
    Ok(build_ticks(log, &config.frontend_config())?)
}

/// Truth configuration and rate linearly interpolated at `t`, clamped to the trace ends.
pub fn truth_state_at(truth: &[TruthSample], t: f64) -> Option<GeneralizedState<f64>> {
    let first = truth.first()?;
    let last = truth.last()?;
    if t <= first.t {
        return Some(GeneralizedState::new(first.q.clone(), first.qdot.clone()));
    }
    if t >= last.t {
        return Some(GeneralizedState::new(last.q.clone(), last.qdot.clone()));
    }
    let j = truth.partition_point(|s| s.t <= t);
    let (a, b) = (&truth[j - 1], &truth[j]);
    let s = (t - a.t) / (b.t - a.t);
    let lerp = |x: &DVector<f64>, y: &DVector<f64>| x * (1.0 - s) + y * s;
    Some(GeneralizedState::new(lerp(&a.q, &b.q), lerp(&a.qdot, &b.qdot)))
}

fn nan2() -> Vector2<f64> {
    Vector2::repeat(f64::NAN)
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs `kind` over the ticks. An estimator error ends the run and is recorded as
/// the trace fault; rows before it are kept.
pub fn run_estimator(
    kind: EstimatorKind,
    model: &RobotModel<f64>,
    config: &ScenarioConfig,
    ticks: &[TickInput<f64>],
    truth: &[TruthSample],
) -> Trace {
    let mut trace = Trace {
        name: kind.name().to_string(),
        rows: Vec::with_capacity(ticks.len()),
        fault: None,
    };
    if let Err(e) = fill(kind, model, config, ticks, truth, &mut trace.rows) {
        trace.fault = Some(e.to_string());
    }
    trace
}

fn fill(
    kind: EstimatorKind,
    model: &RobotModel<f64>,
    config: &ScenarioConfig,
    ticks: &[TickInput<f64>],
    truth: &[TruthSample],
    rows: &mut Vec<TraceRow>,
) -> Result<()> {
    let at = |t: &TickInput<f64>| {
        let time = t.t;
        move |e: grfmhe::Error| HarnessError::Estimator {
            name: kind.name().to_string(),
            reason: format!("t = {time:.4} s: {e}"),
        }
    };
    match kind {
        EstimatorKind::Mhe | EstimatorKind::MheNc => {
            let mut est = MheEstimator::new(model.clone(), config.mhe_config(kind))?;
            for t in ticks {
                let start = Instant::now();
                let out = est.step(t).map_err(at(t))?;
                let step_ms = ms(start);
                let d = &out.diagnostics;
                rows.push(TraceRow {
                    t: t.t,
                    position: out.position(),
                    velocity: out.velocity(),
                    bias: out.accel_bias(),
                    forces: out.forces.clone(),
                    contacts: t.contacts.clone(),
                    status: match d.status {
                        StepStatus::Solved => RowStatus::Solved,
                        StepStatus::Degraded(_) => RowStatus::Degraded,
                    },
                    iterations: d.iterations,
                    kkt: d.kkt.max(),
                    window_min_fz: d.window_min_normal_force,
                    window_max_swing_f: d.window_max_swing_force,
                    step_ms,
                });
            }
        }
        EstimatorKind::Dkf => {
            let mut dkf = Dkf::new(model.clone(), config.dkf_config())?;
            for t in ticks {
                let start = Instant::now();
                let out = dkf.step(t).map_err(at(t))?;
                let step_ms = ms(start);
                let x = &out.state;
                rows.push(TraceRow {
                    t: t.t,
                    position: Vector2::new(x[StateLayout::P], x[StateLayout::P + 1]),
                    velocity: out.velocity(),
                    bias: Vector2::new(x[StateLayout::B], x[StateLayout::B + 1]),
                    forces: out.forces.clone(),
                    contacts: t.contacts.clone(),
                    status: if out.clamped { RowStatus::Clamped } else { RowStatus::Solved },
                    iterations: 0,
                    kkt: f64::NAN,
                    window_min_fz: f64::NAN,
                    window_max_swing_f: f64::NAN,
                    step_ms,
                });
            }
        }
        EstimatorKind::Mbo => {
            // The observer is given the true base configuration and rate; joints,
            // torques and contacts come from the sensors.
            let mut mbo = Mbo::new(model.clone(), config.mbo_config())?;
            let n = model.n_joints();
            for t in ticks {
                let mut state = truth_state_at(truth, t.t).ok_or_else(|| HarnessError::Estimator {
                    name: kind.name().to_string(),
                    reason: "log has no truth samples".into(),
                })?;
                state.q.rows_mut(3, n).copy_from(&t.joints);
                state.qdot.rows_mut(3, n).copy_from(&t.joint_rates);
                let input = MboInput {
                    t: t.t,
                    state,
                    torques: t.torques.clone(),
                    contacts: t.contacts.clone(),
                };
                let start = Instant::now();
                let out = mbo.step(&input).map_err(at(t))?;
                let step_ms = ms(start);
                rows.push(TraceRow {
                    t: t.t,
                    position: nan2(),
                    velocity: nan2(),
                    bias: nan2(),
                    forces: out.forces.clone(),
                    contacts: t.contacts.clone(),
                    status: RowStatus::Solved,
                    iterations: 0,
                    kkt: f64::NAN,
                    window_min_fz: f64::NAN,
                    window_max_swing_f: f64::NAN,
                    step_ms,
                });
            }
        }
    }
    Ok(())
}
