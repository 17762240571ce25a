//! Error metrics of estimate traces against simulation truth.

use std::fmt::Write as _;
use std::path::Path;

use grfmhe::sim::TruthSample;
use nalgebra::Vector2;

use crate::error::{HarnessError, Result};
use crate::io::{fmt, write_csv};
use crate::trace::{RowStatus, Trace};

/// Tolerance on negative normal forces when counting violations (N).
pub const NORMAL_FORCE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Velocity,
    /// Force of one foot, over ticks where that foot is in truth stance.
    Force(usize),
    /// All feet pooled, each over its own stance ticks.
    Forces,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rmse {
    /// Root mean square of the Euclidean error.
    pub value: f64,
    pub per_axis: Vector2<f64>,
    pub samples: usize,
}

impl Rmse {
    pub const NAN: Rmse = Rmse {
        value: f64::NAN,
        per_axis: Vector2::new(f64::NAN, f64::NAN),
        samples: 0,
    };

    pub fn from_errors(errors: &[Vector2<f64>]) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        let n = errors.len() as f64;
        let sq = errors.iter().fold(Vector2::zeros(), |acc, e| acc + e.component_mul(e)) / n;
        Some(Self {
            value: (sq.x + sq.y).sqrt(),
            per_axis: sq.map(f64::sqrt),
            samples: errors.len(),
        })
    }
}

/// Index of the truth sample nearest to `t` if within `max_skew`. Midpoints, up to
/// rounding of the two time grids, go to the later sample.
fn nearest(truth: &[TruthSample], t: f64, max_skew: f64) -> Option<usize> {
    let j = truth.partition_point(|s| s.t < t);
    let k = match j {
        0 => 0,
        j if j == truth.len() => j - 1,
        j => {
            let (a, b) = (truth[j - 1].t, truth[j].t);
            if (t - a) / (b - a) >= 0.5 - 1e-6 {
                j
            } else {
                j - 1
            }
        }
    };
    truth.get(k).filter(|s| (s.t - t).abs() <= max_skew).map(|_| k)
}

/// Half the truth sample spacing, with a little slack for rounding of the time grids.
fn max_skew(truth: &[TruthSample]) -> f64 {
    match truth {
        [a, b, ..] => 0.5 * (b.t - a.t) * (1.0 + 1e-6),
        _ => 0.0,
    }
}

/// Errors of `field` for every trace sample at or after `start` with a truth match.
pub fn errors(trace: &Trace, truth: &[TruthSample], field: Field, start: f64) -> Vec<Vector2<f64>> {
    let skew = max_skew(truth);
    let mut out = Vec::new();
    for row in trace.rows.iter().filter(|r| r.t >= start) {
        let Some(j) = nearest(truth, row.t, skew) else {
            continue;
        };
        let s = &truth[j];
        match field {
            Field::Velocity => out.push(row.velocity - Vector2::new(s.qdot[0], s.qdot[1])),
            Field::Force(foot) => {
                if s.contact[foot] {
                    out.push(row.forces[foot] - s.grf[foot]);
                }
            }
            Field::Forces => {
                for foot in (0..s.contact.len()).filter(|f| s.contact[*f]) {
                    out.push(row.forces[foot] - s.grf[foot]);
                }
            }
        }
    }
    out
}

/// RMSE of `field` over samples from `start` on. Fails when no sample overlaps the truth.
pub fn compute_rmse(trace: &Trace, truth: &[TruthSample], field: Field, start: f64) -> Result<Rmse> {
    if let Field::Force(foot) = field {
        if truth.first().is_some_and(|s| foot >= s.contact.len()) {
            return Err(HarnessError::Metrics(format!("no foot {foot} in truth")));
        }
    }
    Rmse::from_errors(&errors(trace, truth, field, start))
        .ok_or_else(|| HarnessError::Metrics(format!("{}: no samples of {field:?} overlap the truth after t = {start}", trace.name)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl Timing {
    pub fn from_samples(samples: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = samples.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let p99 = v[((v.len() as f64 * 0.99).ceil() as usize).clamp(1, v.len()) - 1];
        Some(Self {
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            p99_ms: p99,
            max_ms: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorMetrics {
    pub name: String,
    pub velocity: Rmse,
    pub force: Rmse,
    pub force_per_foot: Vec<Rmse>,
    /// Rows whose own or window forces break complementarity.
    pub violations: usize,
    /// Rows not solved cleanly (degraded QP or clamped covariance).
    pub degraded: usize,
    pub ticks: usize,
    pub timing: Option<Timing>,
    pub fault: Option<String>,
}

impl EstimatorMetrics {
    /// Metrics of one trace. Empty overlap is an error unless the trace already carries a fault.
    pub fn evaluate(trace: &Trace, truth: &[TruthSample], start: f64) -> Result<Self> {
        let n_feet = truth.first().map_or(0, |s| s.contact.len());
        let rmse = |field| match compute_rmse(trace, truth, field, start) {
            Ok(r) => Ok(r),
            Err(_) if trace.fault.is_some() => Ok(Rmse::NAN),
            Err(e) => Err(e),
        };
        Ok(Self {
            name: trace.name.clone(),
            velocity: rmse(Field::Velocity)?,
            force: rmse(Field::Forces)?,
            force_per_foot: (0..n_feet).map(|f| rmse(Field::Force(f))).collect::<Result<_>>()?,
            violations: trace.rows.iter().filter(|r| r.violates_contact(NORMAL_FORCE_TOL)).count(),
            degraded: trace.rows.iter().filter(|r| r.status != RowStatus::Solved).count(),
            ticks: trace.rows.len(),
            timing: Timing::from_samples(trace.rows.iter().map(|r| r.step_ms)),
            fault: trace.fault.clone(),
        })
    }

    fn metric_rows(&self, feet: &[String]) -> Vec<(String, String)> {
        let mut rows = vec![
            ("rmse_v".to_string(), fmt(self.velocity.value)),
            ("rmse_vx".to_string(), fmt(self.velocity.per_axis.x)),
            ("rmse_vz".to_string(), fmt(self.velocity.per_axis.y)),
            ("rmse_f".to_string(), fmt(self.force.value)),
            ("rmse_fx".to_string(), fmt(self.force.per_axis.x)),
            ("rmse_fz".to_string(), fmt(self.force.per_axis.y)),
        ];
        for (name, r) in feet.iter().zip(&self.force_per_foot) {
            rows.push((format!("rmse_f_{name}"), fmt(r.value)));
        }
        rows.extend([
            ("samples_v".to_string(), self.velocity.samples.to_string()),
            ("samples_f".to_string(), self.force.samples.to_string()),
            ("violations".to_string(), self.violations.to_string()),
            ("degraded".to_string(), self.degraded.to_string()),
            ("ticks".to_string(), self.ticks.to_string()),
            ("fault".to_string(), self.fault.clone().unwrap_or_else(|| "none".into())),
        ]);
        rows
    }
}

/// Metrics of every estimator in one benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub feet: Vec<String>,
    pub estimators: Vec<EstimatorMetrics>,
}

impl MetricsReport {
    pub fn evaluate(traces: &[Trace], truth: &[TruthSample], feet: Vec<String>, start: f64) -> Result<Self> {
        Ok(Self {
            feet,
            estimators: traces.iter().map(|t| EstimatorMetrics::evaluate(t, truth, start)).collect::<Result<_>>()?,
        })
    }

    pub fn get(&self, name: &str) -> Option<&EstimatorMetrics> {
        self.estimators.iter().find(|e| e.name == name)
    }

    pub fn has_fault(&self) -> bool {
        self.estimators.iter().any(|e| e.fault.is_some())
    }

    /// `report.csv`: one `estimator,metric,value` row per metric. Timing is left out so
    /// the file is reproducible.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = self.estimators.iter().flat_map(|e| {
            e.metric_rows(&self.feet)
                .into_iter()
                .map(|(metric, value)| vec![e.name.clone(), metric, value])
        });
        write_csv(path, &["estimator", "metric", "value"].map(String::from), rows)
    }

    /// `timing.csv`: per-step wall time statistics.
    pub fn write_timing(&self, path: &Path) -> Result<()> {
        let rows = self.estimators.iter().map(|e| {
            let t = e.timing.unwrap_or(Timing {
                mean_ms: f64::NAN,
                p99_ms: f64::NAN,
                max_ms: f64::NAN,
            });
            vec![e.name.clone(), fmt(t.mean_ms), fmt(t.p99_ms), fmt(t.max_ms)]
        });
        write_csv(path, &["estimator", "mean_ms", "p99_ms", "max_ms"].map(String::from), rows)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>10} {:>10} {:>10} {:>10} {:>6} {:>6} {:>9} {:>9}",
            "name", "rmse_v", "rmse_f", "rmse_fx", "rmse_fz", "viol", "degr", "mean_ms", "p99_ms"
        );
        for e in &self.estimators {
            let (mean, p99) = e.timing.map_or((f64::NAN, f64::NAN), |t| (t.mean_ms, t.p99_ms));
            let _ = writeln!(
                s,
                "{:<8} {:>10.4} {:>10.3} {:>10.3} {:>10.3} {:>6} {:>6} {:>9.3} {:>9.3}",
                e.name, e.velocity.value, e.force.value, e.force.per_axis.x, e.force.per_axis.y, e.violations, e.degraded, mean, p99
            );
            if let Some(f) = &e.fault {
                let _ = writeln!(s, "  fault: {f}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceRow;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn truth(n: usize, dt: f64, v: impl Fn(usize) -> Vector2<f64>, stance: impl Fn(usize) -> bool) -> Vec<TruthSample> {
        (0..n)
            .map(|k| {
                let vel = v(k);
                TruthSample {
                    t: k as f64 * dt,
                    q: DVector::zeros(7),
                    qdot: DVector::from_vec(vec![vel.x, vel.y, 0.0, 0.0, 0.0, 0.0, 0.0]),
                    contact: vec![stance(k), true],
                    grf: vec![vel * 100.0, Vector2::new(0.0, 60.0)],
                    accel_bias: Vector2::zeros(),
                }
            })
            .collect()
    }

    fn trace(truth: &[TruthSample], offset: Vector2<f64>) -> Trace {
        Trace {
            name: "t".into(),
            rows: truth
                .iter()
                .map(|s| TraceRow {
                    t: s.t,
                    position: Vector2::zeros(),
                    velocity: Vector2::new(s.qdot[0], s.qdot[1]) + offset,
                    bias: Vector2::zeros(),
                    forces: s.grf.iter().map(|f| f + offset).collect(),
                    contacts: s.contact.clone(),
                    status: RowStatus::Solved,
                    iterations: 0,
                    kkt: 0.0,
                    window_min_fz: 0.0,
                    window_max_swing_f: 0.0,
                    step_ms: 1.0,
                })
                .collect(),
            fault: None,
        }
    }

    #[test]
    fn identical_traces_have_zero_error() {
        let tr = truth(50, 0.002, |k| Vector2::new(k as f64, 1.0), |_| true);
        let r = compute_rmse(&trace(&tr, Vector2::zeros()), &tr, Field::Velocity, 0.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.samples, 50);
    }

    #[test]
    fn constant_offset_gives_pythagorean_rmse() {
        let tr = truth(50, 0.002, |k| Vector2::new((k as f64).sin(), 1.0), |k| k % 3 != 0);
        let est = trace(&tr, Vector2::new(0.3, 0.4));
        for field in [Field::Velocity, Field::Force(0), Field::Force(1), Field::Forces] {
            let r = compute_rmse(&est, &tr, field, 0.0).unwrap();
            assert!((r.value - 0.5).abs() < 1e-12, "{field:?}");
            assert!((r.per_axis - Vector2::new(0.3, 0.4)).amax() < 1e-12);
        }
    }

    #[test]
    fn force_rmse_uses_stance_ticks_only() {
        let tr = truth(60, 0.002, |_| Vector2::new(1.0, 0.0), |k| k < 20);
        let mut est = trace(&tr, Vector2::zeros());
        // Large errors during swing of foot 0 must not count.
        for row in est.rows.iter_mut().skip(20) {
            row.forces[0] = Vector2::new(1e3, 1e3);
        }
        let r = compute_rmse(&est, &tr, Field::Force(0), 0.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.samples, 20);
        assert_eq!(compute_rmse(&est, &tr, Field::Forces, 0.0).unwrap().samples, 80);
    }

    #[test]
    fn empty_overlap_is_an_error() {
        let tr = truth(10, 0.002, |_| Vector2::zeros(), |_| true);
        let mut est = trace(&tr, Vector2::zeros());
        for r in &mut est.rows {
            r.t += 1.0;
        }
        assert!(compute_rmse(&est, &tr, Field::Velocity, 0.0).is_err());
        let none = truth(10, 0.002, |_| Vector2::zeros(), |_| false);
        let est = trace(&none, Vector2::zeros());
        assert!(compute_rmse(&est, &none, Field::Force(0), 0.0).is_err());
        assert!(compute_rmse(&est, &none, Field::Force(7), 0.0).is_err());
    }

    #[test]
    fn join_takes_nearest_truth_sample_within_half_step() {
        // Estimates on a 5 ms grid against 2 ms truth: every estimate finds a partner.
        let tr = truth(501, 0.002, |k| Vector2::new(k as f64, 0.0), |_| true);
        let mut est = trace(&tr, Vector2::zeros());
        est.rows = (0..200)
            .map(|k| {
                let t = k as f64 * 0.005;
                let j = (t / 0.002 + 0.5).floor() as usize;
                TraceRow {
                    t,
                    velocity: Vector2::new(j as f64, 0.0),
                    ..est.rows[0].clone()
                }
            })
            .collect();
        let r = compute_rmse(&est, &tr, Field::Velocity, 0.0).unwrap();
        assert_eq!(r.samples, 200);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn midpoint_joins_the_later_truth_sample() {
        let tr = truth(4, 0.002, |k| Vector2::new(k as f64, 0.0), |_| true);
        let mut est = trace(&tr, Vector2::zeros());
        est.rows.truncate(1);
        est.rows[0].t = 0.003;
        est.rows[0].velocity = Vector2::new(2.0, 0.0);
        assert_eq!(compute_rmse(&est, &tr, Field::Velocity, 0.0).unwrap().value, 0.0);
    }

    #[test]
    fn timing_percentile() {
        let t = Timing::from_samples((1..=100).map(f64::from)).unwrap();
        assert_eq!(t.p99_ms, 99.0);
        assert_eq!(t.max_ms, 100.0);
        assert!((t.mean_ms - 50.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_streaming_mean_oracle(seed in any::<u64>(), n in 1usize..400, start in 0.0f64..0.5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let tr = truth(n, 0.002, |_| Vector2::zeros(), |_| true);
            let mut est = trace(&tr, Vector2::zeros());
            for r in &mut est.rows {
                r.velocity = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            }
            // Welford running mean of the squared error.
            let (mut mean, mut count) = (0.0f64, 0usize);
            for r in est.rows.iter().filter(|r| r.t >= start) {
                count += 1;
                mean += (r.velocity.norm_squared() - mean) / count as f64;
            }
            let got = compute_rmse(&est, &tr, Field::Velocity, start);
            if count == 0 {
                prop_assert!(got.is_err());
            } else {
                let got = got.unwrap();
                prop_assert_eq!(got.samples, count);
                prop_assert!((got.value - mean.sqrt()).abs() <= 1e-12 * mean.sqrt().max(1.0));
            }
        }
    }
}
