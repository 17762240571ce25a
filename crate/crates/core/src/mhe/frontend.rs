//! Resamples raw sensor streams onto the estimator tick grid, runs the orientation
//! filter, and spreads visual-odometry increments over ticks.

use nalgebra::{DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::orientation::{OrientationEstimate, OrientationFilter, OrientationNoise};
use crate::scalar::{lit, rot2, Real};
use crate::sim::SensorLog;
use crate::sim::sensors::{EncoderSample, ImuSample, VoIncrement};

/// Per-tick body-frame displacement `R̂_kᵀ (p_{k+1} - p_k)` for the pair starting at `tick`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoPair<T: Real> {
    pub tick: usize,
    pub displacement: Vector2<T>,
}

/// Everything the estimators consume at one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct TickInput<T: Real> {
    pub index: usize,
    pub t: T,
    /// Specific force averaged over the interval ending at this tick.
    pub accel: Vector2<T>,
    /// Raw gyro averaged over the same interval.
    pub gyro: T,
    /// Orientation filter output at this tick.
    pub pitch: T,
    pub pitch_variance: T,
    /// Bias-corrected pitch rate.
    pub pitch_rate: T,
    pub joints: DVector<T>,
    pub joint_rates: DVector<T>,
    pub torques: DVector<T>,
    pub contacts: Vec<bool>,
    /// VO pair measurements that became available at this tick.
    pub vo: Vec<VoPair<T>>,
}

impl TickInput<f64> {
    pub fn cast<T: Real>(&self) -> TickInput<T> {
        let v = |x: &DVector<f64>| x.map(lit::<T>);
        TickInput {
            index: self.index,
            t: lit(self.t),
            accel: self.accel.map(lit::<T>),
            gyro: lit(self.gyro),
            pitch: lit(self.pitch),
            pitch_variance: lit(self.pitch_variance),
            pitch_rate: lit(self.pitch_rate),
            joints: v(&self.joints),
            joint_rates: v(&self.joint_rates),
            torques: v(&self.torques),
            contacts: self.contacts.clone(),
            vo: self
                .vo
                .iter()
                .map(|p| VoPair {
                    tick: p.tick,
                    displacement: p.displacement.map(lit::<T>),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub rate_hz: f64,
    pub orientation: OrientationNoise<f64>,
    pub initial_pitch_std: f64,
    pub initial_gyro_bias_std: f64,
    /// Feed VO rotation increments to the orientation filter.
    pub use_vo_rotation: bool,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            rate_hz: 200.0,
            // Walking accelerations tilt the measured gravity direction; trust it weakly.
            orientation: OrientationNoise {
                accel_pitch: 1.0,
                ..OrientationNoise::default()
            },
            initial_pitch_std: 0.1,
            initial_gyro_bias_std: 0.01,
            use_vo_rotation: true,
        }
    }
}

/// Index of the tick nearest to `t`, ties toward the earlier tick.
pub fn nearest_tick(t: f64, t0: f64, dt: f64) -> Option<usize> {
    let x = (t - t0) / dt;
    let k = (x - 0.5).ceil();
    if k < 0.0 {
        // Only the half-open band before t0 rounds up to tick 0.
        return (x >= -0.5).then_some(0);
    }
    Some(k as usize)
}

/// Mean of piecewise-constant samples over `(a, b]`; sample `j` covers `(t_{j-1}, t_j]`.
fn interval_mean(imu: &[ImuSample], a: f64, b: f64) -> Option<(Vector2<f64>, f64)> {
    let mut acc = Vector2::zeros();
    let mut gyro = 0.0;
    let mut total = 0.0;
    for (j, s) in imu.iter().enumerate() {
        let start = if j == 0 {
            s.t - imu.get(1).map_or(0.0, |n| n.t - s.t)
        } else {
            imu[j - 1].t
        };
        if start >= b {
            break;
        }
        let w = s.t.min(b) - start.max(a);
        if w > 0.0 {
            acc += s.accel * w;
            gyro += s.gyro * w;
            total += w;
        }
    }
    (total > 0.0).then(|| (acc / total, gyro / total))
}

fn interpolate_encoders(enc: &[EncoderSample], t: f64) -> (DVector<f64>, DVector<f64>) {
    let j = enc.partition_point(|s| s.t < t);
    if j == 0 {
        return (enc[0].position.clone(), enc[0].velocity.clone());
    }
    if j >= enc.len() {
        let last = enc.last().unwrap();
        return (last.position.clone(), last.velocity.clone());
    }
    let (a, b) = (&enc[j - 1], &enc[j]);
    let w = (t - a.t) / (b.t - a.t);
    (
        &a.position * (1.0 - w) + &b.position * w,
        &a.velocity * (1.0 - w) + &b.velocity * w,
    )
}

fn hold<S>(samples: &[S], time: impl Fn(&S) -> f64, t: f64) -> &S {
    let j = samples.partition_point(|s| time(s) <= t + 1e-12);
    &samples[j.saturating_sub(1)]
}

/// Causal cubic Bézier between `P_i` and `P_j`, shaped by the previous point `P_{i-1}`.
pub fn bezier_segment(prev: Vector2<f64>, start: Vector2<f64>, end: Vector2<f64>, s: f64) -> Vector2<f64> {
    let c1 = start + (end - prev) / 6.0;
    let c2 = end - (end - start) / 3.0;
    let u = 1.0 - s;
    start * (u * u * u) + c1 * (3.0 * u * u * s) + c2 * (3.0 * u * s * s) + end * (s * s * s)
}

/// Spreads one VO segment spanning ticks `a..b` over per-tick world displacements.
/// `prev` is the previous epoch position when the chain is continuous.
pub fn spread_segment(prev: Option<Vector2<f64>>, start: Vector2<f64>, end: Vector2<f64>, ticks: usize) -> Vec<Vector2<f64>> {
    let prev = prev.unwrap_or(start - (end - start));
    let at = |k: usize| bezier_segment(prev, start, end, k as f64 / ticks as f64);
    (0..ticks).map(|k| at(k + 1) - at(k)).collect()
}

/// Builds the tick stream for `log`. Tick `k` sits at `t0 + k Δt` where `t0` is the first
/// truth time; inputs before the first sample are clamped to it.
pub fn build_ticks(log: &SensorLog, config: &FrontendConfig) -> Result<Vec<TickInput<f64>>> {
    if config.rate_hz.is_nan() || config.rate_hz <= 0.0 {
        return Err(Error::Contract("tick rate must be positive".into()));
    }
    if log.imu.len() < 2 || log.encoders.is_empty() || log.efforts.is_empty() || log.contacts.is_empty() {
        return Err(Error::Contract("sensor log is missing streams".into()));
    }
    let dt = 1.0 / config.rate_hz;
    let t0 = log.truth.first().map_or(log.imu[0].t - (log.imu[1].t - log.imu[0].t), |s| s.t);
    let t_end = log.imu.last().unwrap().t;
    let n_ticks = ((t_end - t0) / dt + 1e-9).floor() as usize + 1;

    // VO segments grouped by the tick at which they complete.
    let mut segments: Vec<(usize, usize, &VoIncrement, bool)> = Vec::new();
    for (i, inc) in log.vo.iter().enumerate() {
        let (Some(a), Some(b)) = (nearest_tick(inc.t_i, t0, dt), nearest_tick(inc.t_j, t0, dt)) else {
            continue;
        };
        if b <= a || b >= n_ticks {
            continue;
        }
        let continuous = i > 0 && (log.vo[i - 1].t_j - inc.t_i).abs() < 1e-9;
        segments.push((a, b, inc, continuous));
    }

    let mut filter = {
        let a = log.imu[0].accel;
        OrientationFilter::new(
            OrientationEstimate::new(
                a.x.atan2(a.y),
                0.0,
                Matrix2::new(config.initial_pitch_std.powi(2), 0.0, 0.0, config.initial_gyro_bias_std.powi(2)),
            ),
            config.orientation,
        )
    };
    let mut ticks: Vec<TickInput<f64>> = Vec::with_capacity(n_ticks);
    let mut seg = 0;
    let mut starts: Vec<usize> = segments.iter().map(|s| s.0).collect();
    starts.dedup();
    let mut marked = None;
    // World position of the last epoch of the current chain and the one before it.
    let mut chain: Option<(Vector2<f64>, Option<Vector2<f64>>)> = None;
    for k in 0..n_ticks {
        let t = t0 + k as f64 * dt;
        let (accel, gyro) = if k == 0 {
            (log.imu[0].accel, log.imu[0].gyro)
        } else {
            interval_mean(&log.imu, t - dt, t).ok_or_else(|| Error::Contract(format!("no IMU data before t = {t}")))?
        };
        let mut rotation = None;
        let mut pairs = Vec::new();
        while seg < segments.len() && segments[seg].1 == k {
            let (a, b, inc, continuous) = segments[seg];
            let ref_tick = &ticks[a];
            let start_pose = match chain {
                Some((p, _)) if continuous => p,
                _ => Vector2::zeros(),
            };
            let prev = match chain {
                Some((_, prev)) if continuous => prev,
                _ => None,
            };
            let end_pose = start_pose + rot2(ref_tick.pitch) * inc.translation;
            let world = spread_segment(prev, start_pose, end_pose, b - a);
            for (off, d) in world.into_iter().enumerate() {
                pairs.push((a + off, d));
            }
            chain = Some((end_pose, Some(start_pose)));
            if config.use_vo_rotation && marked == Some(a) {
                rotation = Some(inc.rotation);
            }
            seg += 1;
        }
        if k > 0 {
            filter.predict(gyro, dt)?;
        }
        filter.correct(accel, rotation);
        if starts.binary_search(&k).is_ok() {
            filter.mark_reference();
            marked = Some(k);
        }
        let est = *filter.estimate();
        let (joints, joint_rates) = interpolate_encoders(&log.encoders, t);
        ticks.push(TickInput {
            index: k,
            t,
            accel,
            gyro,
            pitch: est.pitch,
            pitch_variance: est.pitch_variance(),
            pitch_rate: gyro - est.gyro_bias,
            joints,
            joint_rates,
            torques: hold(&log.efforts, |s| s.t, t).torque.clone(),
            contacts: hold(&log.contacts, |s| s.t, t).flags.clone(),
            vo: Vec::new(),
        });
        // Rotate world displacements into the body frame of their start tick.
        let vo = pairs
            .into_iter()
            .map(|(tick, d)| VoPair {
                tick,
                displacement: rot2(ticks[tick].pitch).transpose() * d,
            })
            .collect();
        ticks[k].vo = vo;
    }
    Ok(ticks)
}
