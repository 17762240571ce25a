//! Synthetic proprioceptive, inertial and visual-odometry streams from a truth trace.

use nalgebra::{DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SimState;
use crate::error::{Error, Result};
use crate::scalar::rot2;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    pub accel_std: f64,
    pub gyro_std: f64,
    pub encoder_vel_std: f64,
    pub encoder_pos_std: f64,
    pub effort_std: f64,
    pub vo_trans_std: f64,
    pub vo_rot_std: f64,
    pub accel_bias: Vector2<f64>,
    pub accel_bias_walk_std: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            accel_std: 0.04,
            gyro_std: 0.002,
            encoder_vel_std: 0.02,
            encoder_pos_std: 0.01,
            effort_std: 0.01,
            vo_trans_std: 0.002,
            vo_rot_std: 0.002,
            accel_bias: Vector2::new(0.05, 0.05),
            accel_bias_walk_std: 1e-3,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    /// Exact sensors, no bias.
    pub fn noiseless() -> Self {
        Self {
            accel_std: 0.0,
            gyro_std: 0.0,
            encoder_vel_std: 0.0,
            encoder_pos_std: 0.0,
            effort_std: 0.0,
            vo_trans_std: 0.0,
            vo_rot_std: 0.0,
            accel_bias: Vector2::zeros(),
            accel_bias_walk_std: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [
            self.accel_std,
            self.gyro_std,
            self.encoder_vel_std,
            self.encoder_pos_std,
            self.effort_std,
            self.vo_trans_std,
            self.vo_rot_std,
            self.accel_bias_walk_std,
        ];
        if stds.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::Contract("noise standard deviations must be finite and non-negative".into()))
        }
    }
}

/// Camera mounting and rate.
#[derive(Clone, Debug, PartialEq)]
pub struct VoConfig {
    pub rate_hz: f64,
    /// Camera pose in the body frame: translation and pitch offset.
    pub extrinsic_translation: Vector2<f64>,
    pub extrinsic_pitch: f64,
}

impl Default for VoConfig {
    fn default() -> Self {
        Self {
            rate_hz: 50.0,
            extrinsic_translation: Vector2::new(0.1, 0.05),
            extrinsic_pitch: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub accel: Vector2<f64>,
    pub gyro: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderSample {
    pub t: f64,
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffortSample {
    pub t: f64,
    pub torque: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactSample {
    pub t: f64,
    pub flags: Vec<bool>,
}

/// Relative body motion between two camera epochs, expressed in the body frame at `t_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoIncrement {
    pub t_i: f64,
    pub t_j: f64,
    pub translation: Vector2<f64>,
    pub rotation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub contact: Vec<bool>,
    pub grf: Vec<Vector2<f64>>,
    pub accel_bias: Vector2<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SensorLog {
    pub imu: Vec<ImuSample>,
    pub encoders: Vec<EncoderSample>,
    pub efforts: Vec<EffortSample>,
    pub contacts: Vec<ContactSample>,
    pub vo: Vec<VoIncrement>,
    pub truth: Vec<TruthSample>,
    pub gravity: f64,
}

/// Planar rigid transform `(translation, angle)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2 {
    pub translation: Vector2<f64>,
    pub angle: f64,
}

impl Pose2 {
    pub fn new(translation: Vector2<f64>, angle: f64) -> Self {
        Self { translation, angle }
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        Pose2::new(self.translation + rot2(self.angle) * other.translation, self.angle + other.angle)
    }

    pub fn inverse(&self) -> Pose2 {
        Pose2::new(-(rot2(self.angle).transpose() * self.translation), -self.angle)
    }
}

/// Mean specific force over the step ending at `cur`, in the body frame at the
/// mid-step pitch.
pub fn interval_specific_force(prev: &SimState, cur: &SimState, gravity: f64) -> Vector2<f64> {
    let dt = cur.time - prev.time;
    let accel = (cur.state.velocity() - prev.state.velocity()) / dt;
    let mid = 0.5 * (prev.state.pitch() + cur.state.pitch());
    rot2(mid).transpose() * (accel + Vector2::new(0.0, gravity))
}

/// Mean pitch rate over the step ending at `cur`.
pub fn interval_pitch_rate(prev: &SimState, cur: &SimState) -> f64 {
    (cur.state.pitch() - prev.state.pitch()) / (cur.time - prev.time)
}

/// Generates every sensor stream from a truth trace sampled at the simulation rate.
///
/// The trace must start at the initial state; samples are produced for every later
/// step, and VO increments for consecutive epochs spaced by `sim_rate / vo.rate_hz` steps.
pub fn synthesize_sensors(
    trace: &[SimState],
    gravity: f64,
    noise: &NoiseConfig,
    vo: &VoConfig,
) -> Result<SensorLog> {
    noise.validate()?;
    if trace.len() < 2 {
        return Err(Error::Contract("truth trace needs at least two states".into()));
    }
    let dt = trace[1].time - trace[0].time;
    let ratio = 1.0 / (dt * vo.rate_hz);
    let vo_every = ratio.round() as usize;
    if vo_every == 0 || (ratio - vo_every as f64).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "VO rate {} Hz does not divide the simulation rate",
            vo.rate_hz
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut gauss = |std: f64| {
        let z: f64 = std_normal.sample(&mut rng);
        z * std
    };
    let n = trace[0].state.joints().len();
    let time_of = |j: usize| trace[0].time + j as f64 * dt;

    let mut log = SensorLog {
        gravity,
        ..SensorLog::default()
    };
    let mut bias = noise.accel_bias;
    log.truth.push(truth_sample(&trace[0], time_of(0), bias));
    for j in 1..trace.len() {
        let (prev, cur) = (&trace[j - 1], &trace[j]);
        let t = time_of(j);
        bias += Vector2::new(gauss(noise.accel_bias_walk_std), gauss(noise.accel_bias_walk_std)) * dt.sqrt();
        let f = interval_specific_force(prev, cur, gravity);
        let accel = f + bias + Vector2::new(gauss(noise.accel_std), gauss(noise.accel_std));
        let gyro = interval_pitch_rate(prev, cur) + gauss(noise.gyro_std);
        log.imu.push(ImuSample { t, accel, gyro });
        let position = DVector::from_fn(n, |k, _| cur.state.joints()[k] + gauss(noise.encoder_pos_std));
        let velocity = DVector::from_fn(n, |k, _| cur.state.joint_rates()[k] + gauss(noise.encoder_vel_std));
        log.encoders.push(EncoderSample { t, position, velocity });
        let torque = DVector::from_fn(n, |k, _| cur.torques[k] + gauss(noise.effort_std));
        log.efforts.push(EffortSample { t, torque });
        log.contacts.push(ContactSample {
            t,
            flags: cur.contact_flags.clone(),
        });
        log.truth.push(truth_sample(cur, t, bias));
    }

    let extrinsic = Pose2::new(vo.extrinsic_translation, vo.extrinsic_pitch);
    let camera = |s: &SimState| Pose2::new(s.state.position(), s.state.pitch()).compose(&extrinsic);
    let mut i = 0;
    while i + vo_every < trace.len() {
        let j = i + vo_every;
        let rel = camera(&trace[i]).inverse().compose(&camera(&trace[j]));
        let noisy_cam = Pose2::new(
            rel.translation + Vector2::new(gauss(noise.vo_trans_std), gauss(noise.vo_trans_std)),
            rel.angle + gauss(noise.vo_rot_std),
        );
        let body = extrinsic.compose(&noisy_cam).compose(&extrinsic.inverse());
        log.vo.push(VoIncrement {
            t_i: time_of(i),
            t_j: time_of(j),
            translation: body.translation,
            rotation: body.angle,
        });
        i = j;
    }
    Ok(log)
}

fn truth_sample(s: &SimState, t: f64, bias: Vector2<f64>) -> TruthSample {
    TruthSample {
        t,
        q: s.state.q.clone(),
        qdot: s.state.qdot.clone(),
        contact: s.contact_flags.clone(),
        grf: s.grf_truth.clone(),
        accel_bias: bias,
    }
}
