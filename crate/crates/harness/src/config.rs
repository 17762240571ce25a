//! Scenario configuration, read from TOML with unknown keys rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use grfmhe::baselines::{DkfConfig, MboConfig};
use grfmhe::dynamics::{Leg, Link, RobotModel};
use grfmhe::mhe::{ConstraintMode, FrontendConfig, MheConfig, NoiseModel};
use grfmhe::sim::{GaitParams, NoiseConfig, SimConfig, VoConfig};
use nalgebra::Vector2;
use serde::Deserialize;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Moving-horizon estimator with contact constraints.
    Mhe,
    /// Moving-horizon estimator without contact constraints.
    MheNc,
    Dkf,
    Mbo,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::Mhe, Self::MheNc, Self::Dkf, Self::Mbo];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mhe => "mhe",
            Self::MheNc => "mhe_nc",
            Self::Dkf => "dkf",
            Self::Mbo => "mbo",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown estimator '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitKind {
    #[default]
    Walk,
    Stand,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraints {
    #[default]
    Complementarity,
    Slippery,
    None,
}

impl From<Constraints> for ConstraintMode {
    fn from(c: Constraints) -> Self {
        match c {
            Constraints::Complementarity => ConstraintMode::Complementarity,
            Constraints::Slippery => ConstraintMode::Slippery,
            Constraints::None => ConstraintMode::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    /// Robot description; the reference biped when absent.
    pub model: Option<PathBuf>,
    pub gait: GaitKind,
    pub duration: f64,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub output: PathBuf,
    /// Metrics ignore samples before this time (s).
    pub eval_start: f64,
    /// Simulator step (s).
    pub sim_dt: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            model: None,
            gait: GaitKind::Walk,
            duration: 10.0,
            seed: 0,
            estimators: EstimatorKind::ALL.to_vec(),
            output: PathBuf::from("out"),
            eval_start: 0.5,
            sim_dt: SimConfig::default().dt,
        }
    }
}

/// Overrides on top of the walking or standing gait.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitSection {
    pub step_period: Option<f64>,
    pub speed: Option<f64>,
    pub step_height: Option<f64>,
    pub swing_fraction: Option<f64>,
    pub body_height: Option<f64>,
    pub stance_half_width: Option<f64>,
    pub placement_gain: Option<f64>,
    pub max_step: Option<f64>,
    pub kp: Option<f64>,
    pub kd: Option<f64>,
    pub torque_limit: Option<f64>,
    pub start_delay: Option<f64>,
    pub ramp_time: Option<f64>,
}

impl GaitSection {
    fn apply(&self, mut p: GaitParams) -> GaitParams {
        let set = |dst: &mut f64, src: Option<f64>| {
            if let Some(v) = src {
                *dst = v;
            }
        };
        set(&mut p.step_period, self.step_period);
        set(&mut p.speed, self.speed);
        set(&mut p.step_height, self.step_height);
        set(&mut p.swing_fraction, self.swing_fraction);
        set(&mut p.body_height, self.body_height);
        set(&mut p.stance_half_width, self.stance_half_width);
        set(&mut p.placement_gain, self.placement_gain);
        set(&mut p.max_step, self.max_step);
        set(&mut p.kp, self.kp);
        set(&mut p.kd, self.kd);
        set(&mut p.torque_limit, self.torque_limit);
        set(&mut p.start_delay, self.start_delay);
        set(&mut p.ramp_time, self.ramp_time);
        p
    }
}

/// Sensor noise of the simulated log.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// When false every sensor is exact and unbiased, and the values below are ignored.
    pub enabled: bool,
    pub accel_std: f64,
    pub gyro_std: f64,
    pub encoder_vel_std: f64,
    pub encoder_pos_std: f64,
    pub effort_std: f64,
    pub vo_trans_std: f64,
    pub vo_rot_std: f64,
    pub accel_bias: [f64; 2],
    pub accel_bias_walk_std: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseConfig::default();
        Self {
            enabled: true,
            accel_std: n.accel_std,
            gyro_std: n.gyro_std,
            encoder_vel_std: n.encoder_vel_std,
            encoder_pos_std: n.encoder_pos_std,
            effort_std: n.effort_std,
            vo_trans_std: n.vo_trans_std,
            vo_rot_std: n.vo_rot_std,
            accel_bias: [n.accel_bias.x, n.accel_bias.y],
            accel_bias_walk_std: n.accel_bias_walk_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoSection {
    pub rate_hz: f64,
    pub extrinsic_translation: [f64; 2],
    pub extrinsic_pitch: f64,
}

impl Default for VoSection {
    fn default() -> Self {
        let v = VoConfig::default();
        Self {
            rate_hz: v.rate_hz,
            extrinsic_translation: [v.extrinsic_translation.x, v.extrinsic_translation.y],
            extrinsic_pitch: v.extrinsic_pitch,
        }
    }
}

/// Estimator tuning shared by the MHE variants and the DKF.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MheSection {
    pub window_size: usize,
    pub rate_hz: f64,
    /// Constraint set of the `mhe` estimator; `mhe_nc` always runs without.
    pub constraints: Constraints,
    pub use_vo: bool,
    pub stance_settle_ticks: usize,
    /// Pitch noise of the accelerometer gravity direction in the attitude filter (rad).
    pub accel_pitch_std: f64,
    pub noise: NoiseModelSection,
}

impl Default for MheSection {
    fn default() -> Self {
        let m = MheConfig::<f64>::default();
        let f = FrontendConfig::default();
        Self {
            window_size: m.window_size,
            rate_hz: f.rate_hz,
            constraints: Constraints::Complementarity,
            use_vo: m.use_vo,
            stance_settle_ticks: m.stance_settle_ticks,
            accel_pitch_std: f.orientation.accel_pitch,
            noise: NoiseModelSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModelSection {
    pub accel: f64,
    pub position_walk: f64,
    pub bias_walk: f64,
    pub momentum_model: f64,
    pub momentum_model_joints: f64,
    pub force_walk: f64,
    pub leg_odometry: f64,
    pub momentum_measurement: f64,
    pub vo_displacement: f64,
}

impl Default for NoiseModelSection {
    fn default() -> Self {
        let n = NoiseModel::<f64>::default();
        Self {
            accel: n.accel,
            position_walk: n.position_walk,
            bias_walk: n.bias_walk,
            momentum_model: n.momentum_model,
            momentum_model_joints: n.momentum_model_joints,
            force_walk: n.force_walk,
            leg_odometry: n.leg_odometry,
            momentum_measurement: n.momentum_measurement,
            vo_displacement: n.vo_displacement,
        }
    }
}

impl From<&NoiseModelSection> for NoiseModel<f64> {
    fn from(s: &NoiseModelSection) -> Self {
        NoiseModel {
            accel: s.accel,
            position_walk: s.position_walk,
            bias_walk: s.bias_walk,
            momentum_model: s.momentum_model,
            momentum_model_joints: s.momentum_model_joints,
            force_walk: s.force_walk,
            leg_odometry: s.leg_odometry,
            momentum_measurement: s.momentum_measurement,
            vo_displacement: s.vo_displacement,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MboSection {
    pub gain: f64,
}

impl Default for MboSection {
    fn default() -> Self {
        Self {
            gain: MboConfig::<f64>::default().gain,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub gait: GaitSection,
    pub noise: NoiseSection,
    pub vo: VoSection,
    pub mhe: MheSection,
    pub mbo: MboSection,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        let s = &self.scenario;
        if !(s.duration > 0.0 && s.duration.is_finite()) {
            return bad("scenario.duration must be positive");
        }
        if !(s.sim_dt > 0.0 && s.sim_dt.is_finite()) {
            return bad("scenario.sim_dt must be positive");
        }
        if !(s.eval_start >= 0.0 && s.eval_start < s.duration) {
            return bad("scenario.eval_start must lie in [0, duration)");
        }
        if s.estimators.is_empty() {
            return bad("scenario.estimators is empty");
        }
        for (i, k) in s.estimators.iter().enumerate() {
            if s.estimators[..i].contains(k) {
                return Err(HarnessError::Config(format!("estimator '{k}' listed twice")));
            }
        }
        if self.mhe.window_size < 1 {
            return bad("mhe.window_size must be at least 1");
        }
        if !(self.mhe.rate_hz > 0.0 && self.mhe.rate_hz.is_finite()) {
            return bad("mhe.rate_hz must be positive");
        }
        if !(self.mhe.accel_pitch_std > 0.0 && self.mhe.accel_pitch_std.is_finite()) {
            return bad("mhe.accel_pitch_std must be positive");
        }
        if !(self.vo.rate_hz > 0.0 && self.vo.rate_hz.is_finite()) {
            return bad("vo.rate_hz must be positive");
        }
        let cfg = |e: grfmhe::Error| HarnessError::Config(e.to_string());
        NoiseModel::from(&self.mhe.noise).validate().map_err(cfg)?;
        self.noise_config().validate().map_err(cfg)?;
        self.gait_params().validate().map_err(cfg)?;
        if !(self.mbo.gain > 0.0 && self.mbo.gain.is_finite()) {
            return bad("mbo.gain must be positive");
        }
        Ok(())
    }

    pub fn model(&self) -> Result<RobotModel<f64>> {
        match &self.scenario.model {
            None => Ok(RobotModel::reference_biped()),
            Some(path) => ModelFile::load(path),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.scenario.sim_dt,
            ..SimConfig::default()
        }
    }

    pub fn gait_params(&self) -> GaitParams {
        let base = match self.scenario.gait {
            GaitKind::Walk => GaitParams::default(),
            GaitKind::Stand => GaitParams::standing(),
        };
        self.gait.apply(base)
    }

    pub fn noise_config(&self) -> NoiseConfig {
        let n = &self.noise;
        let mut c = if n.enabled {
            NoiseConfig {
                accel_std: n.accel_std,
                gyro_std: n.gyro_std,
                encoder_vel_std: n.encoder_vel_std,
                encoder_pos_std: n.encoder_pos_std,
                effort_std: n.effort_std,
                vo_trans_std: n.vo_trans_std,
                vo_rot_std: n.vo_rot_std,
                accel_bias: Vector2::from(n.accel_bias),
                accel_bias_walk_std: n.accel_bias_walk_std,
                seed: 0,
            }
        } else {
            NoiseConfig::noiseless()
        };
        c.seed = self.scenario.seed;
        c
    }

    pub fn vo_config(&self) -> VoConfig {
        VoConfig {
            rate_hz: self.vo.rate_hz,
            extrinsic_translation: Vector2::from(self.vo.extrinsic_translation),
            extrinsic_pitch: self.vo.extrinsic_pitch,
        }
    }

    pub fn frontend_config(&self) -> FrontendConfig {
        let mut f = FrontendConfig {
            rate_hz: self.mhe.rate_hz,
            ..FrontendConfig::default()
        };
        f.orientation.accel_pitch = self.mhe.accel_pitch_std;
        f
    }

    /// MHE configuration for `mhe` or `mhe_nc`.
    pub fn mhe_config(&self, kind: EstimatorKind) -> MheConfig<f64> {
        let constraints = match kind {
            EstimatorKind::MheNc => ConstraintMode::None,
            _ => self.mhe.constraints.into(),
        };
        MheConfig {
            window_size: self.mhe.window_size,
            noise: (&self.mhe.noise).into(),
            constraints,
            use_vo: self.mhe.use_vo,
            stance_settle_ticks: self.mhe.stance_settle_ticks,
            ..MheConfig::default()
        }
    }

    pub fn dkf_config(&self) -> DkfConfig<f64> {
        DkfConfig::matching(&self.mhe_config(EstimatorKind::MheNc))
    }

    pub fn mbo_config(&self) -> MboConfig<f64> {
        MboConfig { gain: self.mbo.gain }
    }
}

/// TOML description of a planar robot.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub base_mass: f64,
    pub base_inertia: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub legs: Vec<LegFile>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegFile {
    pub name: String,
    #[serde(default)]
    pub hip: [f64; 2],
    pub links: Vec<LinkFile>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFile {
    pub mass: f64,
    pub com_offset: f64,
    pub inertia: f64,
    pub length: f64,
}

fn default_gravity() -> f64 {
    9.81
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<RobotModel<f64>> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<RobotModel<f64>> {
        let file: ModelFile = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let legs = file
            .legs
            .into_iter()
            .map(|l| Leg {
                name: l.name,
                hip: Vector2::from(l.hip),
                links: l
                    .links
                    .into_iter()
                    .map(|k| Link {
                        mass: k.mass,
                        com_offset: k.com_offset,
                        inertia: k.inertia,
                        length: k.length,
                    })
                    .collect(),
            })
            .collect();
        RobotModel::new(file.base_mass, file.base_inertia, legs, file.gravity).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_library_defaults() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        assert_eq!(c.noise_config(), NoiseConfig::default());
        assert_eq!(c.vo_config(), VoConfig::default());
        assert_eq!(c.frontend_config(), FrontendConfig::default());
        assert_eq!(c.gait_params(), GaitParams::default());
        assert_eq!(c.sim_config(), SimConfig::default());
        assert_eq!(c.mhe_config(EstimatorKind::Mhe), MheConfig::default());
        assert_eq!(
            c.mhe_config(EstimatorKind::MheNc),
            MheConfig {
                constraints: ConstraintMode::None,
                ..MheConfig::default()
            }
        );
        assert_eq!(c.mbo_config(), MboConfig::default());
        assert_eq!(c.model().unwrap(), RobotModel::reference_biped());
    }
}
