//! Time-phased walking controller: Raibert foot placement for the swing leg,
//! inverse-kinematics height and posture hold for stance legs, joint PD with a
//! static-support feedforward.

use std::f64::consts::PI;

use nalgebra::{DVector, Matrix2, Vector2};

use super::{ContactParams, Controller, SimState};
use crate::dynamics::{static_support, GeneralizedState, RobotModel};
use crate::error::{Error, Result};
use crate::scalar::{cross2, rot2};

#[derive(Clone, Debug, PartialEq)]
pub struct GaitParams {
    /// Full cycle (both legs stepping), s.
    pub step_period: f64,
    /// Target forward speed, m/s. Zero together with zero `step_height` stands still.
    pub speed: f64,
    /// Swing apex height, m.
    pub step_height: f64,
    /// Fraction of each half cycle spent swinging; the rest is double support.
    pub swing_fraction: f64,
    pub body_height: f64,
    /// Horizontal foot offset from the hip when standing, m.
    pub stance_half_width: f64,
    /// Velocity feedback of the foot placement, s.
    pub placement_gain: f64,
    pub max_step: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    /// Standing time before the first step, s.
    pub start_delay: f64,
    /// Time to ramp the speed target up, s.
    pub ramp_time: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            step_period: 0.5,
            speed: 0.3,
            step_height: 0.05,
            swing_fraction: 0.8,
            body_height: 0.44,
            stance_half_width: 0.08,
            placement_gain: 0.15,
            max_step: 0.2,
            kp: 200.0,
            kd: 3.0,
            torque_limit: 30.0,
            start_delay: 0.3,
            ramp_time: 1.0,
        }
    }
}

impl GaitParams {
    pub fn standing() -> Self {
        Self {
            speed: 0.0,
            step_height: 0.0,
            ..Self::default()
        }
    }

    pub fn is_standing(&self) -> bool {
        self.speed == 0.0 && self.step_height == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.step_period > 0.0
            && self.swing_fraction > 0.0
            && self.swing_fraction <= 1.0
            && self.body_height > 0.0
            && self.torque_limit > 0.0
            && self.kp >= 0.0
            && self.kd >= 0.0
            && self.max_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract("invalid gait parameters".into()))
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Swing {
    cycle: i64,
    leg: usize,
    start: Vector2<f64>,
    target_x: f64,
}

#[derive(Clone, Debug)]
pub struct GaitController {
    pub params: GaitParams,
    lengths: [(f64, f64); 2],
    swing: Option<Swing>,
    standing_center: Option<f64>,
}


/// How far below the ground the swing target ends, m.
const LANDING_DEPTH: f64 = 0.004;

impl GaitController {
    pub fn new(model: &RobotModel<f64>, params: GaitParams) -> Result<Self> {
        params.validate()?;
        if model.legs.len() != 2 || model.legs.iter().any(|l| l.links.len() != 2) {
            return Err(Error::InvalidModel("gait controller needs two legs of two links".into()));
        }
        let len = |l: usize| (model.legs[l].links[0].length, model.legs[l].links[1].length);
        Ok(Self {
            params,
            lengths: [len(0), len(1)],
            swing: None,
            standing_center: None,
        })
    }

    /// Standing pose with both feet seated on the ground.
    pub fn initial_state(&self, model: &RobotModel<f64>) -> Result<SimState> {
        let h = self.params.body_height;
        let w = self.params.stance_half_width;
        // Seat both feet so the springs carry the weight.
        let seat = model.total_mass() * model.gravity / (2.0 * ContactParams::default().stiffness);
        let feet = [Vector2::new(w, -h - seat), Vector2::new(-w, -h - seat)];
        let mut joints = Vec::new();
        for (l, foot) in feet.iter().enumerate() {
            let hip = model.legs[l].hip;
            let (a, b) = ik(self.lengths[l], foot - hip);
            joints.extend([a, b]);
        }
        let s = GeneralizedState::from_parts(
            Vector2::new(0.0, h),
            0.0,
            &joints,
            Vector2::zeros(),
            0.0,
            &[0.0; 4],
        );
        SimState::new(model, s)
    }

    fn speed_target(&self, t: f64) -> f64 {
        let p = &self.params;
        if p.ramp_time <= 0.0 {
            return p.speed;
        }
        p.speed * ((t - p.start_delay) / p.ramp_time).clamp(0.0, 1.0)
    }

    /// Scheduled stance flags at time `t`.
    pub fn scheduled_stance(&self, t: f64) -> [bool; 2] {
        let p = &self.params;
        if p.is_standing() || t < p.start_delay {
            return [true, true];
        }
        let half = 0.5 * p.step_period;
        let rel = t - p.start_delay;
        let cycle = (rel / half).floor();
        let tau = rel - cycle * half;
        if tau < half * p.swing_fraction {
            let leg = (cycle as i64).rem_euclid(2) as usize;
            let mut s = [true, true];
            s[leg] = false;
            s
        } else {
            [true, true]
        }
    }

    fn compute(&mut self, model: &RobotModel<f64>, s: &SimState) -> DVector<f64> {
        let p = self.params.clone();
        let t = s.time;
        let st = &s.state;
        let base = st.position();
        let vbase = st.velocity();
        let theta = st.pitch();
        let rot = rot2(theta);
        let joints = st.joints();
        let rates = st.joint_rates();
        let stance = self.scheduled_stance(t);

        let feet_world: Vec<Vector2<f64>> = (0..2)
            .map(|l| {
                let fk = forward(self.lengths[l], joints[2 * l], joints[2 * l + 1]) + model.legs[l].hip;
                base + rot * fk
            })
            .collect();

        let half = 0.5 * p.step_period;
        let mut targets = [(0.0, 0.0, 0.0, 0.0); 2];

        let standing = p.is_standing() || t < p.start_delay;
        let center = if standing {
            *self
                .standing_center
                .get_or_insert(0.5 * (feet_world[0].x + feet_world[1].x))
        } else {
            base.x
        };

        for l in 0..2 {
            let hip = model.legs[l].hip;
            if stance[l] {
                // Hold body height and upright posture over the planted foot.
                let base_des = Vector2::new(center, p.body_height);
                let fk = feet_world[l] - base_des - hip;
                let (a, b) = ik(self.lengths[l], fk);
                let vel_des = Vector2::new(if standing { 0.0 } else { vbase.x }, 0.0);
                let (ad, bd) = ik_rate(self.lengths[l], a, b, -vel_des);
                targets[l] = (a, b, ad, bd);
            } else {
                let rel = t - p.start_delay;
                let cycle = (rel / half).floor() as i64;
                let tau = rel - cycle as f64 * half;
                let swing_time = half * p.swing_fraction;
                let sphase = (tau / swing_time).clamp(0.0, 1.0);
                if self.swing.is_none_or(|sw| sw.cycle != cycle) {
                    self.swing = Some(Swing {
                        cycle,
                        leg: l,
                        start: feet_world[l],
                        target_x: feet_world[l].x,
                    });
                }
                let mut sw = self.swing.unwrap();
                debug_assert_eq!(sw.leg, l);
                if sphase < 0.7 {
                    let remaining = swing_time - tau;
                    let vdes = self.speed_target(t);
                    let step = (vbase.x * half * 0.5 + p.placement_gain * (vbase.x - vdes))
                        .clamp(-p.max_step, p.max_step);
                    sw.target_x = base.x + vbase.x * remaining + step;
                    self.swing = Some(sw);
                }
                let smooth = sphase * sphase * (3.0 - 2.0 * sphase);
                let dsmooth = 6.0 * sphase * (1.0 - sphase) / swing_time;
                let x = sw.start.x + (sw.target_x - sw.start.x) * smooth;
                let xd = (sw.target_x - sw.start.x) * dsmooth;
                let z = p.step_height * (PI * sphase).sin().powi(2) - LANDING_DEPTH * sphase;
                let zd = (p.step_height * PI * (2.0 * PI * sphase).sin() - LANDING_DEPTH) / swing_time;
                let fk_des = rot.transpose() * (Vector2::new(x, z) - base) - hip;
                let (a, b) = ik(self.lengths[l], fk_des);
                let fk_rate = rot.transpose() * (Vector2::new(xd, zd) - vbase);
                let (ad, bd) = ik_rate(self.lengths[l], a, b, fk_rate);
                targets[l] = (a, b, ad, bd);
            }
        }

        let q = st.q.clone();
        let ff = static_support(model, &q, &stance)
            .map(|(u, _)| u)
            .unwrap_or_else(|_| DVector::zeros(4));
        let mut u = DVector::zeros(4);
        for l in 0..2 {
            let (a, b, ad, bd) = targets[l];
            let des = [a, b];
            let desd = [ad, bd];
            for k in 0..2 {
                let j = 2 * l + k;
                let tau = p.kp * (des[k] - joints[j]) + p.kd * (desd[k] - rates[j]) + ff[j];
                u[j] = tau.clamp(-p.torque_limit, p.torque_limit);
            }
        }
        u
    }
}

impl Controller for GaitController {
    fn torques(&mut self, model: &RobotModel<f64>, state: &SimState) -> DVector<f64> {
        self.compute(model, state)
    }
}

/// Foot position relative to the hip for hip angle `a` and knee angle `b`.
pub fn forward((l1, l2): (f64, f64), a: f64, b: f64) -> Vector2<f64> {
    let dir = |ang: f64| Vector2::new(ang.sin(), -ang.cos());
    dir(a) * l1 + dir(a + b) * l2
}

/// Two-link inverse kinematics with the knee bent forward (knee angle ≤ 0).
pub fn ik((l1, l2): (f64, f64), d: Vector2<f64>) -> (f64, f64) {
    let r = d.norm().clamp((l1 - l2).abs() + 1e-6, l1 + l2 - 1e-6);
    let cos_b = ((r * r - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let b = -cos_b.acos();
    let phi = d.x.atan2(-d.y);
    let a = phi - (l2 * b.sin()).atan2(l1 + l2 * b.cos());
    (a, b)
}

/// Joint rates producing the hip-relative foot velocity `v`.
pub fn ik_rate(lengths: (f64, f64), a: f64, b: f64, v: Vector2<f64>) -> (f64, f64) {
    let foot = forward(lengths, a, b);
    let knee = forward((lengths.0, 0.0), a, 0.0);
    let c1 = cross2(1.0, &foot);
    let c2 = cross2(1.0, &(foot - knee));
    let j = Matrix2::new(c1.x, c2.x, c1.y, c2.y);
    match j.try_inverse() {
        Some(inv) => {
            let r = inv * v;
            (r.x, r.y)
        }
        None => (0.0, 0.0),
    }
}
