//! Planar biped simulator producing ground truth and synthetic sensor streams.

mod contact;
pub mod gait;
pub mod sensors;

use nalgebra::{DVector, Vector2};

use crate::dynamics::{
    all_foot_kinematics, mass_and_bias, potential_energy, GeneralizedState, RobotModel,
};
use crate::error::{Error, Result};

pub use contact::ContactParams;
pub use gait::{GaitController, GaitParams};
pub use sensors::{
    synthesize_sensors, ContactSample, EffortSample, EncoderSample, ImuSample, NoiseConfig, SensorLog, TruthSample, VoConfig, VoIncrement,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub state: GeneralizedState<f64>,
    pub time: f64,
    pub contact_flags: Vec<bool>,
    /// World-frame ground force per foot; zero whenever the flag is off.
    pub grf_truth: Vec<Vector2<f64>>,
    /// Torques applied over the step that ended at `time`.
    pub torques: DVector<f64>,
    anchors: Vec<Option<f64>>,
}

impl SimState {
    pub fn new(model: &RobotModel<f64>, state: GeneralizedState<f64>) -> Result<Self> {
        state.check(model)?;
        let nf = model.n_feet();
        let s = Self {
            state,
            time: 0.0,
            contact_flags: vec![false; nf],
            grf_truth: vec![Vector2::zeros(); nf],
            torques: DVector::zeros(model.n_joints()),
            anchors: vec![None; nf],
        };
        Ok(s.with_contacts(model, &ContactParams::default()))
    }

    fn with_contacts(mut self, model: &RobotModel<f64>, contact: &ContactParams) -> Self {
        let feet = all_foot_kinematics(model, &self.state).expect("checked state");
        for (i, foot) in feet.iter().enumerate() {
            if self.anchors[i].is_none() && foot.position.y < 0.0 {
                self.anchors[i] = Some(foot.position.x);
            }
            let f = contact.force(foot.position, foot.velocity, self.anchors[i]);
            let on = f.y > contact.threshold;
            self.contact_flags[i] = on;
            self.grf_truth[i] = if on { f } else { Vector2::zeros() };
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    /// Upper bound on the internal integration step.
    pub max_substep: f64,
    pub contact: ContactParams,
    /// Generalized speeds above this magnitude count as divergence.
    pub max_speed: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.002,
            max_substep: 2e-4,
            contact: ContactParams::default(),
            max_speed: 1e3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Simulator {
    pub model: RobotModel<f64>,
    pub config: SimConfig,
}

/// Anything that maps the current truth to joint torques.
pub trait Controller {
    fn torques(&mut self, model: &RobotModel<f64>, state: &SimState) -> DVector<f64>;
}

impl Simulator {
    pub fn new(model: RobotModel<f64>, config: SimConfig) -> Self {
        Self { model, config }
    }

    fn accelerations(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        torques: &DVector<f64>,
        anchors: &[Option<f64>],
    ) -> Result<DVector<f64>> {
        let s = GeneralizedState::new(q.clone(), qd.clone());
        let (mass, bias) = mass_and_bias(&self.model, &s)?;
        let mut rhs = -bias;
        for j in 0..torques.len() {
            rhs[3 + j] += torques[j];
        }
        for (i, foot) in all_foot_kinematics(&self.model, &s)?.iter().enumerate() {
            let f = self.config.contact.force(foot.position, foot.velocity, anchors[i]);
            if f != Vector2::zeros() {
                rhs += foot.contact_jacobian.tr_mul(&DVector::from_column_slice(f.as_slice()));
            }
        }
        mass.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::InvalidModel("mass matrix lost definiteness".into()))
    }

    /// Advances by `dt` with torques held constant, using Heun substeps (exact for
    /// constant accelerations).
    pub fn step(&self, s: &SimState, torques: &DVector<f64>, dt: f64) -> Result<SimState> {
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::Contract(format!("step needs dt > 0, got {dt}")));
        }
        if torques.len() != self.model.n_joints() {
            return Err(Error::DimensionMismatch {
                context: "torques",
                expected: self.model.n_joints(),
                got: torques.len(),
            });
        }
        let fault = |time: f64, reason: &str| Error::SimulationFault {
            time,
            reason: reason.to_string(),
        };
        let n_sub = (dt / self.config.max_substep).ceil().max(1.0) as usize;
        let h = dt / n_sub as f64;
        let mut q = s.state.q.clone();
        let mut qd = s.state.qdot.clone();
        let mut anchors = s.anchors.clone();
        for k in 0..n_sub {
            let t = s.time + (k + 1) as f64 * h;
            let a0 = self.accelerations(&q, &qd, torques, &anchors)?;
            let q1 = &q + &qd * h;
            let qd1 = &qd + &a0 * h;
            let a1 = self.accelerations(&q1, &qd1, torques, &anchors)?;
            q += (&qd + &qd1) * (0.5 * h);
            qd += (a0 + a1) * (0.5 * h);
            if q.iter().chain(qd.iter()).any(|v| !v.is_finite()) {
                return Err(fault(t, "non-finite state"));
            }
            if qd.amax() > self.config.max_speed {
                return Err(fault(t, "generalized speed diverged"));
            }
            let gs = GeneralizedState::new(q.clone(), qd.clone());
            for (i, foot) in all_foot_kinematics(&self.model, &gs)?.iter().enumerate() {
                anchors[i] = self.config.contact.update_anchor(foot.position, foot.velocity, anchors[i]);
            }
        }
        let next = SimState {
            state: GeneralizedState::new(q, qd),
            time: s.time + dt,
            contact_flags: s.contact_flags.clone(),
            grf_truth: s.grf_truth.clone(),
            torques: torques.clone(),
            anchors,
        };
        Ok(next.with_contacts(&self.model, &self.config.contact))
    }

    /// Kinetic, gravitational and contact-spring energy.
    pub fn mechanical_energy(&self, s: &SimState) -> Result<f64> {
        let (mass, _) = mass_and_bias(&self.model, &s.state)?;
        let kinetic = 0.5 * s.state.qdot.dot(&(mass * &s.state.qdot));
        let mut e = kinetic + potential_energy(&self.model, &s.state.q)?;
        for (i, foot) in all_foot_kinematics(&self.model, &s.state)?.iter().enumerate() {
            e += self.config.contact.stored_energy(foot.position, s.anchors[i]);
        }
        Ok(e)
    }

    /// Runs `controller` in closed loop for `duration`, returning every step including
    /// the initial state.
    pub fn run(&self, initial: SimState, controller: &mut dyn Controller, duration: f64) -> Result<Vec<SimState>> {
        let steps = (duration / self.config.dt).round() as usize;
        let mut trace = Vec::with_capacity(steps + 1);
        let initial = initial.with_contacts(&self.model, &self.config.contact);
        trace.push(initial);
        for _ in 0..steps {
            let cur = trace.last().unwrap();
            let u = controller.torques(&self.model, cur);
            let next = self.step(cur, &u, self.config.dt)?;
            trace.push(next);
        }
        Ok(trace)
    }
}

/// Zero torque.
pub struct Passive;

impl Controller for Passive {
    fn torques(&mut self, model: &RobotModel<f64>, _state: &SimState) -> DVector<f64> {
        DVector::zeros(model.n_joints())
    }
}
