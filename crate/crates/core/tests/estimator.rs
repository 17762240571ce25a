//! End-to-end behaviour of the moving-horizon estimator on simulated logs.

use grfmhe::dynamics::{all_foot_kinematics, generalized_momentum, GeneralizedState, RobotModel};
use grfmhe::mhe::factors::{evaluate_tick, leg_odometry_measurement, momentum_measurement, transition};
use grfmhe::mhe::{build_ticks, ConstraintMode, FrontendConfig, MheConfig, MheEstimator, NoiseModel, StateLayout, StepStatus, TickInput};
use grfmhe::scalar::rot2;
use grfmhe::sim::{synthesize_sensors, GaitController, GaitParams, NoiseConfig, SensorLog, SimConfig, Simulator, VoConfig};
use nalgebra::{DVector, Vector2};

fn log(params: GaitParams, duration: f64, noise: &NoiseConfig) -> SensorLog {
    let model = RobotModel::reference_biped();
    let sim = Simulator::new(model.clone(), SimConfig::default());
    let mut ctrl = GaitController::new(&model, params).unwrap();
    let tr = sim.run(ctrl.initial_state(&model).unwrap(), &mut ctrl, duration).unwrap();
    synthesize_sensors(&tr, model.gravity, noise, &VoConfig::default()).unwrap()
}

fn ticks(log: &SensorLog) -> Vec<TickInput<f64>> {
    build_ticks(log, &FrontendConfig::default()).unwrap()
}

fn walking(duration: f64) -> Vec<TickInput<f64>> {
    ticks(&log(GaitParams::default(), duration, &NoiseConfig::default()))
}

#[test]
fn window_census_matches_layout() {
    let model = RobotModel::reference_biped();
    let mut est = MheEstimator::new(model.clone(), MheConfig::default()).unwrap();
    let layout = *est.layout();
    assert_eq!(layout.dim(), 17);
    for t in walking(1.0).iter().take(120) {
        est.step(t).unwrap();
    }
    let w = est.window().unwrap();
    assert_eq!(w.len(), 8);
    let qp = w.assemble().unwrap();
    assert_eq!(qp.problem.n_vars(), 136);
    let (mut eq, mut ineq) = (0, 0);
    for k in w.first_index().unwrap()..=w.last_index().unwrap() {
        let f = w.tick(k).unwrap();
        eq += f.equality.rows();
        ineq += f.inequality.rows();
        // Every foot contributes either a non-negativity row or two pins; settled
        // stance feet add two velocity rows.
        assert!(f.inequality.rows() + f.equality.rows() / 2 >= layout.n_feet);
    }
    assert_eq!(qp.problem.eq_rhs.len(), eq);
    assert_eq!(qp.problem.ineq_rhs.len(), ineq);
}

#[test]
fn flight_forces_are_identically_zero() {
    let model = RobotModel::reference_biped();
    let mut est = MheEstimator::new(model, MheConfig::default()).unwrap();
    for t in walking(0.5) {
        let t = TickInput {
            contacts: vec![false, false],
            ..t
        };
        let out = est.step(&t).unwrap();
        assert_eq!(out.diagnostics.status, StepStatus::Solved);
        assert!(out.forces.iter().all(|f| *f == Vector2::zeros()));
        assert_eq!(out.diagnostics.window_max_swing_force, 0.0);
    }
}

#[test]
fn walking_windows_satisfy_complementarity() {
    let model = RobotModel::reference_biped();
    let mut est = MheEstimator::new(model, MheConfig::default()).unwrap();
    for t in walking(3.0) {
        let out = est.step(&t).unwrap();
        assert_eq!(out.diagnostics.status, StepStatus::Solved);
        assert!(out.diagnostics.kkt.max() <= 1e-6);
        assert_eq!(out.diagnostics.window_max_swing_force, 0.0);
        assert!(out.diagnostics.window_min_normal_force >= -1e-6);
        for (f, c) in out.forces.iter().zip(&t.contacts) {
            if !c {
                assert_eq!(*f, Vector2::zeros());
            }
        }
    }
}

#[test]
fn standing_noiseless_supports_weight() {
    let model = RobotModel::reference_biped();
    let weight = model.total_mass() * model.gravity;
    let ticks = ticks(&log(GaitParams::standing(), 1.0, &NoiseConfig::noiseless()));
    let mut est = MheEstimator::new(model, MheConfig::default()).unwrap();
    for t in &ticks {
        let out = est.step(t).unwrap();
        if t.t > 0.2 {
            let fz: f64 = out.forces.iter().map(|f| f.y).sum();
            assert!((fz - weight).abs() < 0.005 * weight, "t={} fz={fz}", t.t);
        }
    }
}

#[test]
fn identical_inputs_give_identical_traces() {
    let ticks = walking(1.0);
    let run = || {
        let mut est = MheEstimator::new(RobotModel::reference_biped(), MheConfig::default()).unwrap();
        ticks.iter().map(|t| est.step(t).unwrap().state).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn uniform_covariance_scaling_leaves_estimates_unchanged() {
    let ticks = walking(1.0);
    let scale: f64 = 7.0;
    let run = |c: f64| {
        let base = MheConfig::<f64>::default();
        let s = c.sqrt();
        let mut cfg = MheConfig {
            noise: base.noise.scaled(s),
            ..base.clone()
        };
        cfg.prior.position *= s;
        cfg.prior.velocity *= s;
        cfg.prior.bias *= s;
        cfg.prior.momentum *= s;
        cfg.prior.force *= s;
        let mut est = MheEstimator::new(RobotModel::reference_biped(), cfg).unwrap();
        ticks
            .iter()
            .map(|t| {
                let t = TickInput {
                    pitch_variance: t.pitch_variance * c,
                    ..t.clone()
                };
                est.step(&t).unwrap()
            })
            .collect::<Vec<_>>()
    };
    let (a, b) = (run(1.0), run(scale));
    for (x, y) in a.iter().zip(&b) {
        assert!((x.velocity() - y.velocity()).amax() < 1e-6);
        for (fa, fb) in x.forces.iter().zip(&y.forces) {
            assert!((fa - fb).amax() < 1e-4, "t={} {fa} {fb}", x.t);
        }
    }
}

#[test]
fn leg_odometry_matches_finite_difference_foot_velocity() {
    // Truth inputs: the measurement is the base velocity that would zero the foot
    // velocity, so measurement - v_true = -v_foot_true.
    let model = RobotModel::reference_biped();
    let log = log(GaitParams::default(), 1.0, &NoiseConfig::noiseless());
    let eps = 1e-6;
    for s in log.truth.iter().step_by(37) {
        let state = GeneralizedState::new(s.q.clone(), s.qdot.clone());
        let n = model.n_joints();
        let input = TickInput {
            index: 0,
            t: s.t,
            accel: Vector2::zeros(),
            gyro: 0.0,
            pitch: s.q[2],
            pitch_variance: 0.0,
            pitch_rate: s.qdot[2],
            joints: s.q.rows(3, n).into_owned(),
            joint_rates: s.qdot.rows(3, n).into_owned(),
            torques: DVector::zeros(n),
            contacts: vec![true; model.n_feet()],
            vo: vec![],
        };
        let tm = evaluate_tick(&model, &input, state.velocity()).unwrap();
        let fwd = GeneralizedState::new(&s.q + &s.qdot * eps, s.qdot.clone());
        let bwd = GeneralizedState::new(&s.q - &s.qdot * eps, s.qdot.clone());
        let (pf, pb) = (all_foot_kinematics(&model, &fwd).unwrap(), all_foot_kinematics(&model, &bwd).unwrap());
        for foot in 0..model.n_feet() {
            let v_foot = (pf[foot].position - pb[foot].position) / (2.0 * eps);
            let y = leg_odometry_measurement(&tm, &input, foot).unwrap();
            assert!((y - (state.velocity() - v_foot)).amax() < 1e-6);
        }
        // Momentum split: M₁ v + M₂ [ω; α̇] = M q̇.
        let m = generalized_momentum(&model, &state).unwrap();
        let split = tm.terms.m1() * state.velocity() + momentum_measurement(&tm, &input);
        assert!((split - m).amax() < 1e-10);
    }
}

#[test]
fn transition_integrates_constant_acceleration_exactly() {
    let model = RobotModel::reference_biped();
    let layout = StateLayout::for_model(&model);
    let n = model.n_joints();
    let (pitch, a_world, dt) = (0.1, Vector2::new(0.7, -0.4), 0.005);
    let specific = rot2(pitch).transpose() * (a_world + Vector2::new(0.0, model.gravity));
    let mk = |index: usize, t: f64| TickInput {
        index,
        t,
        accel: specific,
        gyro: 0.0,
        pitch,
        pitch_variance: 0.0,
        pitch_rate: 0.0,
        joints: DVector::from_vec(vec![0.3, -0.6, 0.3, -0.6]),
        joint_rates: DVector::zeros(n),
        torques: DVector::zeros(n),
        contacts: vec![false, false],
        vo: vec![],
    };
    let (prev, next) = (mk(0, 0.0), mk(1, dt));
    let tm = evaluate_tick(&model, &prev, Vector2::zeros()).unwrap();
    let tr = transition(&model, &layout, &NoiseModel::default(), &prev, &tm, &next, &tm).unwrap();
    let mut x = DVector::zeros(layout.dim());
    x[StateLayout::P] = 1.0;
    x[StateLayout::V] = 0.3;
    x[StateLayout::V + 1] = -0.2;
    let y = tr.apply(&x);
    let p = Vector2::new(1.0, 0.0) + Vector2::new(0.3, -0.2) * dt + a_world * (0.5 * dt * dt);
    let v = Vector2::new(0.3, -0.2) + a_world * dt;
    assert!((Vector2::new(y[0], y[1]) - p).amax() < 1e-12);
    assert!((Vector2::new(y[2], y[3]) - v).amax() < 1e-12);
}

#[test]
fn unconstrained_mode_ignores_contact_rows() {
    let model = RobotModel::reference_biped();
    let cfg = MheConfig {
        constraints: ConstraintMode::None,
        ..MheConfig::default()
    };
    let mut est = MheEstimator::new(model, cfg).unwrap();
    for t in walking(0.3) {
        est.step(&t).unwrap();
    }
    let qp = est.window().unwrap().assemble().unwrap();
    assert_eq!(qp.problem.eq_rhs.len() + qp.problem.ineq_rhs.len(), 0);
}
