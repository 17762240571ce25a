use nalgebra::{DMatrix, DVector, Vector2};

use super::dkf::clamp_psd;
use super::*;
use crate::dynamics::{static_support, GeneralizedState, RobotModel};
use crate::mhe::{build_ticks, ConstraintMode, FrontendConfig, MheConfig, MheEstimator, TickInput};
use crate::sim::{synthesize_sensors, GaitController, GaitParams, NoiseConfig, Passive, SimConfig, Simulator, VoConfig};

fn ticks(params: GaitParams, duration: f64, noise: NoiseConfig) -> Vec<TickInput<f64>> {
    let model = RobotModel::reference_biped();
    let sim = Simulator::new(model.clone(), SimConfig::default());
    let mut ctrl = GaitController::new(&model, params).unwrap();
    let tr = sim.run(ctrl.initial_state(&model).unwrap(), &mut ctrl, duration).unwrap();
    let log = synthesize_sensors(&tr, model.gravity, &noise, &VoConfig::default()).unwrap();
    build_ticks(&log, &FrontendConfig::default()).unwrap()
}

#[test]
fn dkf_equals_unconstrained_window_one_mhe() {
    let model = RobotModel::reference_biped();
    let cfg = MheConfig {
        window_size: 1,
        constraints: ConstraintMode::None,
        ..MheConfig::default()
    };
    let mut mhe = MheEstimator::new(model.clone(), cfg.clone()).unwrap();
    let mut dkf = Dkf::new(model, DkfConfig::matching(&cfg)).unwrap();
    let mut applied = 0;
    for t in ticks(GaitParams::default(), 2.0, NoiseConfig::default()) {
        let a = mhe.step(&t).unwrap();
        let b = dkf.step(&t).unwrap();
        assert!(!b.clamped);
        assert_eq!(a.diagnostics.vo_applied, b.vo_applied);
        applied += b.vo_applied;
        assert!((&a.state - &b.state).amax() < 1e-6, "t={}", t.t);
    }
    assert!(applied > 50);
}

#[test]
fn dkf_standing_supports_weight() {
    let model = RobotModel::reference_biped();
    let weight = model.total_mass() * model.gravity;
    let mut dkf = Dkf::new(model, DkfConfig::default()).unwrap();
    for t in ticks(GaitParams::standing(), 1.0, NoiseConfig::noiseless()) {
        let out = dkf.step(&t).unwrap();
        if t.t > 0.3 {
            let fz: f64 = out.forces.iter().map(|f| f.y).sum();
            assert!((fz - weight).abs() < 0.01 * weight, "t={} fz={fz}", t.t);
        }
    }
}

#[test]
fn indefinite_covariance_is_clamped_and_flagged() {
    let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    let (c, flagged) = clamp_psd(p);
    assert!(flagged);
    let eig = c.symmetric_eigen().eigenvalues;
    assert!(eig.min() >= 1e-12 * 0.999);
    let (same, flagged) = clamp_psd(DMatrix::<f64>::identity(3, 3));
    assert!(!flagged);
    assert_eq!(same, DMatrix::identity(3, 3));
}

#[test]
fn observer_residual_stays_zero_in_flight() {
    let model = RobotModel::reference_biped();
    let sim = Simulator::new(
        model.clone(),
        SimConfig {
            dt: 2e-4,
            ..SimConfig::default()
        },
    );
    let ctrl = GaitController::new(&model, GaitParams::standing()).unwrap();
    let mut init = ctrl.initial_state(&model).unwrap();
    init.state.q[1] += 1.0;
    init.state.qdot[3] = 0.5;
    let tr = sim.run(init, &mut Passive, 0.4).unwrap();
    assert!(tr.iter().all(|s| s.contact_flags.iter().all(|c| !c)));
    let mut mbo = Mbo::new(model, MboConfig::default()).unwrap();
    for s in &tr[1..] {
        let out = mbo
            .step(&MboInput {
                t: s.time,
                state: s.state.clone(),
                torques: s.torques.clone(),
                contacts: s.contact_flags.clone(),
            })
            .unwrap();
        assert!(out.residual.amax() < 1e-3, "t={} r={}", s.time, out.residual.amax());
        assert!(out.forces.iter().all(|f| *f == Vector2::zeros()));
    }
}

#[test]
fn observer_step_response_has_gain_time_constant() {
    // Robot held still by constant foot forces: the external torque is a step.
    let model = RobotModel::reference_biped();
    let q = DVector::from_vec(vec![0.0, 0.55, 0.05, 0.4, -0.8, 0.2, -0.6]);
    let (torques, forces) = static_support(&model, &q, &[true, true]).unwrap();
    let gain = 50.0;
    let mut mbo = Mbo::new(model.clone(), MboConfig { gain }).unwrap();
    let dt = 2e-4;
    let state = GeneralizedState::new(q.clone(), DVector::zeros(q.len()));
    let input = |k: usize| MboInput {
        t: k as f64 * dt,
        state: state.clone(),
        torques: torques.clone(),
        contacts: vec![true, true],
    };
    // The vertical base row has no actuation, so its steady value is the weight term.
    let steady = crate::dynamics::compute_dynamics_terms(&model, &state).unwrap().gravity[1];
    mbo.step(&input(0)).unwrap();
    let mut crossing = None;
    let mut last = None;
    for k in 1..=(10.0 / gain / dt) as usize {
        let out = mbo.step(&input(k)).unwrap();
        let t = k as f64 * dt;
        if crossing.is_none() && out.residual[1] / steady >= 1.0 - (-1.0f64).exp() {
            crossing = Some(t);
        }
        last = Some(out);
    }
    let tau = crossing.expect("response never reached 63%");
    assert!((tau - 1.0 / gain).abs() <= 0.05 / gain, "time constant {tau}");
    let out = last.unwrap();
    for (f, truth) in out.forces.iter().zip(&forces) {
        assert!((f - truth).amax() < 1e-3 * truth.norm(), "{f} vs {truth}");
    }
}

#[test]
fn observer_rejects_non_positive_gain() {
    let model = RobotModel::reference_biped();
    assert!(Mbo::new(model.clone(), MboConfig { gain: 0.0 }).is_err());
    assert!(Mbo::new(model, MboConfig { gain: f64::NAN }).is_err());
}
