use nalgebra::{DMatrix, DVector, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_state(rng: &mut impl Rng, model: &RobotModel<f64>) -> GeneralizedState<f64> {
    let dof = model.dof();
    let mut q = DVector::zeros(dof);
    let mut qd = DVector::zeros(dof);
    q[0] = rng.random_range(-1.0..1.0);
    q[1] = rng.random_range(0.2..0.8);
    q[2] = rng.random_range(-0.8..0.8);
    for i in 3..dof {
        q[i] = rng.random_range(-1.5..1.5);
    }
    for i in 0..dof {
        qd[i] = rng.random_range(-2.0..2.0);
    }
    GeneralizedState::new(q, qd)
}

/// Central-difference `dM/dt` along `q̇`, independent of the analytic derivative path.
fn mdot_fd(model: &RobotModel<f64>, s: &GeneralizedState<f64>, eps: f64) -> DMatrix<f64> {
    let plus = mass_matrix(model, &(&s.q + &s.qdot * eps)).unwrap();
    let minus = mass_matrix(model, &(&s.q - &s.qdot * eps)).unwrap();
    (plus - minus) / (2.0 * eps)
}

fn world_foot(model: &RobotModel<f64>, q: &DVector<f64>, foot: usize) -> Vector2<f64> {
    let s = GeneralizedState::new(q.clone(), DVector::zeros(q.len()));
    compute_foot_kinematics(model, &s, foot).unwrap().position
}

#[test]
fn base_only_identity() {
    let model = RobotModel::base_only(5.0, 0.1);
    let s = GeneralizedState::new(DVector::from_vec(vec![0.3, 1.2, 0.4]), DVector::zeros(3));
    let t = compute_dynamics_terms(&model, &s).unwrap();
    assert_eq!(t.mass, DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 5.0, 0.1])));
    assert_eq!(t.coriolis, DMatrix::zeros(3, 3));
    assert_eq!(t.gravity, DVector::from_vec(vec![0.0, 5.0 * 9.81, 0.0]));
}

#[test]
fn dimension_mismatch_is_reported() {
    let model = RobotModel::<f64>::reference_biped();
    let s = GeneralizedState::zeros(5);
    assert!(matches!(
        compute_dynamics_terms(&model, &s),
        Err(Error::DimensionMismatch { .. })
    ));
    let s = GeneralizedState::zeros(7);
    assert!(matches!(compute_foot_kinematics(&model, &s, 2), Err(Error::UnknownFoot(2))));
}

#[test]
fn skew_symmetry_identity_holds_on_random_states() {
    let model = RobotModel::reference_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let s = random_state(&mut rng, &model);
        let t = compute_dynamics_terms(&model, &s).unwrap();
        let fd = mdot_fd(&model, &s, 1e-6);
        let err = (&fd - (&t.coriolis + t.coriolis.transpose())).norm() / fd.norm();
        assert!(err < 1e-5, "relative error {err}");
        let analytic = mass_matrix_rate(&model, &s).unwrap();
        assert!((&fd - analytic).norm() / fd.norm() < 1e-6);
    }
}

#[test]
fn mass_matrix_is_positive_definite() {
    let model = RobotModel::reference_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let s = random_state(&mut rng, &model);
        let m = mass_matrix(&model, &s.q).unwrap();
        assert!((&m - m.transpose()).norm() < 1e-12);
        assert!(m.cholesky().is_some());
    }
}

#[test]
fn partitions_reassemble_exactly() {
    let model = RobotModel::reference_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let s = random_state(&mut rng, &model);
        let t = compute_dynamics_terms(&model, &s).unwrap();
        let (m1, m2) = (t.m1(), t.m2());
        assert_eq!(m1.shape(), (7, 2));
        assert_eq!(m2.shape(), (7, 5));
        let mut m = DMatrix::zeros(7, 7);
        m.columns_mut(0, 2).copy_from(&m1);
        m.columns_mut(2, 5).copy_from(&m2);
        assert_eq!(m, t.mass);
        let mut c = DMatrix::zeros(7, 7);
        c.rows_mut(0, 2).copy_from(&t.c1());
        c.rows_mut(2, 5).copy_from(&t.c2());
        assert_eq!(c, t.coriolis);
    }
}

#[test]
fn gravity_vertical_entry_is_total_weight() {
    let model = RobotModel::reference_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = random_state(&mut rng, &model);
    let t = compute_dynamics_terms(&model, &s).unwrap();
    assert!((t.gravity[1] - 13.0 * 9.81).abs() < 1e-9);
    assert_eq!(t.gravity[0], 0.0);
}

#[test]
fn gravity_is_gradient_of_potential() {
    let model = RobotModel::reference_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // Potential from link centres of mass, computed independently of the Jacobians.
    let potential = |q: &DVector<f64>| {
        let frame = kinematics::Frame::new(&model, q.as_slice());
        let mut v = model.base_mass * model.gravity * q[1];
        for (l, leg) in model.legs.iter().enumerate() {
            for (k, link) in leg.links.iter().enumerate() {
                let c = Vector2::new(q[0], q[1]) + frame.rotation * frame.geometry[l].coms[k];
                v += link.mass * model.gravity * c.y;
            }
        }
        v
    };
    for _ in 0..20 {
        let s = random_state(&mut rng, &model);
        let t = compute_dynamics_terms(&model, &s).unwrap();
        for k in 0..7 {
            let mut e = DVector::zeros(7);
            e[k] = 1e-6;
            let fd = (potential(&(&s.q + &e)) - potential(&(&s.q - &e))) / 2e-6;
            assert!((fd - t.gravity[k]).abs() < 1e-6);
        }
        assert!((potential_energy(&model, &s.q).unwrap() - potential(&s.q)).abs() < 1e-12);
    }
}

#[test]
fn straight_leg_geometry() {
    let model = RobotModel::reference_biped();
    let s = GeneralizedState::zeros(7);
    let k = compute_foot_kinematics(&model, &s, 0).unwrap();
    assert!((k.fk - Vector2::new(0.0, -0.5)).norm() < 1e-15);
    assert_eq!(k.velocity, Vector2::zeros());
}

#[test]
fn contact_jacobian_matches_finite_differences() {
    let model = RobotModel::reference_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let s = random_state(&mut rng, &model);
        for foot in 0..2 {
            let kin = compute_foot_kinematics(&model, &s, foot).unwrap();
            for c in 0..7 {
                let mut e = DVector::zeros(7);
                e[c] = 1e-7;
                let fd = (world_foot(&model, &(&s.q + &e), foot) - world_foot(&model, &s.q, foot)) / 1e-7;
                let col = Vector2::new(kin.contact_jacobian[(0, c)], kin.contact_jacobian[(1, c)]);
                assert!((fd - col).norm() < 1e-5, "foot {foot} col {c}");
            }
            let v = &kin.contact_jacobian * &s.qdot;
            assert_eq!(kin.velocity, Vector2::new(v[0], v[1]));
        }
    }
}

#[test]
fn body_jacobian_is_joint_block_in_body_frame() {
    let model = RobotModel::reference_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let s = random_state(&mut rng, &model);
    let kin = compute_foot_kinematics(&model, &s, 1).unwrap();
    let r = crate::scalar::rot2(s.pitch());
    let world_joint_block = r * &kin.body_jacobian;
    let expected = kin.contact_jacobian.columns(3, 4);
    assert!((world_joint_block - expected).norm() < 1e-12);
    assert_eq!(kin.body_jacobian.columns(0, 2), DMatrix::zeros(2, 2));
}

#[test]
fn momentum_trivial_cases() {
    let model = RobotModel::reference_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut s = random_state(&mut rng, &model);
    s.qdot.fill(0.0);
    assert_eq!(generalized_momentum(&model, &s).unwrap(), DVector::zeros(7));

    let base = RobotModel::base_only(5.0, 0.1);
    let s = GeneralizedState::new(DVector::zeros(3), DVector::from_vec(vec![1.0, 0.0, 0.0]));
    assert_eq!(generalized_momentum(&base, &s).unwrap(), DVector::from_vec(vec![5.0, 0.0, 0.0]));
}

#[test]
fn momentum_matches_mass_product() {
    let model = RobotModel::reference_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..20 {
        let s = random_state(&mut rng, &model);
        let t = compute_dynamics_terms(&model, &s).unwrap();
        let mut expected = DVector::zeros(7);
        for i in 0..7 {
            for j in 0..7 {
                expected[i] += t.mass[(i, j)] * s.qdot[j];
            }
        }
        assert!((generalized_momentum(&model, &s).unwrap() - expected).amax() < 1e-12);
    }
}

#[test]
fn momentum_rate_free_fall_is_minus_gravity() {
    let model = RobotModel::reference_biped();
    let q = DVector::from_vec(vec![0.0, 1.0, 0.1, 0.2, -0.4, -0.1, -0.3]);
    let rate = momentum_rate(
        &model,
        &q,
        Vector2::zeros(),
        0.0,
        &DVector::zeros(4),
        &DVector::zeros(4),
        &[Vector2::zeros(); 2],
    )
    .unwrap();
    let s = GeneralizedState::new(q, DVector::zeros(7));
    let g = compute_dynamics_terms(&model, &s).unwrap().gravity;
    assert!((rate.clone() + &g).amax() < 1e-12);
    assert!((rate[1] + 13.0 * 9.81f64).abs() < 1e-9);
}

#[test]
fn momentum_rate_vanishes_in_static_stance() {
    let model = RobotModel::reference_biped();
    let q = DVector::from_vec(vec![0.0, 0.45, 0.0, 0.35, -0.5, -0.1, -0.4]);
    let (u, f) = static_support(&model, &q, &[true, true]).unwrap();
    let rate = momentum_rate(&model, &q, Vector2::zeros(), 0.0, &DVector::zeros(4), &u, &f).unwrap();
    assert!(rate.amax() < 1e-9, "{rate}");
    assert!((f[0].y + f[1].y - 13.0 * 9.81f64).abs() < 1e-9);
}

#[test]
fn generic_over_f32() {
    let model = RobotModel::<f32>::reference_biped();
    let s = GeneralizedState::new(
        DVector::from_vec(vec![0.0, 0.5, 0.1, 0.3, -0.6, -0.2, -0.3]),
        DVector::from_vec(vec![0.2, -0.1, 0.3, 1.0, -1.0, 0.5, 0.4]),
    );
    let t = compute_dynamics_terms(&model, &s).unwrap();
    let m64 = RobotModel::<f64>::reference_biped();
    let s64 = GeneralizedState::new(s.q.map(|v| v as f64), s.qdot.map(|v| v as f64));
    let t64 = compute_dynamics_terms(&m64, &s64).unwrap();
    assert!((t.mass.map(|v| v as f64) - t64.mass).amax() < 1e-5);
    assert!(t.mass.clone().cholesky().is_some());
}

proptest! {
    #[test]
    fn leg_odometry_velocity_recovers_base_velocity_for_stationary_foot(
        pitch in -0.6f64..0.6, a0 in -1.2f64..1.2, a1 in -1.2f64..0.0,
        w in -2.0f64..2.0, r0 in -2.0f64..2.0, r1 in -2.0f64..2.0,
    ) {
        let model = RobotModel::reference_biped();
        let mut s = GeneralizedState::from_parts(
            Vector2::new(0.0, 0.5), pitch, &[a0, a1, 0.1, -0.2],
            Vector2::zeros(), w, &[r0, r1, 0.0, 0.0],
        );
        // Choose the base velocity that keeps foot 0 fixed in the world.
        let kin = compute_foot_kinematics(&model, &s, 0).unwrap();
        let rest = &kin.contact_jacobian * &s.qdot;
        s.qdot[0] = -rest[0];
        s.qdot[1] = -rest[1];
        let kin = compute_foot_kinematics(&model, &s, 0).unwrap();
        prop_assert!(kin.velocity.norm() < 1e-12);
        let est = stationary_foot_velocity(
            &crate::scalar::rot2(pitch), &kin, w, &s.joint_rates().into_owned());
        prop_assert!((est - s.velocity()).norm() < 1e-12);
    }
}

#[test]
fn bias_force_matches_coriolis_product() {
    let model = RobotModel::reference_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let s = random_state(&mut rng, &model);
        let terms = compute_dynamics_terms(&model, &s).unwrap();
        let (mass, bias) = mass_and_bias(&model, &s).unwrap();
        assert_eq!(mass, terms.mass);
        let expected = &terms.coriolis * &s.qdot + &terms.gravity;
        assert!((bias - &expected).amax() < 1e-10 * (1.0 + expected.amax()));
    }
}
