//! Planar floating-base rigid-body dynamics.
//!
//! The equations of motion are written as
//! `M(q) q̈ + C(q, q̇) q̇ + G(q) = B u + Σ J_iᵀ f_i` with `+z` up, so the vertical
//! base entry of `G` is `+m_total g`. `C` is built from Christoffel symbols, which
//! guarantees `Ṁ = C + Cᵀ` and lets the generalized momentum `m = M q̇` evolve as
//! `ṁ = Cᵀ q̇ - G + B u + Σ J_iᵀ f_i`.

mod kinematics;
mod model;
mod state;

pub use model::{Leg, Link, RobotModel};
pub use state::GeneralizedState;

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{Error, Result};
use crate::scalar::{cross2, Real};
use kinematics::{Frame, LegPoint};

/// Mass, Coriolis and gravity terms evaluated at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsTerms<T: Real> {
    pub mass: DMatrix<T>,
    pub coriolis: DMatrix<T>,
    pub gravity: DVector<T>,
}

impl<T: Real> DynamicsTerms<T> {
    /// Columns of `M` multiplying the base linear velocity, `(3+n) × 2`.
    pub fn m1(&self) -> DMatrix<T> {
        self.mass.columns(0, 2).into_owned()
    }

    /// Remaining columns of `M`, `(3+n) × (1+n)`.
    pub fn m2(&self) -> DMatrix<T> {
        let d = self.mass.ncols();
        self.mass.columns(2, d - 2).into_owned()
    }

    /// Rows of `C` paired with the base linear velocity, `2 × (3+n)`.
    pub fn c1(&self) -> DMatrix<T> {
        self.coriolis.rows(0, 2).into_owned()
    }

    /// Remaining rows of `C`, `(1+n) × (3+n)`.
    pub fn c2(&self) -> DMatrix<T> {
        let d = self.coriolis.nrows();
        self.coriolis.rows(2, d - 2).into_owned()
    }
}

/// Kinematics of one point foot.
#[derive(Clone, Debug, PartialEq)]
pub struct FootKinematics<T: Real> {
    /// Foot position in the base frame (forward kinematics).
    pub fk: Vector2<T>,
    /// Body Jacobian: joint rates to body-frame foot velocity, `2 × n`.
    pub body_jacobian: DMatrix<T>,
    /// World contact Jacobian: generalized velocity to world foot velocity, `2 × (3+n)`.
    pub contact_jacobian: DMatrix<T>,
    pub position: Vector2<T>,
    pub velocity: Vector2<T>,
}

fn links<T: Real>(model: &RobotModel<T>, frame: &Frame<T>) -> Vec<(LegPoint<T>, T, T, usize)> {
    let mut out = Vec::with_capacity(model.n_joints());
    for (l, leg) in model.legs.iter().enumerate() {
        for (k, link) in leg.links.iter().enumerate() {
            out.push((
                LegPoint {
                    leg: l,
                    upstream: k + 1,
                    body: frame.geometry[l].coms[k],
                },
                link.mass,
                link.inertia,
                frame.offsets[l] + k,
            ));
        }
    }
    out
}

/// Adds `I ωᵀω` where the link rate is the pitch rate plus joints `first..=last`.
fn add_rotational<T: Real>(mass: &mut DMatrix<T>, inertia: T, first: usize, last: usize) {
    let mut idx = vec![2];
    idx.extend((first..=last).map(|j| 3 + j));
    for &a in &idx {
        for &b in &idx {
            mass[(a, b)] += inertia;
        }
    }
}

fn mass_and_derivatives<T: Real>(
    model: &RobotModel<T>,
    frame: &Frame<T>,
    with_derivatives: bool,
) -> (DMatrix<T>, Vec<DMatrix<T>>, DVector<T>) {
    let dof = frame.dof;
    let mut mass = DMatrix::zeros(dof, dof);
    let mut gravity = DVector::zeros(dof);
    let mut dmass = if with_derivatives {
        vec![DMatrix::zeros(dof, dof); dof]
    } else {
        Vec::new()
    };
    mass[(0, 0)] = model.base_mass;
    mass[(1, 1)] = model.base_mass;
    mass[(2, 2)] = model.base_inertia;
    gravity[1] = model.base_mass * model.gravity;

    for (point, m, inertia, joint) in links(model, frame) {
        let jac = frame.jacobian(&point);
        mass.gemm_tr(m, &jac, &jac, T::one());
        let first = frame.offsets[point.leg];
        add_rotational(&mut mass, inertia, first, joint);
        let g = m * model.gravity;
        for c in 0..dof {
            gravity[c] += g * jac[(1, c)];
        }
        if with_derivatives {
            for (k, dj) in frame.jacobian_derivatives(&point, &jac).into_iter().enumerate() {
                let prod = dj.transpose() * &jac * m;
                dmass[k] += &prod + prod.transpose();
            }
        }
    }
    (mass, dmass, gravity)
}

/// Evaluates `M`, `C` and `G` at `state`.
pub fn compute_dynamics_terms<T: Real>(
    model: &RobotModel<T>,
    state: &GeneralizedState<T>,
) -> Result<DynamicsTerms<T>> {
    state.check(model)?;
    let frame = Frame::new(model, state.q.as_slice());
    let (mass, dmass, gravity) = mass_and_derivatives(model, &frame, true);
    let dof = frame.dof;
    // C = ½ (Ṁ + X - Xᵀ) with X[:, j] = (∂M/∂q_j) q̇.
    let mut mdot = DMatrix::zeros(dof, dof);
    let mut x = DMatrix::zeros(dof, dof);
    for (k, dm) in dmass.iter().enumerate() {
        mdot += dm * state.qdot[k];
        x.set_column(k, &(dm * &state.qdot));
    }
    let half: T = nalgebra::convert(0.5);
    let coriolis = (mdot + &x - x.transpose()) * half;
    Ok(DynamicsTerms {
        mass,
        coriolis,
        gravity,
    })
}

/// Mass matrix and bias force `h = C q̇ + G`, as needed for forward dynamics.
pub fn mass_and_bias<T: Real>(model: &RobotModel<T>, state: &GeneralizedState<T>) -> Result<(DMatrix<T>, DVector<T>)> {
    state.check(model)?;
    let frame = Frame::new(model, state.q.as_slice());
    let (mass, _, mut bias) = mass_and_derivatives(model, &frame, false);
    let qd = state.qdot.as_slice();
    for (point, m, _, _) in links(model, &frame) {
        let a = frame.bias_acceleration(&point, qd) * m;
        let jac = frame.jacobian(&point);
        for c in 0..frame.dof {
            bias[c] += jac[(0, c)] * a.x + jac[(1, c)] * a.y;
        }
    }
    Ok((mass, bias))
}

/// Gravitational potential energy (zero at z = 0).
pub fn potential_energy<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> Result<T> {
    if q.len() != model.dof() {
        return Err(Error::DimensionMismatch {
            context: "q",
            expected: model.dof(),
            got: q.len(),
        });
    }
    let frame = Frame::new(model, q.as_slice());
    let mut e = model.base_mass * model.gravity * q[1];
    for (point, m, _, _) in links(model, &frame) {
        e += m * model.gravity * (q[1] + (frame.rotation * point.body).y);
    }
    Ok(e)
}

/// Mass matrix only (cheaper than the full terms).
pub fn mass_matrix<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> Result<DMatrix<T>> {
    if q.len() != model.dof() {
        return Err(Error::DimensionMismatch {
            context: "q",
            expected: model.dof(),
            got: q.len(),
        });
    }
    let frame = Frame::new(model, q.as_slice());
    Ok(mass_and_derivatives(model, &frame, false).0)
}

/// Analytic `Ṁ = Σ_k ∂M/∂q_k q̇_k`.
pub fn mass_matrix_rate<T: Real>(model: &RobotModel<T>, state: &GeneralizedState<T>) -> Result<DMatrix<T>> {
    state.check(model)?;
    let frame = Frame::new(model, state.q.as_slice());
    let (_, dmass, _) = mass_and_derivatives(model, &frame, true);
    let dof = frame.dof;
    Ok(dmass
        .iter()
        .enumerate()
        .fold(DMatrix::zeros(dof, dof), |acc, (k, dm)| acc + dm * state.qdot[k]))
}

/// Forward kinematics and Jacobians of `foot`.
pub fn compute_foot_kinematics<T: Real>(
    model: &RobotModel<T>,
    state: &GeneralizedState<T>,
    foot: usize,
) -> Result<FootKinematics<T>> {
    state.check(model)?;
    if foot >= model.n_feet() {
        return Err(Error::UnknownFoot(foot));
    }
    let frame = Frame::new(model, state.q.as_slice());
    Ok(foot_from_frame(model, &frame, state, foot))
}

/// Kinematics of every foot, sharing one configuration evaluation.
pub fn all_foot_kinematics<T: Real>(
    model: &RobotModel<T>,
    state: &GeneralizedState<T>,
) -> Result<Vec<FootKinematics<T>>> {
    state.check(model)?;
    let frame = Frame::new(model, state.q.as_slice());
    Ok((0..model.n_feet())
        .map(|f| foot_from_frame(model, &frame, state, f))
        .collect())
}

fn foot_from_frame<T: Real>(
    model: &RobotModel<T>,
    frame: &Frame<T>,
    state: &GeneralizedState<T>,
    foot: usize,
) -> FootKinematics<T> {
    let geo = &frame.geometry[foot];
    let point = LegPoint {
        leg: foot,
        upstream: model.legs[foot].links.len(),
        body: *geo.pivots.last().expect("leg has a foot"),
    };
    let contact_jacobian = frame.jacobian(&point);
    let body_jacobian = frame.body_jacobian(&point, model.n_joints());
    let v = &contact_jacobian * &state.qdot;
    FootKinematics {
        fk: point.body,
        body_jacobian,
        position: state.position() + frame.rotation * point.body,
        velocity: Vector2::new(v[0], v[1]),
        contact_jacobian,
    }
}

/// Generalized momentum `m = M(q) q̇`.
pub fn generalized_momentum<T: Real>(model: &RobotModel<T>, state: &GeneralizedState<T>) -> Result<DVector<T>> {
    state.check(model)?;
    Ok(mass_matrix(model, &state.q)? * &state.qdot)
}

/// Linearized momentum rate `ṁ = C₁ᵀ v + C₂ᵀ [ω; α̇] - G + B u + Σ J_iᵀ f_i`.
///
/// `C`, `G` and `J_i` are evaluated at configuration `q` with generalized velocity
/// `[velocity; pitch_rate; joint_rates]`; `grfs` holds one world-frame force per foot.
pub fn momentum_rate<T: Real>(
    model: &RobotModel<T>,
    q: &DVector<T>,
    velocity: Vector2<T>,
    pitch_rate: T,
    joint_rates: &DVector<T>,
    torques: &DVector<T>,
    grfs: &[Vector2<T>],
) -> Result<DVector<T>> {
    let n = model.n_joints();
    if joint_rates.len() != n || torques.len() != n {
        return Err(Error::DimensionMismatch {
            context: "momentum_rate joint vectors",
            expected: n,
            got: joint_rates.len().min(torques.len()),
        });
    }
    if grfs.len() != model.n_feet() {
        return Err(Error::DimensionMismatch {
            context: "momentum_rate forces",
            expected: model.n_feet(),
            got: grfs.len(),
        });
    }
    let state = GeneralizedState::from_parts(
        Vector2::new(q[0], q[1]),
        q[2],
        &q.as_slice()[3..],
        velocity,
        pitch_rate,
        joint_rates.as_slice(),
    );
    let terms = compute_dynamics_terms(model, &state)?;
    let mut rate = terms.coriolis.tr_mul(&state.qdot) - &terms.gravity;
    for j in 0..n {
        rate[3 + j] += torques[j];
    }
    for (foot, f) in grfs.iter().enumerate() {
        let kin = compute_foot_kinematics(model, &state, foot)?;
        rate += kin.contact_jacobian.tr_mul(&DVector::from_column_slice(f.as_slice()));
    }
    Ok(rate)
}

/// Static support solution: foot forces that balance the base rows of `G` (minimum norm)
/// and the joint torques that then balance the joint rows.
pub fn static_support<T: Real>(
    model: &RobotModel<T>,
    q: &DVector<T>,
    stance: &[bool],
) -> Result<(DVector<T>, Vec<Vector2<T>>)> {
    let state = GeneralizedState::new(q.clone(), DVector::zeros(q.len()));
    let terms = compute_dynamics_terms(model, &state)?;
    let feet = all_foot_kinematics(model, &state)?;
    let active: Vec<usize> = (0..model.n_feet()).filter(|&f| stance.get(f).copied().unwrap_or(false)).collect();
    let n = model.n_joints();
    let mut forces = vec![Vector2::zeros(); model.n_feet()];
    let mut residual = terms.gravity.clone();
    if !active.is_empty() {
        let mut a = DMatrix::zeros(3, 2 * active.len());
        for (s, &f) in active.iter().enumerate() {
            let jt = feet[f].contact_jacobian.columns(0, 3).transpose();
            a.view_mut((0, 2 * s), (3, 2)).copy_from(&jt);
        }
        let g_base = terms.gravity.rows(0, 3).into_owned();
        let eps: T = nalgebra::convert(1e-12);
        let sol = a
            .svd(true, true)
            .solve(&g_base, eps)
            .map_err(|e| Error::Contract(e.to_string()))?;
        for (s, &f) in active.iter().enumerate() {
            forces[f] = Vector2::new(sol[2 * s], sol[2 * s + 1]);
            residual -= feet[f].contact_jacobian.tr_mul(&DVector::from_column_slice(forces[f].as_slice()));
        }
    }
    Ok((residual.rows(3, n).into_owned(), forces))
}

/// Leg-odometry velocity `-R (J_b α̇ + ω × fk)` implied by a stationary foot.
pub fn stationary_foot_velocity<T: Real>(
    rotation: &nalgebra::Matrix2<T>,
    foot: &FootKinematics<T>,
    pitch_rate: T,
    joint_rates: &DVector<T>,
) -> Vector2<T> {
    let jb = &foot.body_jacobian * joint_rates;
    -(rotation * (Vector2::new(jb[0], jb[1]) + cross2(pitch_rate, &foot.fk)))
}

#[cfg(test)]
mod tests;
