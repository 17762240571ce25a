//! Robot-specific process, measurement and contact factors for one tick.

use nalgebra::{DMatrix, DVector, Vector2};

use super::frontend::TickInput;
use super::window::{LinearRows, Residual, TickFactors};
use crate::dynamics::{
    all_foot_kinematics, compute_dynamics_terms, stationary_foot_velocity, DynamicsTerms, FootKinematics,
    GeneralizedState, RobotModel,
};
use crate::error::{Error, Result};
use crate::scalar::{lit, positive, rot2, Real};

/// Offsets of the blocks of `x = [p, v, b_a, m, f_1, f_2, ...]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateLayout {
    pub n_joints: usize,
    pub n_feet: usize,
}

impl StateLayout {
    pub fn for_model<T: Real>(model: &RobotModel<T>) -> Self {
        Self {
            n_joints: model.n_joints(),
            n_feet: model.n_feet(),
        }
    }

    pub const P: usize = 0;
    pub const V: usize = 2;
    pub const B: usize = 4;
    pub const M: usize = 6;

    pub fn momentum_dim(&self) -> usize {
        3 + self.n_joints
    }

    pub fn force(&self, foot: usize) -> usize {
        Self::M + self.momentum_dim() + 2 * foot
    }

    pub fn dim(&self) -> usize {
        self.force(self.n_feet)
    }
}

/// Process and measurement noise. Process entries are continuous-time densities
/// (per √s) unless stated otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel<T> {
    /// Accelerometer white noise (m/s²), entering position and velocity propagation.
    pub accel: T,
    /// Extra position random walk (m/√s).
    pub position_walk: T,
    /// Accelerometer bias random walk (m/s²/√s).
    pub bias_walk: T,
    /// Momentum model uncertainty of the base rows (N·√s, N·m·√s).
    pub momentum_model: T,
    /// Momentum model uncertainty of the joint rows (N·m·√s).
    pub momentum_model_joints: T,
    /// Force random walk (N·√s).
    pub force_walk: T,
    /// Leg-odometry velocity std (m/s).
    pub leg_odometry: T,
    /// Momentum measurement std per row.
    pub momentum_measurement: T,
    /// Per-tick VO displacement std (m).
    pub vo_displacement: T,
}

impl<T: Real> Default for NoiseModel<T> {
    fn default() -> Self {
        Self {
            accel: lit(0.04),
            position_walk: lit(1e-3),
            bias_walk: lit(5e-3),
            momentum_model: lit(0.3),
            momentum_model_joints: lit(0.1),
            force_walk: lit(3200.0),
            leg_odometry: lit(0.02),
            momentum_measurement: lit(0.02),
            vo_displacement: lit(1e-3),
        }
    }
}

impl<T: Real> NoiseModel<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.accel,
            self.position_walk,
            self.bias_walk,
            self.momentum_model,
            self.momentum_model_joints,
            self.force_walk,
            self.leg_odometry,
            self.momentum_measurement,
            self.vo_displacement,
        ];
        if all.iter().all(|s| *s > T::zero() && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::Contract("noise standard deviations must be positive and finite".into()))
        }
    }

    /// Multiplies every standard deviation by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            accel: self.accel * factor,
            position_walk: self.position_walk * factor,
            bias_walk: self.bias_walk * factor,
            momentum_model: self.momentum_model * factor,
            momentum_model_joints: self.momentum_model_joints * factor,
            force_walk: self.force_walk * factor,
            leg_odometry: self.leg_odometry * factor,
            momentum_measurement: self.momentum_measurement * factor,
            vo_displacement: self.vo_displacement * factor,
        }
    }
}

/// Counts consecutive stance ticks per foot and reports which feet are settled,
/// i.e. in contact for more than `settle` ticks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StanceTracker {
    settle: usize,
    run: Vec<usize>,
}

impl StanceTracker {
    pub fn new(settle: usize) -> Self {
        Self { settle, run: Vec::new() }
    }

    pub fn update(&mut self, contacts: &[bool]) -> Vec<bool> {
        self.run.resize(contacts.len(), 0);
        for (run, c) in self.run.iter_mut().zip(contacts) {
            *run = if *c { *run + 1 } else { 0 };
        }
        self.run.iter().map(|r| *r > self.settle).collect()
    }
}

/// Which hard contact constraints are assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintMode {
    None,
    /// Stance feet static, swing feet force-free, normal force non-negative.
    Complementarity,
    /// As above but only the normal velocity of stance feet is constrained.
    Slippery,
}

/// Dynamics evaluated at one tick's configuration estimate.
#[derive(Clone, Debug)]
pub struct TickModel<T: Real> {
    pub terms: DynamicsTerms<T>,
    pub feet: Vec<FootKinematics<T>>,
    pub rotation: nalgebra::Matrix2<T>,
}

/// Evaluates `M`, `C`, `G` and foot Jacobians at `q̂ = [0, pitch, α̃]` and
/// `q̇̂ = [velocity, ω̃, α̇̃]`. Base position does not enter any of them.
pub fn evaluate_tick<T: Real>(model: &RobotModel<T>, input: &TickInput<T>, velocity: Vector2<T>) -> Result<TickModel<T>> {
    let state = GeneralizedState::from_parts(
        Vector2::zeros(),
        input.pitch,
        input.joints.as_slice(),
        velocity,
        input.pitch_rate,
        input.joint_rates.as_slice(),
    );
    let terms = compute_dynamics_terms(model, &state)?;
    let feet = all_foot_kinematics(model, &state)?;
    Ok(TickModel {
        terms,
        feet,
        rotation: rot2(input.pitch),
    })
}

fn rates<T: Real>(input: &TickInput<T>) -> DVector<T> {
    let n = input.joint_rates.len();
    DVector::from_fn(1 + n, |i, _| if i == 0 { input.pitch_rate } else { input.joint_rates[i - 1] })
}

fn gravity_vec<T: Real>(model: &RobotModel<T>) -> Vector2<T> {
    Vector2::new(T::zero(), -model.gravity)
}

/// Linear process between two ticks in implicit form `(I - G) x_{k+1} = F x_k + u + w`.
///
/// The force of tick `k+1` drives the momentum over `(t_k, t_{k+1}]`, so `G` holds
/// `Δt Jᵀ` in the momentum rows and force columns. `G² = 0`, hence `(I - G)⁻¹ = I + G`.
#[derive(Clone, Debug)]
pub struct Transition<T: Real> {
    pub f: DMatrix<T>,
    pub g: DMatrix<T>,
    pub u: DVector<T>,
    /// Diagonal covariance of `w`.
    pub q: DVector<T>,
}

impl<T: Real> Transition<T> {
    fn inverse_lhs(&self) -> DMatrix<T> {
        let d = self.u.len();
        DMatrix::identity(d, d) + &self.g
    }

    /// Noise-free prediction of `x_{k+1}`.
    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        self.inverse_lhs() * (&self.f * x + &self.u)
    }

    /// Explicit form `x_{k+1} = A x_k + b + (I + G) w`: returns `A` and the covariance
    /// of `(I + G) w`.
    pub fn explicit(&self) -> (DMatrix<T>, DMatrix<T>) {
        let inv = self.inverse_lhs();
        let a = &inv * &self.f;
        let cov = &inv * DMatrix::from_diagonal(&self.q) * inv.transpose();
        (a, cov)
    }

    /// The same model as a pair residual `(I - G) x_{k+1} - F x_k - u`.
    pub fn residual(&self) -> Residual<T> {
        let d = self.u.len();
        Residual::pair(-&self.f, DMatrix::identity(d, d) - &self.g, self.u.clone(), self.q.map(|v| T::one() / v))
    }
}

/// Process model from `prev` to `next`. Drift terms use the dynamics at `prev`; the
/// contact Jacobians multiplying the new force use `next`.
pub fn transition<T: Real>(
    model: &RobotModel<T>,
    layout: &StateLayout,
    noise: &NoiseModel<T>,
    prev: &TickInput<T>,
    prev_model: &TickModel<T>,
    next: &TickInput<T>,
    next_model: &TickModel<T>,
) -> Result<Transition<T>> {
    let dt = next.t - prev.t;
    if !positive(dt) {
        return Err(Error::Contract("ticks must be strictly increasing in time".into()));
    }
    let d = layout.dim();
    let nm = layout.momentum_dim();
    let half = lit::<T>(0.5);
    let r = rot2((prev.pitch + next.pitch) * half);
    let mut f = DMatrix::identity(d, d);
    let mut g = DMatrix::zeros(d, d);
    let mut u = DVector::zeros(d);
    let dt2 = dt * dt * half;
    for i in 0..2 {
        f[(StateLayout::P + i, StateLayout::V + i)] = dt;
        for j in 0..2 {
            f[(StateLayout::P + i, StateLayout::B + j)] = -dt2 * r[(i, j)];
            f[(StateLayout::V + i, StateLayout::B + j)] = -dt * r[(i, j)];
        }
    }
    let acc = r * next.accel + gravity_vec(model);
    for i in 0..2 {
        u[StateLayout::P + i] = dt2 * acc[i];
        u[StateLayout::V + i] = dt * acc[i];
    }
    let c1t = prev_model.terms.c1().transpose();
    let mut blk = f.view_mut((StateLayout::M, StateLayout::V), (nm, 2));
    blk += c1t * dt;
    for (foot, kin) in next_model.feet.iter().enumerate() {
        let jt = kin.contact_jacobian.transpose();
        g.view_mut((StateLayout::M, layout.force(foot)), (nm, 2)).copy_from(&(jt * dt));
    }
    let mut drift = prev_model.terms.c2().tr_mul(&rates(prev)) - &prev_model.terms.gravity;
    for j in 0..layout.n_joints {
        drift[3 + j] += prev.torques[j];
    }
    u.rows_mut(StateLayout::M, nm).axpy(dt, &drift, T::zero());

    // Orientation error tilts gravity into the horizontal axis.
    let tilt = model.gravity * model.gravity * (prev.pitch_variance + next.pitch_variance) * half;
    let acc_var = noise.accel * noise.accel + tilt;
    let mut q = DVector::zeros(d);
    for i in 0..2 {
        q[StateLayout::P + i] = dt2 * dt2 * acc_var + noise.position_walk * noise.position_walk * dt;
        q[StateLayout::V + i] = dt * dt * acc_var;
        q[StateLayout::B + i] = noise.bias_walk * noise.bias_walk * dt;
    }
    for i in 0..nm {
        let s = if i < 3 { noise.momentum_model } else { noise.momentum_model_joints };
        q[StateLayout::M + i] = s * s * dt;
    }
    for i in layout.force(0)..d {
        q[i] = noise.force_walk * noise.force_walk * dt;
    }
    Ok(Transition { f, g, u, q })
}

/// Leg-odometry velocity for a stance foot, `None` for a swing foot.
pub fn leg_odometry_measurement<T: Real>(tm: &TickModel<T>, input: &TickInput<T>, foot: usize) -> Option<Vector2<T>> {
    if !input.contacts.get(foot).copied().unwrap_or(false) {
        return None;
    }
    Some(stationary_foot_velocity(&tm.rotation, &tm.feet[foot], input.pitch_rate, &input.joint_rates))
}

/// `M₂ [ω̃; α̇̃]`, measuring `m - M₁ v`.
pub fn momentum_measurement<T: Real>(tm: &TickModel<T>, input: &TickInput<T>) -> DVector<T> {
    tm.terms.m2() * rates(input)
}

/// Unary residuals and constraint rows of one tick.
///
/// `fixed` marks stance feet held static by the velocity constraint and used for leg odometry.
pub fn tick_factors<T: Real>(
    layout: &StateLayout,
    noise: &NoiseModel<T>,
    mode: ConstraintMode,
    input: &TickInput<T>,
    tm: &TickModel<T>,
    fixed: &[bool],
) -> Result<TickFactors<T>> {
    let d = layout.dim();
    let nm = layout.momentum_dim();
    for flags in [&input.contacts[..], fixed] {
        if flags.len() != layout.n_feet {
            return Err(Error::DimensionMismatch {
                context: "contact flags",
                expected: layout.n_feet,
                got: flags.len(),
            });
        }
    }
    let mut out = TickFactors::new(d);
    let wv = T::one() / (noise.leg_odometry * noise.leg_odometry);
    for foot in (0..layout.n_feet).filter(|f| fixed[*f]) {
        if let Some(y) = leg_odometry_measurement(tm, input, foot) {
            let mut a = DMatrix::zeros(2, d);
            a[(0, StateLayout::V)] = T::one();
            a[(1, StateLayout::V + 1)] = T::one();
            out.unary.push(Residual::unary(a, DVector::from_column_slice(y.as_slice()), DVector::from_element(2, wv)));
        }
    }
    let mut a = DMatrix::zeros(nm, d);
    a.view_mut((0, StateLayout::M), (nm, nm)).fill_with_identity();
    a.view_mut((0, StateLayout::V), (nm, 2)).copy_from(&(-tm.terms.m1()));
    let wm = T::one() / (noise.momentum_measurement * noise.momentum_measurement);
    out.unary.push(Residual::unary(a, momentum_measurement(tm, input), DVector::from_element(nm, wm)));

    if mode == ConstraintMode::None {
        return Ok(out);
    }
    let (equality, inequality) = contact_rows(layout, mode, input, tm, fixed)?;
    out.equality = equality;
    out.inequality = inequality;
    Ok(out)
}

/// Complementarity rows: settled stance feet static, swing feet force-free, stance feet
/// pushing. Empty for [`ConstraintMode::None`].
pub fn contact_rows<T: Real>(
    layout: &StateLayout,
    mode: ConstraintMode,
    input: &TickInput<T>,
    tm: &TickModel<T>,
    fixed: &[bool],
) -> Result<(LinearRows<T>, LinearRows<T>)> {
    let d = layout.dim();
    let nm = layout.momentum_dim();
    let mut eq = LinearRows::empty(d);
    let mut ineq = LinearRows::empty(d);
    if mode == ConstraintMode::None {
        return Ok((eq, ineq));
    }
    let minv = tm
        .terms
        .mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Assembly("mass matrix is not positive definite".into()))?
        .inverse();
    let mut row = vec![T::zero(); d];
    for foot in 0..layout.n_feet {
        let fo = layout.force(foot);
        if input.contacts[foot] && fixed[foot] {
            let jm = &tm.feet[foot].contact_jacobian * &minv;
            let axes: &[usize] = if mode == ConstraintMode::Slippery { &[1] } else { &[0, 1] };
            for &ax in axes {
                row.iter_mut().for_each(|v| *v = T::zero());
                for c in 0..nm {
                    row[StateLayout::M + c] = jm[(ax, c)];
                }
                eq.push(&row, T::zero());
            }
        }
        row.iter_mut().for_each(|v| *v = T::zero());
        if input.contacts[foot] {
            row[fo + 1] = -T::one();
            ineq.push(&row, T::zero());
        } else {
            for ax in 0..2 {
                row.iter_mut().for_each(|v| *v = T::zero());
                row[fo + ax] = T::one();
                eq.push(&row, T::zero());
            }
        }
    }
    Ok((eq, ineq))
}

/// Body-frame VO displacement residual `R̂_kᵀ (p_{k+1} - p_k) - c_k`.
pub fn vo_residual<T: Real>(layout: &StateLayout, noise: &NoiseModel<T>, pitch: T, displacement: Vector2<T>) -> Residual<T> {
    let d = layout.dim();
    let rt = rot2(pitch).transpose();
    let mut a = DMatrix::zeros(2, d);
    let mut b = DMatrix::zeros(2, d);
    a.view_mut((0, StateLayout::P), (2, 2)).copy_from(&(-rt));
    b.view_mut((0, StateLayout::P), (2, 2)).copy_from(&rt);
    let w = T::one() / (noise.vo_displacement * noise.vo_displacement);
    Residual::pair(a, b, DVector::from_column_slice(displacement.as_slice()), DVector::from_element(2, w))
}

/// Initial guess for the first tick: at rest, momentum from the measured rates, and
/// the stance feet sharing the static load.
pub fn initial_state<T: Real>(
    model: &RobotModel<T>,
    layout: &StateLayout,
    input: &TickInput<T>,
    tm: &TickModel<T>,
) -> Result<DVector<T>> {
    let mut x = DVector::zeros(layout.dim());
    x.rows_mut(StateLayout::M, layout.momentum_dim())
        .copy_from(&momentum_measurement(tm, input));
    let mut q = DVector::zeros(model.dof());
    q[2] = input.pitch;
    q.rows_mut(3, layout.n_joints).copy_from(&input.joints);
    if input.contacts.iter().any(|c| *c) {
        let (_, forces) = crate::dynamics::static_support(model, &q, &input.contacts)?;
        for (foot, f) in forces.iter().enumerate() {
            x[layout.force(foot)] = f.x;
            x[layout.force(foot) + 1] = f.y;
        }
    }
    Ok(x)
}

/// Extracts per-foot forces from a state vector.
pub fn forces<T: Real>(layout: &StateLayout, x: &DVector<T>) -> Vec<Vector2<T>> {
    (0..layout.n_feet)
        .map(|f| Vector2::new(x[layout.force(f)], x[layout.force(f) + 1]))
        .collect()
}
