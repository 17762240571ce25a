use nalgebra::{DMatrix, DVector, Vector2};

use crate::dynamics::{all_foot_kinematics, compute_dynamics_terms, GeneralizedState, RobotModel};
use crate::error::{Error, Result};
use crate::scalar::{lit, positive, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct MboConfig<T> {
    /// Observer gain `K_O` (1/s), applied to every generalized coordinate.
    pub gain: T,
}

impl<T: Real> Default for MboConfig<T> {
    fn default() -> Self {
        Self { gain: lit(50.0) }
    }
}

/// One observer sample: configuration and velocity (base parts from ground truth),
/// joint torques and contact flags.
#[derive(Clone, Debug, PartialEq)]
pub struct MboInput<T: Real> {
    pub t: T,
    pub state: GeneralizedState<T>,
    pub torques: DVector<T>,
    pub contacts: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MboOut<T: Real> {
    pub t: T,
    /// Disturbance estimate in generalized-force space.
    pub residual: DVector<T>,
    /// Per-foot forces; zero for feet not in contact.
    pub forces: Vec<Vector2<T>>,
}

#[derive(Clone, Debug)]
struct Sample<T: Real> {
    t: T,
    momentum: DVector<T>,
    /// `Cᵀ q̇ - G + B u`.
    model_rate: DVector<T>,
}

/// First-order generalized-momentum observer `ṙ = K_O (τ_ext - r)`.
///
/// Between samples the external torque is taken as constant at
/// `Δm/Δt - mean(Cᵀq̇ - G + Bu)`, and the observer is advanced by its exact
/// zero-order-hold discretization.
#[derive(Clone, Debug)]
pub struct Mbo<T: Real> {
    model: RobotModel<T>,
    config: MboConfig<T>,
    residual: DVector<T>,
    last: Option<Sample<T>>,
}

impl<T: Real> Mbo<T> {
    pub fn new(model: RobotModel<T>, config: MboConfig<T>) -> Result<Self> {
        model.validate()?;
        if !positive(config.gain) || !config.gain.is_finite() {
            return Err(Error::Contract("observer gain must be positive".into()));
        }
        let dof = model.dof();
        Ok(Self {
            model,
            config,
            residual: DVector::zeros(dof),
            last: None,
        })
    }

    pub fn residual(&self) -> &DVector<T> {
        &self.residual
    }

    pub fn step(&mut self, input: &MboInput<T>) -> Result<MboOut<T>> {
        input.state.check(&self.model)?;
        let n = self.model.n_joints();
        if input.torques.len() != n {
            return Err(Error::DimensionMismatch {
                context: "observer torques",
                expected: n,
                got: input.torques.len(),
            });
        }
        let terms = compute_dynamics_terms(&self.model, &input.state)?;
        let momentum = &terms.mass * &input.state.qdot;
        let mut model_rate = terms.coriolis.tr_mul(&input.state.qdot) - &terms.gravity;
        for j in 0..n {
            model_rate[3 + j] += input.torques[j];
        }
        if let Some(last) = &self.last {
            let dt = input.t - last.t;
            if !positive(dt) {
                return Err(Error::Contract("observer samples must be strictly increasing in time".into()));
            }
            let half = lit::<T>(0.5);
            let external = (&momentum - &last.momentum) / dt - (&model_rate + &last.model_rate) * half;
            let decay = (-self.config.gain * dt).exp();
            self.residual = &self.residual * decay + external * (T::one() - decay);
        }
        self.last = Some(Sample {
            t: input.t,
            momentum,
            model_rate,
        });
        let forces = self.recover_forces(&input.state, &input.contacts)?;
        Ok(MboOut {
            t: input.t,
            residual: self.residual.clone(),
            forces,
        })
    }

    /// Least-squares `Σ J_iᵀ f_i = r` over the feet in contact.
    fn recover_forces(&self, state: &GeneralizedState<T>, contacts: &[bool]) -> Result<Vec<Vector2<T>>> {
        let nf = self.model.n_feet();
        if contacts.len() != nf {
            return Err(Error::DimensionMismatch {
                context: "observer contact flags",
                expected: nf,
                got: contacts.len(),
            });
        }
        let mut out = vec![Vector2::zeros(); nf];
        let stance: Vec<usize> = (0..nf).filter(|f| contacts[*f]).collect();
        if stance.is_empty() {
            return Ok(out);
        }
        let feet = all_foot_kinematics(&self.model, state)?;
        let mut jt = DMatrix::zeros(self.model.dof(), 2 * stance.len());
        for (s, &f) in stance.iter().enumerate() {
            jt.view_mut((0, 2 * s), (self.model.dof(), 2))
                .copy_from(&feet[f].contact_jacobian.transpose());
        }
        let sol = jt
            .svd(true, true)
            .solve(&self.residual, lit(1e-12))
            .map_err(|e| Error::Contract(e.to_string()))?;
        for (s, &f) in stance.iter().enumerate() {
            out[f] = Vector2::new(sol[2 * s], sol[2 * s + 1]);
        }
        Ok(out)
    }
}
