use nalgebra::{DVector, DVectorView, Vector2};

use super::RobotModel;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Generalized coordinates and velocities of a planar floating-base robot.
///
/// Layout: `q = [x, z, pitch, α...]`, `qdot = [vx, vz, ω, α̇...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedState<T: Real> {
    pub q: DVector<T>,
    pub qdot: DVector<T>,
}

impl<T: Real> GeneralizedState<T> {
    pub fn new(q: DVector<T>, qdot: DVector<T>) -> Self {
        Self { q, qdot }
    }

    pub fn zeros(dof: usize) -> Self {
        Self {
            q: DVector::zeros(dof),
            qdot: DVector::zeros(dof),
        }
    }

    /// Assembles a state from its base and joint parts.
    pub fn from_parts(
        position: Vector2<T>,
        pitch: T,
        joints: &[T],
        velocity: Vector2<T>,
        pitch_rate: T,
        joint_rates: &[T],
    ) -> Self {
        let n = joints.len();
        let mut q = DVector::zeros(3 + n);
        let mut qdot = DVector::zeros(3 + n);
        q[0] = position.x;
        q[1] = position.y;
        q[2] = pitch;
        qdot[0] = velocity.x;
        qdot[1] = velocity.y;
        qdot[2] = pitch_rate;
        for j in 0..n {
            q[3 + j] = joints[j];
            qdot[3 + j] = joint_rates[j];
        }
        Self { q, qdot }
    }

    pub fn check(&self, model: &RobotModel<T>) -> Result<()> {
        let dof = model.dof();
        for (len, context) in [(self.q.len(), "q"), (self.qdot.len(), "qdot")] {
            if len != dof {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: dof,
                    got: len,
                });
            }
        }
        Ok(())
    }

    pub fn position(&self) -> Vector2<T> {
        Vector2::new(self.q[0], self.q[1])
    }

    pub fn pitch(&self) -> T {
        self.q[2]
    }

    pub fn joints(&self) -> DVectorView<'_, T> {
        self.q.rows(3, self.q.len() - 3)
    }

    pub fn velocity(&self) -> Vector2<T> {
        Vector2::new(self.qdot[0], self.qdot[1])
    }

    pub fn pitch_rate(&self) -> T {
        self.qdot[2]
    }

    pub fn joint_rates(&self) -> DVectorView<'_, T> {
        self.qdot.rows(3, self.qdot.len() - 3)
    }
}
