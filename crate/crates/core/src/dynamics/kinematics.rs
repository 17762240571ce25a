//! Point kinematics on the serial legs: positions, world Jacobians and their
//! configuration derivatives.

use nalgebra::{DMatrix, Matrix2, Vector2};

use super::RobotModel;
use crate::scalar::{cross2, rot2, Real};

/// Unit direction of a link whose absolute (body-relative) angle is `angle`.
#[inline]
pub(crate) fn link_direction<T: Real>(angle: T) -> Vector2<T> {
    let (s, c) = angle.sin_cos();
    Vector2::new(s, -c)
}

/// Body-frame geometry of one leg at a joint configuration.
pub(crate) struct LegGeometry<T: Real> {
    /// Joint pivots followed by the foot: `pivots[j]` is joint `j`, `pivots[nlinks]` is the foot.
    pub pivots: Vec<Vector2<T>>,
    pub coms: Vec<Vector2<T>>,
}

pub(crate) fn leg_geometry<T: Real>(model: &RobotModel<T>, leg: usize, joints: &[T]) -> LegGeometry<T> {
    let leg_def = &model.legs[leg];
    let mut pivots = Vec::with_capacity(leg_def.links.len() + 1);
    let mut coms = Vec::with_capacity(leg_def.links.len());
    let mut at = leg_def.hip;
    let mut angle = T::zero();
    pivots.push(at);
    for (link, &a) in leg_def.links.iter().zip(joints) {
        angle += a;
        let d = link_direction(angle);
        coms.push(at + d * link.com_offset);
        at += d * link.length;
        pivots.push(at);
    }
    LegGeometry { pivots, coms }
}

/// A material point on a leg, together with everything needed for its Jacobian.
pub(crate) struct LegPoint<T: Real> {
    pub leg: usize,
    /// The point depends on joints `0..upstream` of its leg.
    pub upstream: usize,
    pub body: Vector2<T>,
}

/// Configuration-dependent quantities shared by all points of the robot.
pub(crate) struct Frame<T: Real> {
    pub dof: usize,
    pub rotation: Matrix2<T>,
    pub geometry: Vec<LegGeometry<T>>,
    pub offsets: Vec<usize>,
}

impl<T: Real> Frame<T> {
    pub fn new(model: &RobotModel<T>, q: &[T]) -> Self {
        let rotation = rot2(q[2]);
        let mut geometry = Vec::with_capacity(model.legs.len());
        let mut offsets = Vec::with_capacity(model.legs.len());
        let mut off = 0;
        for (l, leg) in model.legs.iter().enumerate() {
            offsets.push(off);
            let n = leg.links.len();
            geometry.push(leg_geometry(model, l, &q[3 + off..3 + off + n]));
            off += n;
        }
        Self {
            dof: q.len(),
            rotation,
            geometry,
            offsets,
        }
    }

    /// World Jacobian (2 × dof) of a leg point.
    pub fn jacobian(&self, point: &LegPoint<T>) -> DMatrix<T> {
        let mut j = DMatrix::zeros(2, self.dof);
        j[(0, 0)] = T::one();
        j[(1, 1)] = T::one();
        let col = cross2(T::one(), &(self.rotation * point.body));
        j[(0, 2)] = col.x;
        j[(1, 2)] = col.y;
        let geo = &self.geometry[point.leg];
        for k in 0..point.upstream {
            let col = cross2(T::one(), &(self.rotation * (point.body - geo.pivots[k])));
            let c = 3 + self.offsets[point.leg] + k;
            j[(0, c)] = col.x;
            j[(1, c)] = col.y;
        }
        j
    }

    /// Derivatives `∂J/∂q_k` of a point Jacobian for every coordinate `k`.
    ///
    /// Every rotational column has the form `S (P - X)` with `X` the pivot, so its
    /// derivative is `S (J_P[:,k] - J_X[:,k])`.
    pub fn jacobian_derivatives(&self, point: &LegPoint<T>, jac: &DMatrix<T>) -> Vec<DMatrix<T>> {
        let geo = &self.geometry[point.leg];
        let pivot_jacs: Vec<DMatrix<T>> = (0..point.upstream)
            .map(|u| {
                self.jacobian(&LegPoint {
                    leg: point.leg,
                    upstream: u,
                    body: geo.pivots[u],
                })
            })
            .collect();
        (0..self.dof)
            .map(|k| {
                let mut d = DMatrix::zeros(2, self.dof);
                if k < 2 {
                    return d;
                }
                let pk = Vector2::new(jac[(0, k)], jac[(1, k)]);
                let col = cross2(T::one(), &pk);
                d[(0, 2)] = col.x;
                d[(1, 2)] = col.y;
                for (u, jx) in pivot_jacs.iter().enumerate() {
                    let xk = Vector2::new(jx[(0, k)], jx[(1, k)]);
                    let col = cross2(T::one(), &(pk - xk));
                    let c = 3 + self.offsets[point.leg] + u;
                    d[(0, c)] = col.x;
                    d[(1, c)] = col.y;
                }
                d
            })
            .collect()
    }

    /// Velocity-product acceleration `J̇ q̇` of a leg point: every segment of the chain
    /// from the base origin contributes `-ω² r` at its absolute rate `ω`.
    pub fn bias_acceleration(&self, point: &LegPoint<T>, qdot: &[T]) -> Vector2<T> {
        let geo = &self.geometry[point.leg];
        let mut acc = Vector2::zeros();
        let mut from = Vector2::zeros();
        let mut rate = qdot[2];
        for k in 0..=point.upstream {
            let to = if k < point.upstream { geo.pivots[k] } else { point.body };
            acc -= self.rotation * (to - from) * (rate * rate);
            if k < point.upstream {
                rate += qdot[3 + self.offsets[point.leg] + k];
            }
            from = to;
        }
        acc
    }

    /// Body Jacobian (2 × n) of a point: derivative of its body-frame position w.r.t. joints.
    pub fn body_jacobian(&self, point: &LegPoint<T>, n_joints: usize) -> DMatrix<T> {
        let mut j = DMatrix::zeros(2, n_joints);
        let geo = &self.geometry[point.leg];
        for k in 0..point.upstream {
            let col = cross2(T::one(), &(point.body - geo.pivots[k]));
            let c = self.offsets[point.leg] + k;
            j[(0, c)] = col.x;
            j[(1, c)] = col.y;
        }
        j
    }
}
