//! Compliant ground at z = 0: normal spring-damper, tangential anchor spring with
//! Coulomb saturation.

use nalgebra::Vector2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactParams {
    pub stiffness: f64,
    pub damping: f64,
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
    pub friction: f64,
    /// Normal force above which a foot reports contact (N).
    pub threshold: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness: 1e5,
            damping: 1e3,
            tangential_stiffness: 1e5,
            tangential_damping: 1e3,
            friction: 0.7,
            threshold: 2.0,
        }
    }
}

impl ContactParams {
    /// Ground force on a foot at `pos` moving with `vel`; `anchor` is the tangential
    /// rest point of a foot already in contact.
    pub fn force(&self, pos: Vector2<f64>, vel: Vector2<f64>, anchor: Option<f64>) -> Vector2<f64> {
        let depth = -pos.y;
        if depth <= 0.0 {
            return Vector2::zeros();
        }
        let fn_ = (self.stiffness * depth - self.damping * vel.y).max(0.0);
        let spring = anchor.map_or(0.0, |a| -self.tangential_stiffness * (pos.x - a));
        let ft = spring - self.tangential_damping * vel.x;
        let limit = self.friction * fn_;
        Vector2::new(ft.clamp(-limit, limit), fn_)
    }

    /// Anchor after a completed step: created at touchdown, dragged along while
    /// sliding, dropped at lift-off.
    pub fn update_anchor(&self, pos: Vector2<f64>, vel: Vector2<f64>, anchor: Option<f64>) -> Option<f64> {
        let depth = -pos.y;
        if depth <= 0.0 {
            return None;
        }
        let Some(a) = anchor else {
            return Some(pos.x);
        };
        let fn_ = (self.stiffness * depth - self.damping * vel.y).max(0.0);
        let limit = self.friction * fn_;
        let stretch = pos.x - a;
        if self.tangential_stiffness * stretch.abs() > limit {
            Some(pos.x - stretch.signum() * limit / self.tangential_stiffness)
        } else {
            Some(a)
        }
    }

    /// Elastic energy stored in the contact springs.
    pub fn stored_energy(&self, pos: Vector2<f64>, anchor: Option<f64>) -> f64 {
        let depth = -pos.y;
        if depth <= 0.0 {
            return 0.0;
        }
        let t = anchor.map_or(0.0, |a| 0.5 * self.tangential_stiffness * (pos.x - a).powi(2));
        0.5 * self.stiffness * depth * depth + t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_force_above_ground_and_no_pulling() {
        let c = ContactParams::default();
        assert_eq!(c.force(Vector2::new(0.0, 0.01), Vector2::zeros(), None), Vector2::zeros());
        let f = c.force(Vector2::new(0.0, -1e-4), Vector2::new(0.0, 5.0), Some(0.0));
        assert_eq!(f.y, 0.0);
    }

    #[test]
    fn friction_cone_is_respected() {
        let c = ContactParams::default();
        let f = c.force(Vector2::new(0.1, -1e-3), Vector2::new(2.0, 0.0), Some(0.0));
        assert!((f.y - 100.0).abs() < 1e-9);
        assert!((f.x + 70.0).abs() < 1e-9);
        let a = c.update_anchor(Vector2::new(0.1, -1e-3), Vector2::zeros(), Some(0.0)).unwrap();
        assert!((c.tangential_stiffness * (0.1 - a) - 70.0).abs() < 1e-9);
    }
}
