use nalgebra::{DMatrix, Vector2};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// One rigid link of a serial leg, hanging along its local -z axis at zero joint angle.
#[derive(Clone, Debug, PartialEq)]
pub struct Link<T> {
    pub mass: T,
    /// Distance from the proximal joint to the link centre of mass, along the link.
    pub com_offset: T,
    /// Rotational inertia about the centre of mass.
    pub inertia: T,
    pub length: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Leg<T> {
    pub name: String,
    /// Hip joint location in the base frame.
    pub hip: Vector2<T>,
    /// Links ordered from hip to foot. The point foot sits at the distal end of the last link.
    pub links: Vec<Link<T>>,
}

/// Kinematic and inertial description of a planar floating-base robot with point feet.
///
/// Generalized coordinates are `q = [x, z, pitch, joints...]` with joints ordered leg by leg.
/// Each leg carries one foot; foot ids are leg indices.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel<T> {
    pub base_mass: T,
    pub base_inertia: T,
    pub legs: Vec<Leg<T>>,
    pub gravity: T,
}

impl<T: Real> RobotModel<T> {
    pub fn new(base_mass: T, base_inertia: T, legs: Vec<Leg<T>>, gravity: T) -> Result<Self> {
        let model = Self {
            base_mass,
            base_inertia,
            legs,
            gravity,
        };
        model.validate()?;
        Ok(model)
    }

    /// The planar biped used throughout the toolkit: two hip/knee legs of 0.25 m links.
    pub fn reference_biped() -> Self {
        let leg = |name: &str| Leg {
            name: name.to_string(),
            hip: Vector2::zeros(),
            links: vec![
                Link {
                    mass: lit(1.0),
                    com_offset: lit(0.1),
                    inertia: lit(0.006),
                    length: lit(0.25),
                },
                Link {
                    mass: lit(0.5),
                    com_offset: lit(0.12),
                    inertia: lit(0.003),
                    length: lit(0.25),
                },
            ],
        };
        Self {
            base_mass: lit(10.0),
            base_inertia: lit(0.3),
            legs: vec![leg("left"), leg("right")],
            gravity: lit(9.81),
        }
    }

    /// A legless rigid body, handy for identity checks.
    pub fn base_only(mass: T, inertia: T) -> Self {
        Self {
            base_mass: mass,
            base_inertia: inertia,
            legs: Vec::new(),
            gravity: lit(9.81),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: T, what: &str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidModel(format!("{what} must be positive")))
            }
        };
        pos(self.base_mass, "base mass")?;
        pos(self.base_inertia, "base inertia")?;
        pos(self.gravity, "gravity")?;
        for leg in &self.legs {
            if leg.links.is_empty() {
                return Err(Error::InvalidModel(format!("leg {} has no links", leg.name)));
            }
            for link in &leg.links {
                pos(link.mass, "link mass")?;
                pos(link.inertia, "link inertia")?;
                pos(link.length, "link length")?;
                if link.com_offset < T::zero() || !link.com_offset.is_finite() {
                    return Err(Error::InvalidModel("link com offset must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.legs.iter().map(|l| l.links.len()).sum()
    }

    /// Number of generalized coordinates, `3 + n`.
    pub fn dof(&self) -> usize {
        3 + self.n_joints()
    }

    pub fn n_feet(&self) -> usize {
        self.legs.len()
    }

    pub fn foot_ids(&self) -> Vec<usize> {
        (0..self.legs.len()).collect()
    }

    /// Index of the first joint of `leg` within the joint vector.
    pub fn joint_offset(&self, leg: usize) -> usize {
        self.legs[..leg].iter().map(|l| l.links.len()).sum()
    }

    pub fn total_mass(&self) -> T {
        self.legs
            .iter()
            .flat_map(|l| l.links.iter())
            .fold(self.base_mass, |acc, l| acc + l.mass)
    }

    /// Selection matrix `B` mapping joint torques into generalized forces.
    pub fn actuation_map(&self) -> DMatrix<T> {
        let n = self.n_joints();
        let mut b = DMatrix::zeros(3 + n, n);
        for j in 0..n {
            b[(3 + j, j)] = T::one();
        }
        b
    }
}
