//! Planar orientation filter: pitch and gyro bias from gyro, accelerometer and
//! visual-odometry rotation increments.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{lit, positive, wrap_angle, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientationEstimate<T> {
    pub pitch: T,
    pub gyro_bias: T,
    pub covariance: Matrix2<T>,
}

impl<T: Real> OrientationEstimate<T> {
    pub fn new(pitch: T, gyro_bias: T, covariance: Matrix2<T>) -> Self {
        Self {
            pitch: wrap_angle(pitch),
            gyro_bias,
            covariance,
        }
    }

    pub fn pitch_variance(&self) -> T {
        self.covariance[(0, 0)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientationNoise<T> {
    /// Gyro white noise (rad/s).
    pub gyro: T,
    /// Gyro bias random walk (rad/s/√s).
    pub gyro_bias_walk: T,
    /// Pitch noise of the gravity-direction measurement (rad).
    pub accel_pitch: T,
    /// Noise of a visual rotation increment (rad).
    pub vo_rotation: T,
    pub gravity: T,
    /// Accepted specific-force magnitude band, as fractions of gravity.
    pub gate_low: T,
    pub gate_high: T,
}

impl<T: Real> Default for OrientationNoise<T> {
    fn default() -> Self {
        Self {
            gyro: lit(0.002),
            gyro_bias_walk: lit(1e-4),
            accel_pitch: lit(0.1),
            vo_rotation: lit(0.002),
            gravity: lit(9.81),
            gate_low: lit(0.8),
            gate_high: lit(1.2),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CorrectionReport {
    pub accel_applied: bool,
    pub accel_gated: bool,
    pub vo_applied: bool,
}

/// Pitch/gyro-bias Kalman filter. Visual rotation increments are fused against a cloned
/// copy of the pitch taken at the start of the increment, so the correlation between
/// the two ends is carried exactly.
#[derive(Clone, Debug)]
pub struct OrientationFilter<T> {
    estimate: OrientationEstimate<T>,
    pub noise: OrientationNoise<T>,
    last_report: CorrectionReport,
    /// Cloned pitch and the full 3×3 covariance of `[pitch, bias, clone]`.
    clone: Option<(T, Matrix3<T>)>,
}

impl<T: Real> OrientationFilter<T> {
    pub fn new(initial: OrientationEstimate<T>, noise: OrientationNoise<T>) -> Self {
        Self {
            estimate: initial,
            noise,
            last_report: CorrectionReport::default(),
            clone: None,
        }
    }

    pub fn estimate(&self) -> &OrientationEstimate<T> {
        &self.estimate
    }

    pub fn last_report(&self) -> CorrectionReport {
        self.last_report
    }

    /// Starts a rotation increment at the current pitch.
    pub fn mark_reference(&mut self) {
        let p = self.estimate.covariance;
        let cov = Matrix3::new(
            p[(0, 0)],
            p[(0, 1)],
            p[(0, 0)],
            p[(1, 0)],
            p[(1, 1)],
            p[(1, 0)],
            p[(0, 0)],
            p[(0, 1)],
            p[(0, 0)],
        );
        self.clone = Some((self.estimate.pitch, cov));
    }

    pub fn has_reference(&self) -> bool {
        self.clone.is_some()
    }

    fn full_covariance(&self) -> Matrix3<T> {
        match &self.clone {
            Some((_, c)) => *c,
            None => {
                let p = self.estimate.covariance;
                Matrix3::new(
                    p[(0, 0)],
                    p[(0, 1)],
                    T::zero(),
                    p[(1, 0)],
                    p[(1, 1)],
                    T::zero(),
                    T::zero(),
                    T::zero(),
                    T::zero(),
                )
            }
        }
    }

    fn store_covariance(&mut self, c: Matrix3<T>) {
        let c = (c + c.transpose()) * lit::<T>(0.5);
        self.estimate.covariance = c.fixed_view::<2, 2>(0, 0).into_owned();
        if let Some((_, cov)) = &mut self.clone {
            *cov = c;
        }
    }

    pub fn predict(&mut self, gyro: T, dt: T) -> Result<&OrientationEstimate<T>> {
        if !positive(dt) {
            return Err(Error::Contract(format!("orientation predict needs dt > 0, got {dt}")));
        }
        self.estimate.pitch = wrap_angle(self.estimate.pitch + (gyro - self.estimate.gyro_bias) * dt);
        let mut f = Matrix3::identity();
        f[(0, 1)] = -dt;
        let mut q = Matrix3::zeros();
        q[(0, 0)] = (self.noise.gyro * dt).powi(2);
        q[(1, 1)] = self.noise.gyro_bias_walk.powi(2) * dt;
        let c = f * self.full_covariance() * f.transpose() + q;
        self.store_covariance(c);
        Ok(&self.estimate)
    }

    /// Applies the gated gravity-direction update and, when a reference is marked, the
    /// rotation measured since it.
    pub fn correct(&mut self, accel: Vector2<T>, vo_delta: Option<T>) -> CorrectionReport {
        let mut report = CorrectionReport::default();
        let g = self.noise.gravity;
        let mag = accel.norm();
        if mag >= self.noise.gate_low * g && mag <= self.noise.gate_high * g {
            let z = accel.x.atan2(accel.y);
            let h = Vector3::new(T::one(), T::zero(), T::zero());
            self.scalar_update(&h, wrap_angle(z - self.estimate.pitch), self.noise.accel_pitch.powi(2));
            report.accel_applied = true;
        } else {
            report.accel_gated = true;
        }
        if let (Some(delta), Some((reference, _))) = (vo_delta, self.clone) {
            let predicted = self.estimate.pitch - reference;
            let h = Vector3::new(T::one(), T::zero(), -T::one());
            self.scalar_update(&h, wrap_angle(delta - predicted), self.noise.vo_rotation.powi(2));
            report.vo_applied = true;
        }
        self.last_report = report;
        report
    }

    fn scalar_update(&mut self, h: &Vector3<T>, innovation: T, r: T) {
        let p = self.full_covariance();
        let ph = p * h;
        let s = h.dot(&ph) + r;
        if !positive(s) {
            return;
        }
        let k = ph / s;
        self.estimate.pitch = wrap_angle(self.estimate.pitch + k.x * innovation);
        self.estimate.gyro_bias += k.y * innovation;
        if let Some((reference, _)) = &mut self.clone {
            *reference = wrap_angle(*reference + k.z * innovation);
        }
        // Joseph form keeps the covariance PSD.
        let ikh = Matrix3::identity() - k * h.transpose();
        let c = ikh * p * ikh.transpose() + k * k.transpose() * r;
        self.store_covariance(c);
    }
}
