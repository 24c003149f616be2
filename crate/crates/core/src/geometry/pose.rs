use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Quaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

const ORTHO_TOL: f64 = 1e-9;

/// A similarity transform `x -> scale * R * x + p`.
///
/// Registration only ever produces `scale == 1`; the scale slot exists for
/// canonical-frame annotations (normalization of a cloud into unit size).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    scale: f64,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    /// Rigid pose. Fails if `rotation` is not a proper rotation within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::with_scale(rotation, translation, 1.0)
    }

    pub fn with_scale(rotation: Matrix3<f64>, translation: Vector3<f64>, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidPose(format!("scale must be positive, got {scale}")));
        }
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let off = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if off > ORTHO_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (deviation {off:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidPose(format!("rotation determinant is {det}")));
        }
        Ok(Pose {
            rotation,
            translation,
            scale,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose {
            translation,
            ..Pose::identity()
        }
    }

    pub fn from_rotation(rotation: &Rotation3<f64>) -> Self {
        Pose {
            rotation: *rotation.matrix(),
            ..Pose::identity()
        }
    }

    /// Row-major 3x3 rotation plus translation, as serialized on disk.
    pub fn from_row_major(rotation: &[f64; 9], translation: &[f64; 3]) -> Result<Self> {
        Pose::new(
            Matrix3::from_row_slice(rotation),
            Vector3::from_column_slice(translation),
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
        ]
    }

    #[inline]
    pub fn transform_point(&self, p: &Point) -> Point {
        self.rotation * p * self.scale + self.translation
    }

    /// Maps a point from the posed frame back to the canonical frame.
    #[inline]
    pub fn inverse_transform_point(&self, p: &Point) -> Point {
        self.rotation.transpose() * (p - self.translation) / self.scale
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
            scale: 1.0 / self.scale,
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

/// Serialized pose record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        PoseRecord {
            rotation: p.rotation_row_major(),
            translation: [p.translation.x, p.translation.y, p.translation.z],
            scale: p.scale,
        }
    }
}

impl TryFrom<&PoseRecord> for Pose {
    type Error = Error;

    fn try_from(r: &PoseRecord) -> Result<Self> {
        Pose::with_scale(
            Matrix3::from_row_slice(&r.rotation),
            Vector3::from_column_slice(&r.translation),
            r.scale,
        )
    }
}

/// Rotation by `angle` radians about the unit z axis.
pub fn rotation_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rotation_axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).matrix()
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-6 {
            return *UnitQuaternion::from_quaternion(q)
                .to_rotation_matrix()
                .matrix();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_rotation_and_scale() {
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(skew, Vector3::zeros()).is_err());
        let mirror = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        assert!(Pose::new(mirror, Vector3::zeros()).is_err());
        assert!(Pose::with_scale(Matrix3::identity(), Vector3::zeros(), 0.0).is_err());
        assert!(Pose::with_scale(Matrix3::identity(), Vector3::zeros(), -1.0).is_err());
    }

    #[test]
    fn random_rotations_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            Pose::new(random_rotation(&mut rng), Vector3::zeros()).unwrap();
        }
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = Pose::with_scale(random_rotation(&mut rng), Vector3::new(0.3, -2.0, 1.0), 1.7)
            .unwrap();
        let x = Vector3::new(0.2, 0.5, -0.9);
        let back = p.inverse().transform_point(&p.transform_point(&x));
        assert!((back - x).amax() < 1e-12);
        let id = p.compose(&p.inverse());
        assert!((id.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation().amax() < 1e-12);
        assert!((id.scale() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn record_roundtrip() {
        let p = Pose::new(rotation_z(0.4), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let rec = PoseRecord::from(&p);
        let q = Pose::try_from(&rec).unwrap();
        assert_eq!(p, q);
    }
}
