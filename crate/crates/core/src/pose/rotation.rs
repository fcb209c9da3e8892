use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Orthonormality slack accepted by [`rotation_angle`] before an input is
/// rejected as not being a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-4;

/// Stored quaternions within this distance of unit norm are kept bit-exact
/// on load instead of being renormalized.
const LOAD_NORM_SLACK: f64 = 1e-9;

/// A unit quaternion `(w, x, y, z)` describing a 3D rotation.
///
/// Equality is rotation equality: `q == -q`.
#[derive(Clone, Copy)]
pub struct Quaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a rotation from raw components, normalizing them.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::invalid(format!(
                "quaternion ({w}, {x}, {y}, {z}) cannot be normalized"
            )));
        }
        Ok(Quaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Rotation of `angle` radians about `axis`. A zero axis yields identity.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        match Unit::try_new(*axis, 1e-15) {
            Some(axis) => UnitQuaternion::from_axis_angle(&axis, angle).into(),
            None => Self::IDENTITY,
        }
    }

    /// Converts a rotation matrix, rejecting matrices that are not proper
    /// rotations within [`ROTATION_TOLERANCE`].
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Result<Self> {
        check_rotation(m)?;
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        Ok(q.into())
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        self.as_unit().to_rotation_matrix().into_inner()
    }

    pub fn components(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn inverse(&self) -> Self {
        Quaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Quaternion) -> Self {
        (self.as_unit() * other.as_unit()).into()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.as_unit() * v
    }

    /// Representative of the double cover with `w ≥ 0`; when `w == 0` the
    /// first non-zero vector component is made positive.
    pub fn sign_normalized(&self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else {
            [self.x, self.y, self.z]
                .into_iter()
                .find(|c| *c != 0.0)
                .is_some_and(|c| c < 0.0)
        };
        if flip {
            Quaternion {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            *self
        }
    }

    /// Geodesic angle to `other` in radians, in `[0, π]`.
    pub fn angle_to(&self, other: &Quaternion) -> f64 {
        let d = (self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z).abs();
        2.0 * d.min(1.0).acos()
    }

    pub fn same_rotation(&self, other: &Quaternion, tol: f64) -> bool {
        let c = self.components();
        let o = other.components();
        let same = c.iter().zip(&o).all(|(a, b)| (a - b).abs() <= tol);
        let flipped = c.iter().zip(&o).all(|(a, b)| (a + b).abs() <= tol);
        same || flipped
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.same_rotation(&Self::IDENTITY, tol)
    }

    fn as_unit(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(self.w, self.x, self.y, self.z))
    }
}

impl From<UnitQuaternion<f64>> for Quaternion {
    fn from(q: UnitQuaternion<f64>) -> Self {
        // nalgebra keeps the value unit up to rounding; renormalize to hold
        // the 1e-6 invariant across long compositions.
        Quaternion::new(q.w, q.i, q.j, q.k).unwrap_or(Quaternion::IDENTITY)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        self.compose(&rhs)
    }
}

impl PartialEq for Quaternion {
    fn eq(&self, other: &Self) -> bool {
        let c = self.components();
        let o = other.components();
        c == o || c == o.map(|v| -v)
    }
}

impl fmt::Debug for Quaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Quaternion({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

impl Serialize for Quaternion {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.components().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Quaternion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if (n - 1.0).abs() <= LOAD_NORM_SLACK {
            Ok(Quaternion { w, x, y, z })
        } else {
            Quaternion::new(w, x, y, z).map_err(serde::de::Error::custom)
        }
    }
}

fn check_rotation(m: &Matrix3<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("rotation matrix has non-finite entries"));
    }
    let off = (m.transpose() * m - Matrix3::identity()).abs().max();
    let det = m.determinant();
    if off > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::invalid(format!(
            "matrix is not a rotation (orthonormality error {off:.3e}, det {det:.6})"
        )));
    }
    Ok(())
}

/// Geodesic rotation angle of `r` in degrees, in `[0, 180]`.
///
/// The cosine argument is clamped to `[-1, 1]` so rounding on near-identity
/// or near-antipodal inputs never produces NaN.
pub fn rotation_angle(r: &Matrix3<f64>) -> Result<f64> {
    check_rotation(r)?;
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    Ok(c.acos().to_degrees())
}

/// Draws an axis uniformly on the unit sphere.
pub fn random_axis<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Returns `q ∘ δ` where `δ` rotates about a uniform random axis by an angle
/// drawn uniformly from `[0, max_angle_deg]`.
pub fn perturb_orientation<R: Rng + ?Sized>(
    q: &Quaternion,
    max_angle_deg: f64,
    rng: &mut R,
) -> Result<Quaternion> {
    if !(max_angle_deg > 0.0 && max_angle_deg <= 180.0) {
        return Err(Error::config(format!(
            "perturbation angle must lie in (0, 180] degrees, got {max_angle_deg}"
        )));
    }
    let axis = random_axis(rng);
    let angle = rng.random::<f64>() * max_angle_deg.to_radians();
    Ok(q.compose(&Quaternion::from_axis_angle(&axis, angle)))
}
