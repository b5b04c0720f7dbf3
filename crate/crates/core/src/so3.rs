//! Fixed-size linear algebra and rotation-group helpers.
//!
//! Vectors and matrices are plain `nalgebra` types; [`Rotation`] is a thin
//! wrapper whose constructor checks orthogonality and orientation.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `RᵀR = I`, `det R = 1` and unit norms.
pub const UNIT_TOL: f64 = 1e-9;

/// Below this rotation angle the Rodrigues coefficients are replaced by
/// their series expansion.
pub const SMALL_ANGLE: f64 = 1e-8;

/// A 3x3 matrix on SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Wraps `m` after checking `mᵀm = I` and `det m = 1` to [`UNIT_TOL`].
    pub fn try_from_matrix(m: Mat3) -> Result<Self> {
        let orthogonality = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = m.determinant();
        if !orthogonality.is_finite() || orthogonality > UNIT_TOL || (det - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotARotation { orthogonality, det });
        }
        Ok(Rotation(m))
    }

    /// Rotation by the rotation vector `phi` (axis times angle).
    pub fn from_rotation_vector(phi: &Vec3) -> Self {
        exp_so3(phi, 1.0)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_inner(self) -> Mat3 {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Rotates `v` by the inverse rotation, i.e. `Rᵀ v`.
    pub fn inverse_transform(&self, v: &Vec3) -> Vec3 {
        self.0.tr_mul(v)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for &Rotation {
    type Output = Vec3;

    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;

    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Orthogonal projector `I - x xᵀ` onto the plane normal to the unit vector `x`.
pub fn projector(x: &Vec3) -> Result<Mat3> {
    check_unit(x)?;
    Ok(projector_unchecked(x))
}

pub(crate) fn projector_unchecked(x: &Vec3) -> Mat3 {
    Mat3::identity() - x * x.transpose()
}

pub(crate) fn check_unit(x: &Vec3) -> Result<()> {
    let norm = x.norm();
    if (norm - 1.0).abs() > UNIT_TOL || !norm.is_finite() {
        return Err(Error::NotUnitVector { norm });
    }
    Ok(())
}

/// `exp([w dt]_x)` by Rodrigues' formula.
pub fn exp_so3(w: &Vec3, dt: f64) -> Rotation {
    let phi = w * dt;
    let theta = phi.norm();
    let k = skew(&phi);
    let k2 = k * k;
    let m = if theta < SMALL_ANGLE {
        Mat3::identity() + k + 0.5 * k2
    } else {
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / (theta * theta);
        Mat3::identity() + a * k + b * k2
    };
    Rotation(m)
}

/// Orthogonal polar factor of `m`, i.e. the rotation closest to `m` in the
/// Frobenius norm.
///
/// Computed as `m (mᵀm)^(-1/2)` through a symmetric eigendecomposition.
pub fn project_to_rotation(m: &Mat3) -> Result<Rotation> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Degenerate("non-finite matrix".into()));
    }
    let det = m.determinant();
    if det <= 0.0 {
        return Err(Error::Degenerate(format!(
            "polar projection needs det > 0, got {det:e}"
        )));
    }
    let gram = m.transpose() * m;
    let eig = gram.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= max * f64::EPSILON * 16.0 {
        return Err(Error::Degenerate(format!(
            "polar projection of a near-singular matrix (eigenvalues {min:e}..{max:e})"
        )));
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let gram_inv_sqrt =
        eig.eigenvectors * Mat3::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    Ok(Rotation(m * gram_inv_sqrt))
}

/// Geodesic distance between two rotations, in `[0, pi]`.
///
/// Same quantity as `acos((tr(R1ᵀR2) - 1) / 2)`, evaluated through `atan2` of
/// the sine and cosine parts so that tiny angles keep full precision.
pub fn rotation_angle_error(r1: &Rotation, r2: &Rotation) -> f64 {
    let d = r1.0.transpose() * r2.0;
    let cos = ((d.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vec3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm();
    sin.atan2(cos).clamp(0.0, std::f64::consts::PI)
}
