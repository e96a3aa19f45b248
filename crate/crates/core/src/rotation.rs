//! Rotation representations and the SO(3) utilities the rest of the crate is
//! built on: quaternion and axis-angle conversions, Haar sampling, the proper
//! SVD and the geodesic distance.
//!
//! Matrices are stored as `nalgebra::Matrix3<f64>`. Whenever a rotation is
//! written out as nine numbers the order is row-major.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance on `‖mᵀm − I‖_F` and `|det m − 1|` for a matrix to count as a rotation.
pub const ROTATION_TOL: f64 = 1e-9;

/// Looser tolerance used when reading rotations from files; inputs within it
/// are projected back onto SO(3).
pub const FILE_ROTATION_TOL: f64 = 1e-6;

/// An element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let err = rotation_defect(&m);
        if err.is_finite() && err <= ROTATION_TOL {
            Ok(RotationMatrix(m))
        } else {
            Err(Error::validation(format!("matrix is not a rotation (defect {err:.3e})")))
        }
    }

    /// Wraps a matrix the caller knows to be a rotation, e.g. a product of rotations.
    pub fn new_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    /// Accepts a matrix within `tol` of SO(3) and projects it onto the nearest rotation.
    pub fn new_projected(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let err = rotation_defect(&m);
        if !(err.is_finite() && err <= tol) {
            return Err(Error::validation(format!("matrix is not a rotation (defect {err:.3e})")));
        }
        if err <= ROTATION_TOL {
            return Ok(RotationMatrix(m));
        }
        Ok(Self::nearest(&m))
    }

    /// Nearest rotation in Frobenius norm (the mode of a matrix Fisher
    /// distribution with parameter `m`).
    pub fn nearest(m: &Matrix3<f64>) -> Self {
        let svd = proper_svd(m);
        RotationMatrix(svd.u.0 * svd.v.0.transpose())
    }

    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    /// Inverse rotation.
    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::new(inflate(&FlatVec9(*v)))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        flatten(&self.0).0
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl Serialize for RotationMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RotationMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(deserializer)?;
        RotationMatrix::new_projected(inflate(&FlatVec9(v)), FILE_ROTATION_TOL)
            .map_err(serde::de::Error::custom)
    }
}

fn rotation_defect(m: &Matrix3<f64>) -> f64 {
    let ortho = (m.transpose() * m - Matrix3::identity()).norm();
    ortho.max((m.determinant() - 1.0).abs())
}

/// Unit quaternion stored as (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const NORM_TOL: f64 = 1e-12;

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = w * w + x * x + y * y + z * z;
        if (n2 - 1.0).abs() <= Self::NORM_TOL {
            Ok(UnitQuaternion { w, x, y, z })
        } else {
            Err(Error::validation(format!("quaternion norm² is {n2}, expected 1")))
        }
    }

    pub fn normalized(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 1e-300) {
            return Err(Error::validation("cannot normalize a zero quaternion"));
        }
        Ok(UnitQuaternion { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    pub fn identity() -> Self {
        UnitQuaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    pub fn neg(&self) -> Self {
        UnitQuaternion { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.to_array()
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        // File inputs rarely carry 1e-12 precision.
        let n2: f64 = v.iter().map(|c| c * c).sum();
        if (n2 - 1.0).abs() > FILE_ROTATION_TOL {
            return Err(Error::validation(format!("quaternion norm² is {n2}, expected 1")));
        }
        UnitQuaternion::normalized(v[0], v[1], v[2], v[3])
    }
}

/// Rotation matrix of a unit quaternion. Uses the homogeneous form so that the
/// diagonal is exactly the quadratic form `w² ± x² ± y² ± z²`.
pub fn quat_to_rot(q: &UnitQuaternion) -> RotationMatrix {
    RotationMatrix(quat_matrix(q.w, q.x, q.y, q.z))
}

pub(crate) fn quat_matrix(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    let (ww, xx, yy, zz) = (w * w, x * x, y * y, z * z);
    let (xy, xz, yz) = (x * y, x * z, y * z);
    let (wx, wy, wz) = (w * x, w * y, w * z);
    Matrix3::new(
        ww + xx - yy - zz,
        2.0 * (xy - wz),
        2.0 * (xz + wy),
        2.0 * (xy + wz),
        ww - xx + yy - zz,
        2.0 * (yz - wx),
        2.0 * (xz - wy),
        2.0 * (yz + wx),
        ww - xx - yy + zz,
    )
}

/// Quaternion of a rotation with the sign fixed so that the first non-zero
/// component in (w, x, y, z) order is positive.
pub fn rot_to_quat(r: &RotationMatrix) -> UnitQuaternion {
    let m = &r.0;
    let t = m.trace();
    let (w, x, y, z) = if t > 0.0 {
        let s = (t + 1.0).sqrt() * 2.0;
        (0.25 * s, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s)
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        ((m[(2, 1)] - m[(1, 2)]) / s, 0.25 * s, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s)
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        ((m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, 0.25 * s, (m[(1, 2)] + m[(2, 1)]) / s)
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        ((m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, 0.25 * s)
    };
    let q = UnitQuaternion::normalized(w, x, y, z).expect("rotation yields a non-zero quaternion");
    canonical_sign(q)
}

fn canonical_sign(q: UnitQuaternion) -> UnitQuaternion {
    const ZERO: f64 = 1e-12;
    match q.to_array().into_iter().find(|c| c.abs() > ZERO) {
        Some(c) if c < 0.0 => q.neg(),
        _ => q,
    }
}

/// Rodrigues' formula. The axis is normalized; a zero axis is rejected.
pub fn axis_angle_to_rot(axis: &Vector3<f64>, angle: f64) -> Result<RotationMatrix> {
    let n = axis.norm();
    if !(n.is_finite() && n > 1e-12) || !angle.is_finite() {
        return Err(Error::validation("axis-angle needs a non-zero finite axis and a finite angle"));
    }
    let k = axis / n;
    let kx = k.cross_matrix();
    let m = Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos());
    Ok(RotationMatrix(m))
}

/// SVD `F = U·diag(s1, s2, s3p)·Vᵀ` with `U, V ∈ SO(3)`. The sign of the
/// smallest singular value absorbs `det(U₀V₀)` of the ordinary SVD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProperSvd {
    pub u: RotationMatrix,
    pub v: RotationMatrix,
    pub s1: f64,
    pub s2: f64,
    pub s3p: f64,
}

impl ProperSvd {
    pub fn singular_values(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3p]
    }

    pub fn reconstruct(&self) -> Matrix3<f64> {
        self.u.0 * Matrix3::from_diagonal(&Vector3::new(self.s1, self.s2, self.s3p)) * self.v.0.transpose()
    }

    /// `U·Vᵀ`, the maximizer of `tr(FᵀR)` over SO(3).
    pub fn mode(&self) -> RotationMatrix {
        self.u * self.v.transpose()
    }

    /// `U·diag(d)·Vᵀ`
    pub fn compose(&self, d: [f64; 3]) -> Matrix3<f64> {
        self.u.0 * Matrix3::from_diagonal(&Vector3::from(d)) * self.v.0.transpose()
    }
}

pub fn proper_svd(f: &Matrix3<f64>) -> ProperSvd {
    let (u0, sv, v0) = jacobi_svd(f);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let mut u = Matrix3::zeros();
    let mut v = Matrix3::zeros();
    let mut s = [0.0; 3];
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u0.column(src));
        v.set_column(dst, &v0.column(src));
        s[dst] = sv[src];
    }
    complete_basis(&mut u, &s);

    let du = u.determinant().signum();
    let dv = v.determinant().signum();
    u.column_mut(2).scale_mut(du);
    v.column_mut(2).scale_mut(dv);
    ProperSvd { u: RotationMatrix(u), v: RotationMatrix(v), s1: s[0], s2: s[1], s3p: s[2] * du * dv }
}

/// One-sided Jacobi SVD, `F·V = U·diag(σ)`. Accurate to working precision
/// relative to each singular value, including at rank deficiency, where the
/// fixed-size and general decompositions in nalgebra both lose accuracy.
/// Columns of `U` for vanishing singular values are left zero.
fn jacobi_svd(f: &Matrix3<f64>) -> (Matrix3<f64>, [f64; 3], Matrix3<f64>) {
    let mut b = *f;
    let mut v = Matrix3::identity();
    for _ in 0..60 {
        let mut rotated = false;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let alpha = b.column(i).norm_squared();
            let beta = b.column(j).norm_squared();
            let gamma = b.column(i).dot(&b.column(j));
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for m in [&mut b, &mut v] {
                let (ci, cj) = (m.column(i).clone_owned(), m.column(j).clone_owned());
                m.set_column(i, &(ci * c - cj * s));
                m.set_column(j, &(ci * s + cj * c));
            }
        }
        if !rotated {
            break;
        }
    }
    let mut u = Matrix3::zeros();
    let mut sv = [0.0; 3];
    for k in 0..3 {
        sv[k] = b.column(k).norm();
        if sv[k] > f64::MIN_POSITIVE {
            u.set_column(k, &(b.column(k) / sv[k]));
        }
    }
    (u, sv, v)
}

/// Fills the columns of `u` whose singular value vanished with an
/// orthonormal completion.
fn complete_basis(u: &mut Matrix3<f64>, s: &[f64; 3]) {
    let live = s.iter().filter(|&&v| v > f64::MIN_POSITIVE).count();
    if live == 0 {
        *u = Matrix3::identity();
        return;
    }
    if live == 1 {
        let a = u.column(0).clone_owned();
        let e = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        u.set_column(1, &(e - a * a.dot(&e)).normalize());
    }
    if live <= 2 {
        let c = u.column(0).cross(&u.column(1));
        u.set_column(2, &c.normalize());
    }
}

pub fn random_unit_quaternion<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    loop {
        let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        if let Ok(q) = UnitQuaternion::normalized(g[0], g[1], g[2], g[3]) {
            return q;
        }
    }
}

/// One Haar-distributed rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    quat_to_rot(&random_unit_quaternion(rng))
}

pub fn haar_sample(seed: u64, n: usize) -> Result<Vec<RotationMatrix>> {
    if n == 0 {
        return Err(Error::validation("haar_sample needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| random_rotation(&mut rng)).collect())
}

/// Rotation angle of `Rᵀ·R̂` in radians, in `[0, π]`.
///
/// Evaluated as `atan2(sin θ, cos θ)` with `cos θ = (tr − 1)/2` clamped to
/// `[−1, 1]` and `sin θ` from the skew part, which keeps full precision near
/// 0 and π where `acos` alone does not.
pub fn geodesic_distance(r: &RotationMatrix, r_hat: &RotationMatrix) -> f64 {
    let m = r.0.transpose() * r_hat.0;
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = (skew.norm() / 2.0).min(1.0);
    sin.atan2(cos)
}

/// Row-major flattening of a 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlatVec9(pub [f64; 9]);

impl FlatVec9 {
    pub fn dot(&self, other: &FlatVec9) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

pub fn flatten(m: &Matrix3<f64>) -> FlatVec9 {
    FlatVec9(std::array::from_fn(|k| m[(k / 3, k % 3)]))
}

pub fn inflate(v: &FlatVec9) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| v.0[3 * i + j])
}
