//! Rotation representations and conversions between them.

use serde::{Deserialize, Serialize};

use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Below this angle the trigonometric coefficients are evaluated by series.
const SERIES_THRESHOLD: f64 = 1e-2;

/// Rotation vector: unit axis scaled by the angle in radians.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AxisAngle<T>(pub [T; 3]);

impl<T: Real> AxisAngle<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        AxisAngle([x, y, z])
    }

    pub fn zero() -> Self {
        AxisAngle([T::zero(); 3])
    }

    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        AxisAngle(axis.normalized().scale(angle).0)
    }

    pub fn vector(&self) -> Vec3<T> {
        Vec3(self.0)
    }

    pub fn angle(&self) -> T {
        self.vector().norm()
    }

    /// Equivalent rotation vector with angle in `[0, π]`.
    pub fn canonical(&self) -> Self {
        let theta = self.angle();
        let pi = T::PI();
        if theta <= pi {
            return *self;
        }
        let two_pi = pi + pi;
        let axis = self.vector().scale(T::one() / theta);
        let mut reduced = theta % two_pi;
        let mut sign = T::one();
        if reduced > pi {
            reduced = two_pi - reduced;
            sign = -T::one();
        }
        AxisAngle(axis.scale(sign * reduced).0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Proper rotation matrix (orthonormal, det = +1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[T; 9]", into = "[T; 9]", bound = "T: Real")]
pub struct RotationMatrix<T>(Mat3<T>);

impl<T: Real> From<[T; 9]> for RotationMatrix<T> {
    fn from(v: [T; 9]) -> Self {
        RotationMatrix(Mat3::from_row_slice(&v))
    }
}

impl<T: Real> From<RotationMatrix<T>> for [T; 9] {
    fn from(r: RotationMatrix<T>) -> Self {
        r.0.to_row_array()
    }
}

impl<T: Real> Default for RotationMatrix<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> RotationMatrix<T> {
    pub fn identity() -> Self {
        RotationMatrix(Mat3::identity())
    }

    /// Wraps a matrix the caller guarantees to be a rotation.
    pub fn from_matrix_unchecked(m: Mat3<T>) -> Self {
        RotationMatrix(m)
    }

    pub fn about_axis(axis: Vec3<T>, angle: T) -> Self {
        rodrigues(&AxisAngle::from_axis_angle(axis, angle))
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3<T> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn compose(&self, o: &Self) -> Self {
        RotationMatrix(self.0.matmul(&o.0))
    }

    pub fn rotate(&self, v: &Vec3<T>) -> Vec3<T> {
        self.0.mul_vec(v)
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(m: &Mat3<T>) -> T {
        let rtr = m.transpose().matmul(m) - Mat3::identity();
        rtr.max_abs().max((m.det() - T::one()).abs())
    }

    pub fn is_valid(m: &Mat3<T>, tol: T) -> bool {
        m.is_finite() && Self::orthonormality_error(m) <= tol
    }

    pub fn cast<U: Real>(&self) -> RotationMatrix<U> {
        RotationMatrix(self.0.cast())
    }
}

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quaternion<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn dot(&self, o: &Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = T::one() / self.norm();
        Self::new(self.w * n, self.x * n, self.y * n, self.z * n)
    }

    /// Representative on the `w ≥ 0` hemisphere.
    pub fn canonical(&self) -> Self {
        if self.w < T::zero() {
            self.negated()
        } else {
            *self
        }
    }

    pub fn negated(&self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn from_axis_angle(aa: &AxisAngle<T>) -> Self {
        let theta = aa.angle();
        let half = theta * T::of(0.5);
        // sin(θ/2)/θ, series near zero
        let k = if theta < T::of(SERIES_THRESHOLD) {
            let t2 = theta * theta;
            T::of(0.5) - t2 / T::of(48.0) + t2 * t2 / T::of(3840.0)
        } else {
            half.sin() / theta
        };
        let [x, y, z] = aa.0;
        Self::new(half.cos(), x * k, y * k, z * k)
    }

    /// Shepperd's method: branch on the largest of `w², x², y², z²`.
    pub fn from_rotation(r: &RotationMatrix<T>) -> Self {
        let m = &r.matrix().0;
        let one = T::one();
        let quarter = T::of(0.25);
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr >= m[0][0] && tr >= m[1][1] && tr >= m[2][2] {
            let s = (one + tr).sqrt() * T::of(2.0);
            Self::new(quarter * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
        } else if m[0][0] >= m[1][1] && m[0][0] >= m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::of(2.0);
            Self::new((m[2][1] - m[1][2]) / s, quarter * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
        } else if m[1][1] >= m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::of(2.0);
            Self::new((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, quarter * s, (m[1][2] + m[2][1]) / s)
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::of(2.0);
            Self::new((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, quarter * s)
        };
        q.normalized().canonical()
    }

    pub fn to_rotation(&self) -> RotationMatrix<T> {
        let Quaternion { w, x, y, z } = self.normalized();
        let one = T::one();
        let two = T::of(2.0);
        RotationMatrix(Mat3([
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ]))
    }
}

/// Coefficients of `R = I + a·K + b·K²` and their derivatives divided by θ.
struct RodriguesCoeffs<T> {
    a: T,
    b: T,
    da_over_theta: T,
    db_over_theta: T,
}

fn rodrigues_coeffs<T: Real>(theta: T) -> RodriguesCoeffs<T> {
    let t2 = theta * theta;
    if theta < T::of(SERIES_THRESHOLD) {
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        RodriguesCoeffs {
            a: T::one() - t2 / T::of(6.0) + t4 / T::of(120.0) - t6 / T::of(5040.0),
            b: T::of(0.5) - t2 / T::of(24.0) + t4 / T::of(720.0) - t6 / T::of(40320.0),
            da_over_theta: T::of(-1.0 / 3.0) + t2 / T::of(30.0) - t4 / T::of(840.0) + t6 / T::of(45360.0),
            db_over_theta: T::of(-1.0 / 12.0) + t2 / T::of(180.0) - t4 / T::of(6720.0) + t6 / T::of(453600.0),
        }
    } else {
        let (s, c) = theta.sin_cos();
        let half_sin = (theta * T::of(0.5)).sin();
        let one_minus_cos = T::of(2.0) * half_sin * half_sin;
        let t3 = t2 * theta;
        RodriguesCoeffs {
            a: s / theta,
            b: one_minus_cos / t2,
            da_over_theta: (theta * c - s) / t3,
            db_over_theta: (theta * s - T::of(2.0) * one_minus_cos) / (t3 * theta),
        }
    }
}

/// Exponential map from a rotation vector to a rotation matrix.
pub fn rodrigues<T: Real>(aa: &AxisAngle<T>) -> RotationMatrix<T> {
    let v = aa.vector();
    let k = Mat3::hat(&v);
    let c = rodrigues_coeffs(v.norm());
    RotationMatrix(Mat3::identity() + k.scale(c.a) + k.matmul(&k).scale(c.b))
}

/// Partial derivatives `∂R/∂vᵢ` of [`rodrigues`] for `i = 0, 1, 2`.
pub fn rodrigues_jacobian<T: Real>(aa: &AxisAngle<T>) -> [Mat3<T>; 3] {
    let v = aa.vector();
    let k = Mat3::hat(&v);
    let k2 = k.matmul(&k);
    let c = rodrigues_coeffs(v.norm());
    std::array::from_fn(|i| {
        let e = Mat3::hat(&Vec3::unit(i));
        k.scale(c.da_over_theta * v[i])
            + e.scale(c.a)
            + k2.scale(c.db_over_theta * v[i])
            + (e.matmul(&k) + k.matmul(&e)).scale(c.b)
    })
}

/// Pulls a gradient on `R` back to the rotation vector.
pub fn rodrigues_backward<T: Real>(aa: &AxisAngle<T>, d_rotation: &Mat3<T>) -> [T; 3] {
    let jac = rodrigues_jacobian(aa);
    jac.map(|j| j.inner(d_rotation))
}

/// Logarithm map; returns an angle in `[0, π]`.
pub fn rotation_to_axis_angle<T: Real>(r: &RotationMatrix<T>) -> AxisAngle<T> {
    let m = r.matrix();
    let skew = m.vee_skew();
    let s = skew.norm();
    let c = (m.trace() - T::one()) * T::of(0.5);
    let theta = s.atan2(c);

    if c > T::of(-0.5) {
        // θ < 2π/3: axis from the skew part is well conditioned
        let factor = if theta < T::of(SERIES_THRESHOLD) {
            let t2 = theta * theta;
            T::one() + t2 / T::of(6.0) + T::of(7.0) * t2 * t2 / T::of(360.0)
        } else {
            theta / s
        };
        return AxisAngle(skew.scale(factor).0);
    }

    // Near π: n nᵀ = (sym(R) − cos θ·I) / (1 − cos θ); take the column with
    // the largest diagonal entry.
    let sym = Mat3(std::array::from_fn(|i| std::array::from_fn(|j| (m.0[i][j] + m.0[j][i]) * T::of(0.5))));
    let denom = T::one() - c;
    let b = Mat3(std::array::from_fn(|i| {
        std::array::from_fn(|j| (sym.0[i][j] - if i == j { c } else { T::zero() }) / denom)
    }));
    let mut best = 0;
    for i in 1..3 {
        if b.0[i][i] > b.0[best][best] {
            best = i;
        }
    }
    let mut axis = b.col(best).scale(T::one() / b.0[best][best].max(T::min_positive_value()).sqrt());
    if axis.dot(&skew) < T::zero() {
        axis = -axis;
    }
    AxisAngle(axis.normalized().scale(theta).0)
}

/// Geodesic angle between the rotations two unit quaternions represent.
pub fn quat_distance<T: Real>(q1: &Quaternion<T>, q2: &Quaternion<T>) -> T {
    let d = q1.dot(q2).abs().min(T::one());
    T::of(2.0) * d.acos()
}
