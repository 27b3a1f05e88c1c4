//! 3×3 singular value decomposition and projection onto SO(3).

use crate::error::{Error, Result};
use crate::kinematics::rotation::RotationMatrix;
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Relative singular-value floor below which a matrix counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// `M = U · diag(σ) · Vᵀ` with `σ₀ ≥ σ₁ ≥ σ₂ ≥ 0` and orthogonal `U`, `V`.
#[derive(Clone, Copy, Debug)]
pub struct Svd3<T> {
    pub u: Mat3<T>,
    pub sigma: [T; 3],
    pub v: Mat3<T>,
}

/// One-sided Jacobi SVD.
pub fn svd3<T: Real>(m: &Mat3<T>) -> Svd3<T> {
    let mut a = *m;
    let mut v = Mat3::<T>::identity();
    let eps = T::epsilon();

    for _sweep in 0..40 {
        let mut rotated = false;
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let cp = a.col(p);
            let cq = a.col(q);
            let alpha = cp.norm_squared();
            let beta = cq.norm_squared();
            let gamma = cp.dot(&cq);
            if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (T::of(2.0) * gamma);
            let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
            let c = T::one() / (T::one() + t * t).sqrt();
            let s = c * t;
            for i in 0..3 {
                let ap = a.0[i][p];
                let aq = a.0[i][q];
                a.0[i][p] = c * ap - s * aq;
                a.0[i][q] = s * ap + c * aq;
                let vp = v.0[i][p];
                let vq = v.0[i][q];
                v.0[i][p] = c * vp - s * vq;
                v.0[i][q] = s * vp + c * vq;
            }
        }
        if !rotated {
            break;
        }
    }

    let norms = [a.col(0).norm(), a.col(1).norm(), a.col(2).norm()];
    let mut order = [0usize, 1, 2];
    // stable: equal singular values keep their column order
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));

    let sigma = order.map(|i| norms[i]);
    let v_sorted = Mat3::from_cols(v.col(order[0]), v.col(order[1]), v.col(order[2]));

    let tiny = T::min_positive_value().sqrt();
    let mut u_cols: [Vec3<T>; 3] = [Vec3::zero(); 3];
    for (k, &i) in order.iter().enumerate() {
        if norms[i] > tiny {
            u_cols[k] = a.col(i).scale(T::one() / norms[i]);
        }
    }
    if sigma[0] <= tiny {
        u_cols = [Vec3::unit(0), Vec3::unit(1), Vec3::unit(2)];
    } else if sigma[1] <= tiny {
        let helper = if u_cols[0].x().abs() < T::of(0.9) { Vec3::unit(0) } else { Vec3::unit(1) };
        u_cols[1] = u_cols[0].cross(&helper).normalized();
        u_cols[2] = u_cols[0].cross(&u_cols[1]);
    } else if sigma[2] <= tiny {
        u_cols[2] = u_cols[0].cross(&u_cols[1]).normalized();
    }

    Svd3 { u: Mat3::from_cols(u_cols[0], u_cols[1], u_cols[2]), sigma, v: v_sorted }
}

/// Factors kept from [`project_to_so3_cached`] for the backward pass.
///
/// `M = Ũ · diag(σ̃) · Vᵀ` with `det(Ũ Vᵀ) = +1`; the last singular value
/// carries the sign flip.
#[derive(Clone, Copy, Debug)]
pub struct PolarFactors<T> {
    pub u: Mat3<T>,
    pub signed_sigma: [T; 3],
    pub v: Mat3<T>,
}

/// Nearest rotation in Frobenius norm: `U · diag(1, 1, det(UVᵀ)) · Vᵀ`.
pub fn project_to_so3<T: Real>(m: &Mat3<T>) -> Result<RotationMatrix<T>> {
    project_to_so3_cached(m).map(|(r, _)| r)
}

pub fn project_to_so3_cached<T: Real>(m: &Mat3<T>) -> Result<(RotationMatrix<T>, PolarFactors<T>)> {
    let svd = svd3(m);
    let degenerate = |s: [T; 3]| Error::DegenerateMatrix(s.map(|v| v.to_f64_lossy()));
    if !m.is_finite() || !(svd.sigma[0] > T::zero()) || svd.sigma[1] <= svd.sigma[0] * T::of(RANK_TOLERANCE) {
        return Err(degenerate(svd.sigma));
    }
    let d = (svd.u.det() * svd.v.det()).signum();
    let mut u = svd.u;
    for row in u.0.iter_mut() {
        row[2] *= d;
    }
    let r = u.matmul(&svd.v.transpose());
    let signed_sigma = [svd.sigma[0], svd.sigma[1], svd.sigma[2] * d];
    Ok((RotationMatrix::from_matrix_unchecked(r), PolarFactors { u, signed_sigma, v: svd.v }))
}

/// Pulls a gradient on the projected rotation back to the input matrix.
///
/// Uses the differential of the polar factor, `dR = Ũ X Vᵀ` with
/// `Xᵢⱼ = (Pᵢⱼ − Pⱼᵢ)/(σ̃ᵢ + σ̃ⱼ)`, `P = Ũᵀ dM V`. Singular when two signed
/// singular values sum to zero.
pub fn project_to_so3_backward<T: Real>(factors: &PolarFactors<T>, d_rotation: &Mat3<T>) -> Mat3<T> {
    let h = factors.u.transpose().matmul(d_rotation).matmul(&factors.v);
    let s = factors.signed_sigma;
    let mut dp = Mat3::zero();
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                dp.0[i][j] = (h.0[i][j] - h.0[j][i]) / (s[i] + s[j]);
            }
        }
    }
    factors.u.matmul(&dp).matmul(&factors.v.transpose())
}
