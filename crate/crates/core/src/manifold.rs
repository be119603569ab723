//! Matrix-manifold primitives: the ball projection Φ, distance and polar
//! projection onto O(d), and geodesics on SO(d).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::matrix::MatrixD;
use crate::pointgroup::PointGroup;

/// Default smallest singular value accepted by [`polar_project`].
pub const POLAR_FLOOR: f64 = 1e-8;

/// Radial projection onto the closed Frobenius ball of radius √d.
pub fn project_ball(x: &MatrixD) -> MatrixD {
    let r = (x.dim() as f64).sqrt();
    let n = x.norm();
    if n <= r {
        *x
    } else {
        x.scale(r / n)
    }
}

/// Singular values in decreasing order (unused trailing slot is zero for d=2).
pub fn singular_values(x: &MatrixD) -> Result<[f64; 3]> {
    match x.dim() {
        2 => {
            let (conf, anti) = conformal_split(x);
            Ok([conf + anti, (conf - anti).abs(), 0.0])
        }
        3 => {
            let svd = x
                .to_na3()
                .try_svd(false, false, 1e-15, 200)
                .ok_or(Error::SvdFailure)?;
            let mut s = [
                svd.singular_values[0],
                svd.singular_values[1],
                svd.singular_values[2],
            ];
            s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::SvdFailure);
            }
            Ok(s)
        }
        d => Err(Error::UnsupportedDimension(d)),
    }
}

/// Norms of the conformal part [[p,−q],[q,p]] and anticonformal part
/// [[r,s],[s,−r]] of a 2×2 matrix, each scaled so that the singular values are
/// their sum and difference.
#[inline]
fn conformal_split(x: &MatrixD) -> (f64, f64) {
    let [a, b, c, d] = [x[(0, 0)], x[(0, 1)], x[(1, 0)], x[(1, 1)]];
    let p = 0.5 * (a + d);
    let q = 0.5 * (c - b);
    let r = 0.5 * (a - d);
    let s = 0.5 * (b + c);
    (p.hypot(q), r.hypot(s))
}

/// dist(x, O(d)) = sqrt(Σ (σᵢ − 1)²).
pub fn dist_orthogonal(x: &MatrixD) -> Result<f64> {
    Ok(dist_orthogonal_sq(x)?.sqrt())
}

pub fn dist_orthogonal_sq(x: &MatrixD) -> Result<f64> {
    let s = singular_values(x)?;
    Ok(s[..x.dim()].iter().map(|v| (v - 1.0) * (v - 1.0)).sum())
}

/// Orthogonal polar factor with the default singular-value floor.
pub fn polar_project(x: &MatrixD) -> Result<MatrixD> {
    polar_project_with_floor(x, POLAR_FLOOR)
}

/// Orthogonal polar factor ψ(x) = x(xᵀx)^{-1/2}.
pub fn polar_project_with_floor(x: &MatrixD, floor: f64) -> Result<MatrixD> {
    match x.dim() {
        2 => {
            let (conf, anti) = conformal_split(x);
            let sigma_min = (conf - anti).abs();
            if !(sigma_min >= floor) {
                return Err(Error::SingularMatrix { sigma_min });
            }
            let [a, b, c, d] = [x[(0, 0)], x[(0, 1)], x[(1, 0)], x[(1, 1)]];
            let mut out = MatrixD::zeros(2);
            if conf > anti {
                let p = 0.5 * (a + d) / conf;
                let q = 0.5 * (c - b) / conf;
                out.as_mut_slice().copy_from_slice(&[p, -q, q, p]);
            } else {
                let r = 0.5 * (a - d) / anti;
                let s = 0.5 * (b + c) / anti;
                out.as_mut_slice().copy_from_slice(&[r, s, s, -r]);
            }
            Ok(out)
        }
        3 => {
            let svd = x
                .to_na3()
                .try_svd(true, true, 1e-15, 200)
                .ok_or(Error::SvdFailure)?;
            let sigma_min = svd.singular_values.min();
            if !(sigma_min >= floor) {
                return Err(Error::SingularMatrix { sigma_min });
            }
            let u = svd.u.ok_or(Error::SvdFailure)?;
            let v_t = svd.v_t.ok_or(Error::SvdFailure)?;
            Ok(MatrixD::from_na3(&(u * v_t)))
        }
        d => Err(Error::UnsupportedDimension(d)),
    }
}

/// Gradient of dist²(x, O(d)) with respect to x, i.e. 2(x − ψ(x)).
///
/// At singular x the function is not differentiable; any nearest orthogonal
/// matrix is used (floor zero).
pub fn dist_orthogonal_sq_grad(x: &MatrixD) -> MatrixD {
    match polar_project_with_floor(x, 0.0) {
        Ok(p) => (*x - p).scale(2.0),
        Err(_) => (*x - MatrixD::identity(x.dim())).scale(2.0),
    }
}

/// Value and gradient of dist²(x, O(d)) in one pass.
pub fn dist_orthogonal_sq_with_grad(x: &MatrixD) -> (f64, MatrixD) {
    let p = polar_project_with_floor(x, 0.0).unwrap_or_else(|_| MatrixD::identity(x.dim()));
    let diff = *x - p;
    // ‖x − ψ(x)‖² equals Σ(σᵢ − 1)² whenever ψ(x) is a polar factor.
    (diff.norm_sq(), diff.scale(2.0))
}

/// Principal logarithm of a rotation, returned as a skew-symmetric matrix.
pub fn so_log(r: &MatrixD) -> Result<MatrixD> {
    match r.dim() {
        2 => {
            let c = 0.5 * (r[(0, 0)] + r[(1, 1)]);
            let s = 0.5 * (r[(1, 0)] - r[(0, 1)]);
            if c <= -1.0 + 1e-12 {
                return Err(Error::LogBranchFailure);
            }
            let phi = s.atan2(c);
            let mut w = MatrixD::zeros(2);
            w[(0, 1)] = -phi;
            w[(1, 0)] = phi;
            Ok(w)
        }
        3 => {
            let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
            if cos <= -1.0 + 1e-12 {
                return Err(Error::LogBranchFailure);
            }
            let theta = cos.acos();
            let skew = (*r - r.transpose()).scale(0.5);
            if theta < 1e-12 {
                return Ok(skew);
            }
            Ok(skew.scale(theta / theta.sin()))
        }
        d => Err(Error::UnsupportedDimension(d)),
    }
}

/// Exponential of a skew-symmetric matrix.
pub fn so_exp(w: &MatrixD) -> MatrixD {
    match w.dim() {
        2 => MatrixD::rotation2(0.5 * (w[(1, 0)] - w[(0, 1)])),
        _ => {
            let axis = [
                0.5 * (w[(2, 1)] - w[(1, 2)]),
                0.5 * (w[(0, 2)] - w[(2, 0)]),
                0.5 * (w[(1, 0)] - w[(0, 1)]),
            ];
            let theta = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
            if theta < 1e-15 {
                return MatrixD::identity(3) + *w;
            }
            MatrixD::rotation3(axis, theta)
        }
    }
}

/// Point at parameter `t` on the SO(d) geodesic r0·exp(t·log(r0ᵀr1)).
pub fn so_geodesic(r0: &MatrixD, r1: &MatrixD, t: f64) -> Result<MatrixD> {
    if r0.dim() != r1.dim() {
        return Err(Error::DimensionMismatch {
            expected: r0.dim(),
            found: r1.dim(),
        });
    }
    if r0.det().signum() != r1.det().signum() {
        return Err(Error::ComponentMismatch);
    }
    let rel = r0.transpose() * *r1;
    let w = so_log(&rel)?;
    Ok(*r0 * so_exp(&w.scale(t)))
}

/// Riemannian length of the SO(d) geodesic between r0 and r1 under the
/// Frobenius metric.
pub fn geodesic_length(r0: &MatrixD, r1: &MatrixD) -> Result<f64> {
    if r0.det().signum() != r1.det().signum() {
        return Err(Error::ComponentMismatch);
    }
    let rel = r0.transpose() * *r1;
    let cos = match r0.dim() {
        2 => 0.5 * (rel[(0, 0)] + rel[(1, 1)]),
        _ => (rel.trace() - 1.0) * 0.5,
    };
    let theta = cos.clamp(-1.0, 1.0).acos();
    // A rotation by θ in a plane moves a d×d frame at Frobenius speed √2·θ.
    Ok(std::f64::consts::SQRT_2 * theta)
}

/// Smallest rotation angle between a and b over the orbit of b (planar only).
pub fn misorientation_angle(g: &PointGroup, a: &MatrixD, b: &MatrixD) -> Result<f64> {
    if a.dim() != 2 || g.dim() != 2 {
        return Err(Error::UnsupportedDimension(a.dim()));
    }
    if b.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: b.dim(),
        });
    }
    let sign = a.det().signum();
    let mut best: Option<f64> = None;
    for elem in g.elements() {
        let gb = *elem * *b;
        if gb.det().signum() != sign {
            continue;
        }
        let rel = a.transpose() * gb;
        let angle = (0.5 * (rel[(1, 0)] - rel[(0, 1)]))
            .atan2(0.5 * (rel[(0, 0)] + rel[(1, 1)]))
            .abs()
            .min(PI);
        best = Some(best.map_or(angle, |b: f64| b.min(angle)));
    }
    best.ok_or(Error::ComponentMismatch)
}
