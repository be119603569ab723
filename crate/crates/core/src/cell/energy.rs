//! Discrete reparametrization-invariant cell energy.
//!
//! On every interval [tᵢ, tᵢ₊₁] the pointwise factors are evaluated at the
//! node averages (β̄, v̄) and the derivatives by forward differences:
//!
//! ```text
//! eᵢ = sqrt((1−v̄)² + 4λ dist²(β̄, O(d))) · sqrt(f²(v̄)|Δβ|² + |Δv|²)
//! ```
//!
//! The grid spacing cancels because the integrand is 1-homogeneous in the
//! derivatives. The companion "action" Σ (n−1)·eᵢ² bounds the squared length
//! from above (Cauchy–Schwarz) with equality at constant metric speed; the
//! solver minimizes it first to equidistribute the nodes.

use crate::manifold::dist_orthogonal_sq_with_grad;
use crate::matrix::MatrixD;
use crate::optimize::Objective;

use super::damage::DamageModel;
use super::path::ProfilePath;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Functional {
    Length,
    Action,
}

/// The cell energy for fixed endpoints, acting on the interior unknowns laid
/// out as `[β₁ … β_{n−2}, v₁ … v_{n−2}]`.
#[derive(Clone, Debug)]
pub struct CellEnergy {
    pub rminus: MatrixD,
    pub rplus: MatrixD,
    pub n: usize,
    pub lambda: f64,
    pub damage: DamageModel,
    pub functional: Functional,
}

impl CellEnergy {
    #[inline]
    fn dd(&self) -> usize {
        self.rminus.dim() * self.rminus.dim()
    }

    pub fn num_unknowns(&self) -> usize {
        (self.n - 2) * (self.dd() + 1)
    }

    pub fn pack(&self, path: &ProfilePath) -> Vec<f64> {
        let dd = self.dd();
        let mut x = Vec::with_capacity(self.num_unknowns());
        for b in &path.beta[1..self.n - 1] {
            x.extend_from_slice(b.as_slice());
        }
        x.extend_from_slice(&path.v[1..self.n - 1]);
        debug_assert_eq!(x.len(), (self.n - 2) * (dd + 1));
        x
    }

    pub fn unpack(&self, x: &[f64]) -> ProfilePath {
        let n = self.n;
        let mut beta = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        beta.push(self.rminus);
        v.push(1.0);
        for i in 1..n - 1 {
            beta.push(self.beta_at(x, i));
            v.push(self.v_at(x, i));
        }
        beta.push(self.rplus);
        v.push(1.0);
        ProfilePath { beta, v }
    }

    #[inline]
    fn beta_at(&self, x: &[f64], i: usize) -> MatrixD {
        if i == 0 {
            self.rminus
        } else if i == self.n - 1 {
            self.rplus
        } else {
            let dd = self.dd();
            let mut m = MatrixD::zeros(self.rminus.dim());
            m.as_mut_slice().copy_from_slice(&x[(i - 1) * dd..i * dd]);
            m
        }
    }

    #[inline]
    fn v_at(&self, x: &[f64], i: usize) -> f64 {
        if i == 0 || i == self.n - 1 {
            1.0
        } else {
            x[(self.n - 2) * self.dd() + i - 1]
        }
    }

    /// Interval contributions and their partial derivatives with respect to
    /// (β_i, β_{i+1}, v_i, v_{i+1}).
    #[inline]
    fn interval(
        &self,
        bi: &MatrixD,
        bj: &MatrixD,
        vi: f64,
        vj: f64,
        want_grad: bool,
    ) -> (f64, MatrixD, MatrixD, f64, f64) {
        let vbar = 0.5 * (vi + vj);
        let u = 1.0 - vbar;
        let db = *bj - *bi;
        let dv = vj - vi;
        let (dist2, dist2_grad) = if self.lambda > 0.0 {
            let bbar = (*bi + *bj).scale(0.5);
            if want_grad {
                dist_orthogonal_sq_with_grad(&bbar)
            } else {
                (
                    dist_orthogonal_sq_with_grad(&bbar).0,
                    MatrixD::zeros(bi.dim()),
                )
            }
        } else {
            (0.0, MatrixD::zeros(bi.dim()))
        };
        let p = u * u + 4.0 * self.lambda * dist2;
        let (f, fp) = self.damage.f_with_derivative(vbar);
        let phi = f * f;
        let nb2 = db.norm_sq();
        let q = phi * nb2 + dv * dv;
        let zero = MatrixD::zeros(bi.dim());
        // Weights turning (∂P, ∂Q) into the derivative of the chosen functional.
        let (value, wp, wq) = match self.functional {
            Functional::Length => {
                let l = (p * q).sqrt();
                if l <= 0.0 {
                    return (0.0, zero, zero, 0.0, 0.0);
                }
                (l, q / (2.0 * l), p / (2.0 * l))
            }
            Functional::Action => {
                let s = (self.n - 1) as f64;
                (s * p * q, s * q, s * p)
            }
        };
        if !want_grad {
            return (value, zero, zero, 0.0, 0.0);
        }
        let d_vbar = wp * (-2.0 * u) + wq * (2.0 * f * fp * nb2);
        let d_dv = wq * 2.0 * dv;
        let d_bbar = dist2_grad.scale(wp * 4.0 * self.lambda);
        let d_db = db.scale(wq * 2.0 * phi);
        let gi = d_bbar.scale(0.5) - d_db;
        let gj = d_bbar.scale(0.5) + d_db;
        (value, gi, gj, 0.5 * d_vbar - d_dv, 0.5 * d_vbar + d_dv)
    }

    /// Per-interval factors (P, Q) of the length integrand √P·√Q along a
    /// full path, Q being the squared increment.
    pub fn interval_factors(&self, path: &ProfilePath) -> (Vec<f64>, Vec<f64>) {
        let m = path.len();
        let mut ps = Vec::with_capacity(m.saturating_sub(1));
        let mut qs = Vec::with_capacity(m.saturating_sub(1));
        for i in 0..m.saturating_sub(1) {
            let (bi, bj) = (&path.beta[i], &path.beta[i + 1]);
            let vbar = 0.5 * (path.v[i] + path.v[i + 1]);
            let dist2 = if self.lambda > 0.0 {
                dist_orthogonal_sq_with_grad(&(*bi + *bj).scale(0.5)).0
            } else {
                0.0
            };
            let f = self.damage.f(vbar);
            let dv = path.v[i + 1] - path.v[i];
            ps.push((1.0 - vbar).powi(2) + 4.0 * self.lambda * dist2);
            qs.push(f * f * (*bj - *bi).norm_sq() + dv * dv);
        }
        (ps, qs)
    }

    pub fn value_of(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut prev_b = self.beta_at(x, 0);
        let mut prev_v = 1.0;
        for i in 0..self.n - 1 {
            let b = self.beta_at(x, i + 1);
            let v = self.v_at(x, i + 1);
            total += self.interval(&prev_b, &b, prev_v, v, false).0;
            prev_b = b;
            prev_v = v;
        }
        total
    }
}

impl Objective for CellEnergy {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = self.n;
        let dd = self.dd();
        let voff = (n - 2) * dd;
        let mut total = 0.0;
        let mut prev_b = self.beta_at(x, 0);
        let mut prev_v = 1.0;
        for i in 0..n - 1 {
            let j = i + 1;
            let b = self.beta_at(x, j);
            let v = self.v_at(x, j);
            let (e, gi, gj, gvi, gvj) = self.interval(&prev_b, &b, prev_v, v, true);
            total += e;
            if i >= 1 {
                let off = (i - 1) * dd;
                for (g, d) in grad[off..off + dd].iter_mut().zip(gi.as_slice()) {
                    *g += d;
                }
                grad[voff + i - 1] += gvi;
            }
            if j <= n - 2 {
                let off = (j - 1) * dd;
                for (g, d) in grad[off..off + dd].iter_mut().zip(gj.as_slice()) {
                    *g += d;
                }
                grad[voff + j - 1] += gvj;
            }
            prev_b = b;
            prev_v = v;
        }
        total
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.value_of(x)
    }
}
