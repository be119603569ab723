use crate::error::{Error, Result};
use crate::manifold::so_geodesic;
use crate::matrix::MatrixD;

/// A sampled pair (β(t), v(t)) on the uniform grid tᵢ = i/(n−1).
#[derive(Clone, Debug, PartialEq)]
pub struct ProfilePath {
    pub beta: Vec<MatrixD>,
    pub v: Vec<f64>,
}

/// Shape of the β part of a starting path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BetaShape {
    /// Straight segment R⁻ → R⁺ in M^{d×d} across the plateau.
    Chord,
    /// SO(d) geodesic across the plateau.
    Geodesic,
    /// Jump across the single middle interval.
    Jump,
}

/// A member of the multistart family: a trapezoidal dip in v of the given
/// depth (v drops to 1 − depth) with ramps of length `ramp` on each side, and
/// β transitioning on the plateau between the ramps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StartSpec {
    pub shape: BetaShape,
    pub depth: f64,
    pub ramp: f64,
}

impl ProfilePath {
    #[inline]
    pub fn len(&self) -> usize {
        self.v.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.beta[0].dim()
    }

    pub fn constant(r: &MatrixD, n: usize) -> Self {
        Self {
            beta: vec![*r; n],
            v: vec![1.0; n],
        }
    }

    /// Build a starting path on `n` nodes.
    pub fn from_spec(rm: &MatrixD, rp: &MatrixD, n: usize, spec: &StartSpec) -> Result<Self> {
        if n < 4 {
            return Err(Error::DomainError(format!(
                "need at least 4 nodes, got {n}"
            )));
        }
        let ramp = spec.ramp.clamp(1e-3, 0.5);
        let depth = spec.depth.clamp(0.0, 1.0);
        let last = (n - 1) as f64;
        let mut beta = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / last;
            let dip = (t / ramp).min((1.0 - t) / ramp).min(1.0);
            v.push(1.0 - depth * dip);
            let tau = if ramp >= 0.5 {
                t
            } else {
                ((t - ramp) / (1.0 - 2.0 * ramp)).clamp(0.0, 1.0)
            };
            let b = match spec.shape {
                BetaShape::Chord => *rm + (*rp - *rm).scale(tau),
                BetaShape::Geodesic => so_geodesic(rm, rp, tau)?,
                BetaShape::Jump => {
                    if 2 * i < n - 1 {
                        *rm
                    } else {
                        *rp
                    }
                }
            };
            beta.push(b);
        }
        beta[0] = *rm;
        beta[n - 1] = *rp;
        v[0] = 1.0;
        v[n - 1] = 1.0;
        Ok(Self { beta, v })
    }

    /// The brittle competitor: v falls linearly to 0 over the first third,
    /// stays 0, and β jumps across the middle interval.
    pub fn pinch(rm: &MatrixD, rp: &MatrixD, n: usize) -> Result<Self> {
        Self::from_spec(
            rm,
            rp,
            n,
            &StartSpec {
                shape: BetaShape::Jump,
                depth: 1.0,
                ramp: 1.0 / 3.0,
            },
        )
    }

    /// Resample onto `m` nodes by piecewise-linear interpolation in t.
    pub fn resample(&self, m: usize) -> Self {
        let n = self.len();
        let mut beta = Vec::with_capacity(m);
        let mut v = Vec::with_capacity(m);
        for j in 0..m {
            let t = j as f64 / (m - 1) as f64 * (n - 1) as f64;
            let (b, vv) = self.sample_index(t);
            beta.push(b);
            v.push(vv);
        }
        Self { beta, v }
    }

    /// Linear interpolation at fractional node index `t ∈ [0, n−1]`.
    pub fn sample_index(&self, t: f64) -> (MatrixD, f64) {
        let n = self.len();
        let t = t.clamp(0.0, (n - 1) as f64);
        let i = (t.floor() as usize).min(n - 2);
        let w = t - i as f64;
        let b = self.beta[i].scale(1.0 - w) + self.beta[i + 1].scale(w);
        let v = self.v[i] * (1.0 - w) + self.v[i + 1] * w;
        (b, v)
    }
}
