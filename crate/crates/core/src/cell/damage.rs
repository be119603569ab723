use crate::error::{Error, Result};

/// The damage prefactor f(s) = ℓ·|log(1−s)|/(1−s), evaluated with the
/// argument capped at `v_ceiling`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DamageModel {
    pub ell: f64,
    pub v_ceiling: f64,
}

impl Default for DamageModel {
    fn default() -> Self {
        Self {
            ell: 1.0,
            v_ceiling: 1.0 - 1e-8,
        }
    }
}

impl DamageModel {
    pub fn new(ell: f64) -> Self {
        Self {
            ell,
            ..Self::default()
        }
    }

    /// f(s) for s ∈ [0, 1).
    pub fn f_eval(&self, s: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&s) {
            return Err(Error::DomainError(format!(
                "f evaluated at {s}, need 0 <= s < 1"
            )));
        }
        Ok(self.f(s))
    }

    /// Unchecked f; arguments are clamped to [0, v_ceiling].
    #[inline]
    pub fn f(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.v_ceiling);
        let u = 1.0 - s;
        self.ell * (-u.ln()) / u
    }

    /// f and df/ds; the derivative is zero where the cap is active.
    #[inline]
    pub fn f_with_derivative(&self, s: f64) -> (f64, f64) {
        let capped = s > self.v_ceiling || s < 0.0;
        let sc = s.clamp(0.0, self.v_ceiling);
        let u = 1.0 - sc;
        let log = -u.ln();
        let f = self.ell * log / u;
        let df = if capped {
            0.0
        } else {
            self.ell * (1.0 + log) / (u * u)
        };
        (f, df)
    }
}
