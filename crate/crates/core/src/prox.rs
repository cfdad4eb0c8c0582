//! Projection onto ℓ∞ balls and the two proximal maps of the
//! dequantization problem.

use crate::error::{Error, Result};
use crate::transforms::{apply, DenseMatrix};

/// Closed ℓ∞ ball `{v : ‖v‖∞ ≤ radius}` centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinfBall {
    radius: f64,
}

impl LinfBall {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidRadius(radius));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| clip(v, self.radius)).collect()
    }

    pub fn project_in_place(&self, x: &mut [f64]) {
        for v in x {
            *v = clip(*v, self.radius);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.abs() <= self.radius)
    }
}

/// Scalar clip to `[-r, r]`; `r · hardtanh(v / r)` for `r > 0`.
#[inline]
pub fn clip(v: f64, r: f64) -> f64 {
    v.min(r).max(-r)
}

/// Euclidean projection of `x` onto the ℓ∞ ball of radius `r`.
pub fn project_linf_ball(x: &[f64], r: f64) -> Result<Vec<f64>> {
    Ok(LinfBall::new(r)?.project(x))
}

/// Proximal map of `σF*` for `F(y) = ‖y + Kq‖₁`, whose conjugate is the
/// unit ℓ∞-ball indicator minus the linear term `(Kq)ᵀy`. The linear term
/// shifts the argument by `σKq` before projecting.
pub fn prox_dual_dequant(v: &[f64], sigma: f64, k: &DenseMatrix, q: &[f64]) -> Result<Vec<f64>> {
    let kq = apply(k, q)?;
    prox_dual_with_offset(v, sigma, &kq)
}

/// Same as [`prox_dual_dequant`] with `Kq` precomputed.
pub fn prox_dual_with_offset(v: &[f64], sigma: f64, kq: &[f64]) -> Result<Vec<f64>> {
    if v.len() != kq.len() {
        return Err(Error::mismatch("prox_dual_dequant", kq.len(), v.len()));
    }
    Ok(v.iter()
        .zip(kq)
        .map(|(&vi, &ki)| clip(vi + sigma * ki, 1.0))
        .collect())
}

/// Proximal map of `τG` for `G` the indicator of `{‖x‖∞ ≤ Δ/2}`; independent
/// of `τ`.
pub fn prox_primal_dequant(v: &[f64], delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "quantization step must be positive, got {delta}"
        )));
    }
    project_linf_ball(v, delta / 2.0)
}
