//! Chambolle-Pock primal-dual iterations with pluggable proximal maps, and
//! their instantiation for ℓ1-sparse dequantization.
//!
//! One step computes
//!
//! ```text
//! y⁺ = prox_dual(y + σ K x̄)
//! x⁺ = prox_primal(x − τ Kᵀ y⁺)
//! x̄⁺ = x⁺ + θ (x⁺ − x)
//! ```
//!
//! For dequantization the unknown is the offset `x = s − q` of the signal
//! from its quantized version, constrained to `‖x‖∞ ≤ Δ/2`, and the objective
//! is `‖K(x + q)‖₁`.

use crate::error::{Error, Result};
use crate::pipeline::QuantizedSignal;
use crate::prox::{clip, LinfBall};
use crate::transforms::{apply, apply_into, apply_transpose_into, DenseMatrix, OrthonormalTransform};

/// Relative slack when checking `στ‖K‖² ≤ 1`, so that `σ = τ = 1/‖K‖`
/// survives rounding.
const STEP_CONDITION_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CpConfig {
    pub sigma: f64,
    pub tau: f64,
    pub theta: f64,
    pub max_iter: usize,
    pub record_history: bool,
}

impl CpConfig {
    /// Validates step sizes against the operator norm `op_norm` of `K`.
    pub fn new(
        sigma: f64,
        tau: f64,
        theta: f64,
        max_iter: usize,
        record_history: bool,
        op_norm: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0 && tau > 0.0) || !sigma.is_finite() || !tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "step sizes must be positive, got sigma={sigma}, tau={tau}"
            )));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!(
                "extrapolation factor must lie in [0, 1], got {theta}"
            )));
        }
        if !(op_norm >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid operator norm {op_norm}")));
        }
        if sigma * tau * op_norm * op_norm > 1.0 + STEP_CONDITION_SLACK {
            return Err(Error::InvalidParameter(format!(
                "step sizes violate sigma*tau*|K|^2 <= 1 (sigma={sigma}, tau={tau}, |K|={op_norm})"
            )));
        }
        Ok(Self {
            sigma,
            tau,
            theta,
            max_iter,
            record_history,
        })
    }

    /// `σ = τ = 1/‖K‖`, `θ = 1`.
    pub fn with_defaults(op_norm: f64, max_iter: usize) -> Result<Self> {
        let (sigma, tau) = default_step_sizes(op_norm)?;
        Self::new(sigma, tau, 1.0, max_iter, false, op_norm)
    }

    pub fn theta(mut self, theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!(
                "extrapolation factor must lie in [0, 1], got {theta}"
            )));
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn record_history(mut self, record: bool) -> Self {
        self.record_history = record;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub xbar: Vec<f64>,
    pub iter: usize,
}

impl CpState {
    /// Starting point with `x̄⁰ = x⁰`.
    pub fn new(x0: Vec<f64>, y0: Vec<f64>) -> Self {
        Self {
            xbar: x0.clone(),
            x: x0,
            y: y0,
            iter: 0,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n], vec![0.0; n])
    }
}

/// `σ = τ = 1/op_norm`, so `στ‖K‖² = 1`.
pub fn default_step_sizes(op_norm: f64) -> Result<(f64, f64)> {
    if !(op_norm > 0.0) || !op_norm.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "operator norm must be positive, got {op_norm}"
        )));
    }
    let step = 1.0 / op_norm;
    Ok((step, step))
}

/// One primal-dual iteration. `prox_dual` and `prox_primal` receive the
/// already-stepped arguments and must return vectors of the same length.
pub fn cp_step<D, P>(
    state: &CpState,
    k: &DenseMatrix,
    prox_dual: D,
    prox_primal: P,
    config: &CpConfig,
) -> Result<CpState>
where
    D: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    check_state(state, k)?;
    let mut kx = vec![0.0; k.rows()];
    apply_into(k, &state.xbar, &mut kx);
    let dual_arg: Vec<f64> = state
        .y
        .iter()
        .zip(&kx)
        .map(|(&y, &v)| y + config.sigma * v)
        .collect();
    let y = prox_dual(&dual_arg);
    if y.len() != k.rows() {
        return Err(Error::mismatch("dual prox output", k.rows(), y.len()));
    }

    let mut kty = vec![0.0; k.cols()];
    apply_transpose_into(k, &y, &mut kty);
    let primal_arg: Vec<f64> = state
        .x
        .iter()
        .zip(&kty)
        .map(|(&x, &v)| x - config.tau * v)
        .collect();
    let x = prox_primal(&primal_arg);
    if x.len() != k.cols() {
        return Err(Error::mismatch("primal prox output", k.cols(), x.len()));
    }

    let xbar = x
        .iter()
        .zip(&state.x)
        .map(|(&xn, &xo)| xn + config.theta * (xn - xo))
        .collect();
    Ok(CpState {
        x,
        y,
        xbar,
        iter: state.iter + 1,
    })
}

fn check_state(state: &CpState, k: &DenseMatrix) -> Result<()> {
    if state.x.len() != k.cols() {
        return Err(Error::mismatch("primal iterate", k.cols(), state.x.len()));
    }
    if state.xbar.len() != k.cols() {
        return Err(Error::mismatch("extrapolated iterate", k.cols(), state.xbar.len()));
    }
    if state.y.len() != k.rows() {
        return Err(Error::mismatch("dual iterate", k.rows(), state.y.len()));
    }
    Ok(())
}

/// Runs exactly `config.max_iter` steps from `(x0, y0, x̄0 = x0)`. The
/// history holds the state after every step when `record_history` is set,
/// and is empty otherwise.
pub fn cp_solve<D, P>(
    x0: Vec<f64>,
    y0: Vec<f64>,
    k: &DenseMatrix,
    prox_dual: D,
    prox_primal: P,
    config: &CpConfig,
) -> Result<(CpState, Vec<CpState>)>
where
    D: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let mut state = CpState::new(x0, y0);
    check_state(&state, k)?;
    let mut history = Vec::with_capacity(if config.record_history { config.max_iter } else { 0 });
    for _ in 0..config.max_iter {
        state = cp_step(&state, k, &prox_dual, &prox_primal, config)?;
        if config.record_history {
            history.push(state.clone());
        }
    }
    Ok((state, history))
}

/// `‖K(x + q)‖₁`, the objective of the substituted dequantization problem.
pub fn dequant_objective(k: &DenseMatrix, x: &[f64], q: &[f64]) -> Result<f64> {
    if x.len() != q.len() {
        return Err(Error::mismatch("dequant objective", q.len(), x.len()));
    }
    let s: Vec<f64> = x.iter().zip(q).map(|(a, b)| a + b).collect();
    Ok(apply(k, &s)?.iter().map(|v| v.abs()).sum())
}

/// Dequantizes one window: runs the primal-dual iteration from zero on the
/// substituted problem and maps back through `ŝ = x + q`.
pub fn solve_dequant_window(
    q: &[f64],
    delta: f64,
    k: &DenseMatrix,
    config: &CpConfig,
) -> Result<(Vec<f64>, Vec<CpState>)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "quantization step must be positive, got {delta}"
        )));
    }
    if !k.is_square() || q.len() != k.cols() {
        return Err(Error::mismatch("dequantization window", k.cols(), q.len()));
    }
    let kq = apply(k, q)?;
    let sigma = config.sigma;
    let primal_ball = LinfBall::new(delta / 2.0)?;
    let prox_dual = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .zip(&kq)
            .map(|(&vi, &ki)| clip(vi + sigma * ki, 1.0))
            .collect()
    };
    let prox_primal = |v: &[f64]| primal_ball.project(v);
    let n = q.len();
    let (state, history) = cp_solve(vec![0.0; n], vec![0.0; n], k, prox_dual, prox_primal, config)?;
    let s_hat = state.x.iter().zip(q).map(|(x, q)| x + q).collect();
    Ok((s_hat, history))
}

/// [`solve_dequant_window`] on a whole quantized signal whose length matches
/// the transform.
pub fn solve_dequant(
    q: &QuantizedSignal,
    k: &OrthonormalTransform,
    config: &CpConfig,
) -> Result<(Vec<f64>, Vec<CpState>)> {
    if q.samples.len() != k.dim() {
        return Err(Error::mismatch("solve_dequant", k.dim(), q.samples.len()));
    }
    solve_dequant_window(&q.samples, q.delta, k.matrix(), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prox::{prox_dual_dequant, prox_primal_dequant};
    use crate::transforms::{build_dct_matrix, norm_inf, random_orthonormal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_sizes() {
        assert_eq!(default_step_sizes(1.0).unwrap(), (1.0, 1.0));
        assert_eq!(default_step_sizes(2.0).unwrap(), (0.5, 0.5));
        assert!(default_step_sizes(0.0).is_err());
        assert!(default_step_sizes(-1.0).is_err());
        let dct = build_dct_matrix(16).unwrap();
        let norm = crate::transforms::operator_norm_estimate(dct.matrix(), 100, 1e-12).unwrap();
        let (s, t) = default_step_sizes(norm).unwrap();
        assert!((s - 1.0).abs() < 1e-10 && (t - 1.0).abs() < 1e-10);
    }

    #[test]
    fn config_validation() {
        assert!(CpConfig::new(1.0, 1.0, 1.0, 10, false, 1.0).is_ok());
        assert!(CpConfig::new(1.0, 1.1, 1.0, 10, false, 1.0).is_err());
        assert!(CpConfig::new(1.0, 1.0, 1.5, 10, false, 1.0).is_err());
        assert!(CpConfig::new(0.0, 1.0, 0.0, 10, false, 1.0).is_err());
        let third = 1.0 / 3.0;
        assert!(CpConfig::new(third, third, 0.0, 1, false, 3.0).is_ok());
    }

    #[test]
    fn zero_state_is_fixed() {
        let k = DenseMatrix::identity(3);
        let cfg = CpConfig::with_defaults(1.0, 5).unwrap();
        let zero = |v: &[f64]| v.iter().map(|x| clip(*x, 1.0)).collect::<Vec<_>>();
        let (state, _) = cp_solve(vec![0.0; 3], vec![0.0; 3], &k, zero, zero, &cfg).unwrap();
        assert_eq!(state.x, vec![0.0; 3]);
        assert_eq!(state.y, vec![0.0; 3]);
        assert_eq!(state.iter, 5);
    }

    #[test]
    fn hand_step_n2() {
        let k = DenseMatrix::identity(2);
        let q = [0.6, 0.0];
        let cfg = CpConfig::new(1.0, 1.0, 0.0, 1, false, 1.0).unwrap();
        let state = CpState::zeros(2);
        let next = cp_step(
            &state,
            &k,
            |v| prox_dual_dequant(v, 1.0, &k, &q).unwrap(),
            |v| prox_primal_dequant(v, 0.5).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(next.y, vec![0.6, 0.0]);
        assert_eq!(next.x, vec![-0.25, 0.0]);
        // θ = 0 leaves no extrapolation
        assert_eq!(next.xbar, next.x);
    }

    #[test]
    fn max_iter_zero_returns_start() {
        let k = DenseMatrix::identity(2);
        let cfg = CpConfig::new(1.0, 1.0, 1.0, 0, true, 1.0).unwrap();
        let id = |v: &[f64]| v.to_vec();
        let (state, history) = cp_solve(vec![0.1, 0.2], vec![0.3, 0.4], &k, id, id, &cfg).unwrap();
        assert_eq!(state, CpState::new(vec![0.1, 0.2], vec![0.3, 0.4]));
        assert!(history.is_empty());
    }

    #[test]
    fn dimension_errors() {
        let k = DenseMatrix::identity(3);
        let cfg = CpConfig::with_defaults(1.0, 1).unwrap();
        let id = |v: &[f64]| v.to_vec();
        assert!(cp_solve(vec![0.0; 2], vec![0.0; 3], &k, id, id, &cfg).is_err());
        assert!(solve_dequant_window(&[0.0; 2], 0.1, &k, &cfg).is_err());
        assert!(solve_dequant_window(&[0.0; 3], 0.0, &k, &cfg).is_err());
    }

    fn random_window(rng: &mut ChaCha8Rng, n: usize, delta: f64) -> Vec<f64> {
        (0..n)
            .map(|_| delta * (rng.random_range(-1.0..1.0) / delta).round())
            .collect()
    }

    #[test]
    fn split_runs_match_straight_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dct = build_dct_matrix(8).unwrap();
        let q = random_window(&mut rng, 8, 0.25);
        let cfg25 = CpConfig::with_defaults(1.0, 25).unwrap().record_history(true);
        let (_, full) = solve_dequant_window(&q, 0.25, dct.matrix(), &cfg25).unwrap();

        let kq = apply(dct.matrix(), &q).unwrap();
        let dual = |v: &[f64]| prox_dual_with_offset_ref(v, 1.0, &kq);
        let primal = |v: &[f64]| prox_primal_dequant(v, 0.25).unwrap();
        let cfg10 = CpConfig::with_defaults(1.0, 10).unwrap();
        let mut state = CpState::zeros(8);
        for _ in 0..10 {
            state = cp_step(&state, dct.matrix(), dual, primal, &cfg10).unwrap();
        }
        for _ in 0..15 {
            state = cp_step(&state, dct.matrix(), dual, primal, &cfg10).unwrap();
        }
        assert_eq!(&state, full.last().unwrap());
    }

    fn prox_dual_with_offset_ref(v: &[f64], sigma: f64, kq: &[f64]) -> Vec<f64> {
        crate::prox::prox_dual_with_offset(v, sigma, kq).unwrap()
    }

    #[test]
    fn iterates_stay_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = random_orthonormal(5, 16).unwrap();
        let delta = 0.2;
        let q = random_window(&mut rng, 16, delta);
        let cfg = CpConfig::with_defaults(1.0, 200).unwrap().record_history(true);
        let (_, history) = solve_dequant_window(&q, delta, k.matrix(), &cfg).unwrap();
        assert_eq!(history.len(), 200);
        for st in &history {
            assert!(norm_inf(&st.x) <= delta / 2.0 + 1e-12);
            assert!(norm_inf(&st.y) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn tiny_delta_returns_quantized_input() {
        let dct = build_dct_matrix(8).unwrap();
        let q = QuantizedSignal {
            samples: vec![0.5, -0.25, 0.0, 0.75, 1.0, -1.0, 0.25, 0.5],
            delta: 1e-12,
        };
        let cfg = CpConfig::with_defaults(1.0, 50).unwrap();
        let (s_hat, _) = solve_dequant(&q, &dct, &cfg).unwrap();
        for (a, b) in s_hat.iter().zip(&q.samples) {
            assert!((a - b).abs() <= 0.5e-12 + 1e-15);
        }
    }

    #[test]
    fn sparse_input_does_not_get_worse() {
        let dct = build_dct_matrix(8).unwrap();
        let mut coeffs = vec![0.0; 8];
        coeffs[2] = 0.9;
        let s = dct.inverse(&coeffs).unwrap();
        let delta = 0.25;
        let q: Vec<f64> = s.iter().map(|v| delta * (v / delta).round()).collect();
        let cfg = CpConfig::with_defaults(1.0, 500).unwrap();
        let (s_hat, _) = solve_dequant_window(&q, delta, dct.matrix(), &cfg).unwrap();
        let x: Vec<f64> = s_hat.iter().zip(&q).map(|(a, b)| a - b).collect();
        let at_solution = dequant_objective(dct.matrix(), &x, &q).unwrap();
        let at_zero = dequant_objective(dct.matrix(), &[0.0; 8], &q).unwrap();
        assert!(at_solution <= at_zero + 1e-12);
    }
}
