//! Unrolled primal-dual networks for dequantization.
//!
//! A PDN block (dual skip connection):
//!
//! ```text
//! x̄  = x + θ (x − x_prev)
//! y⁺ = P₁(W (x̄ + q) + y)
//! x⁺ = P_{Δ/2}(V y⁺ + x)
//! ```
//!
//! A PDRN block replaces the dual skip by a trainable bias:
//!
//! ```text
//! ỹ  = P₁(W (x + q) + b)
//! x⁺ = P_{Δ/2}(V ỹ + x)
//! ```
//!
//! `P_r` clips componentwise to `[-r, r]`. Both networks start from
//! `x = y = 0` and return `ŝ = x^[L] + q`. With `W = σK`, `V = −τKᵀ` and
//! `θ = 0`, a PDN reproduces the primal-dual iteration step for step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::clip;
use crate::transforms::{apply_into, apply_transpose_into, axpy, DenseMatrix, OrthonormalTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Pdn,
    Pdrn,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Pdn => "pdn",
            Variant::Pdrn => "pdrn",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdn" => Ok(Variant::Pdn),
            "pdrn" => Ok(Variant::Pdrn),
            other => Err(Error::InvalidParameter(format!("unknown variant {other:?}"))),
        }
    }
}

/// Weights of one block. `b` is only read by PDRN blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub w: DenseMatrix,
    pub v: DenseMatrix,
    pub b: Vec<f64>,
}

impl BlockParams {
    pub fn zeros(n: usize) -> Self {
        Self {
            w: DenseMatrix::zeros(n, n),
            v: DenseMatrix::zeros(n, n),
            b: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    fn validate(&self, n: usize) -> Result<()> {
        for (name, m) in [("W", &self.w), ("V", &self.v)] {
            if m.rows() != n || m.cols() != n {
                return Err(Error::InvalidDimension(format!(
                    "{name} must be {n}x{n}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if self.b.len() != n {
            return Err(Error::mismatch("bias length", n, self.b.len()));
        }
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bias"));
        }
        Ok(())
    }

    /// Mutable views of `W`, `V`, `b`, in that order.
    fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [self.w.as_mut_slice(), self.v.as_mut_slice(), &mut self.b]
    }

    fn tensors(&self) -> [&[f64]; 3] {
        [self.w.as_slice(), self.v.as_slice(), &self.b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    variant: Variant,
    blocks: Vec<BlockParams>,
    delta: f64,
    theta: f64,
}

impl NetworkParams {
    pub fn new(variant: Variant, blocks: Vec<BlockParams>, delta: f64, theta: f64) -> Result<Self> {
        let n = blocks
            .first()
            .map(BlockParams::dim)
            .ok_or_else(|| Error::InvalidParameter("network needs at least one block".into()))?;
        if n == 0 {
            return Err(Error::InvalidDimension("network dimension must be at least 1".into()));
        }
        for block in &blocks {
            block.validate(n)?;
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "quantization step must be positive, got {delta}"
            )));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!(
                "extrapolation factor must lie in [0, 1], got {theta}"
            )));
        }
        Ok(Self {
            variant,
            blocks,
            delta,
            theta,
        })
    }

    /// All-zero weights; the resulting network is the identity `ŝ = q`.
    pub fn zeros(variant: Variant, depth: usize, n: usize, delta: f64) -> Result<Self> {
        Self::new(variant, (0..depth).map(|_| BlockParams::zeros(n)).collect(), delta, 0.0)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn blocks(&self) -> &[BlockParams] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [BlockParams] {
        &mut self.blocks
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Sets the PDN extrapolation factor. Training keeps it at zero.
    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!(
                "extrapolation factor must lie in [0, 1], got {theta}"
            )));
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].dim()
    }

    /// `Σ ‖W‖²_F + Σ ‖V‖²_F`; biases are not penalized.
    pub fn regularizer(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.w.frobenius_sq() + b.v.frobenius_sq())
            .sum()
    }

    /// Flat views of every parameter tensor: `W`, `V`, `b` per block.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.blocks.iter_mut().flat_map(BlockParams::tensors_mut).collect()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.blocks.iter().flat_map(BlockParams::tensors).collect()
    }
}

/// Gradients with the same layout as [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub blocks: Vec<BlockParams>,
}

impl ParamGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            blocks: (0..params.depth()).map(|_| BlockParams::zeros(params.dim())).collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.blocks.iter().flat_map(BlockParams::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.blocks.iter_mut().flat_map(BlockParams::tensors_mut).collect()
    }

    /// `self += other`, entry by entry in a fixed order.
    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Intermediate vectors of one block, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCache {
    /// Vector multiplied by `W`: `x̄ + q` (PDN) or `x + q` (PDRN).
    pub dual_input: Vec<f64>,
    /// Argument of the dual clip.
    pub dual_pre: Vec<f64>,
    /// `y⁺` (PDN) or `ỹ` (PDRN).
    pub dual_post: Vec<f64>,
    /// Argument of the primal clip.
    pub primal_pre: Vec<f64>,
    /// `x⁺`.
    pub primal_post: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub q: Vec<f64>,
    pub blocks: Vec<BlockCache>,
}

impl ForwardCache {
    /// `x^[L] + q` recomputed from the cached activations.
    pub fn output(&self) -> Vec<f64> {
        let last = self.blocks.last().map_or_else(|| vec![0.0; self.q.len()], |b| b.primal_post.clone());
        last.iter().zip(&self.q).map(|(x, q)| x + q).collect()
    }
}

fn check_len(context: &'static str, n: usize, v: &[f64]) -> Result<()> {
    if v.len() != n {
        return Err(Error::mismatch(context, n, v.len()));
    }
    Ok(())
}

fn dual_then_primal(
    block: &BlockParams,
    dual_input: Vec<f64>,
    dual_skip: &[f64],
    x: &[f64],
    delta: f64,
) -> BlockCache {
    let n = x.len();
    let mut dual_pre = vec![0.0; n];
    apply_into(&block.w, &dual_input, &mut dual_pre);
    for (a, s) in dual_pre.iter_mut().zip(dual_skip) {
        *a += s;
    }
    let dual_post: Vec<f64> = dual_pre.iter().map(|&a| clip(a, 1.0)).collect();

    let mut primal_pre = vec![0.0; n];
    apply_into(&block.v, &dual_post, &mut primal_pre);
    for (c, xi) in primal_pre.iter_mut().zip(x) {
        *c += xi;
    }
    let r = delta / 2.0;
    let primal_post = primal_pre.iter().map(|&c| clip(c, r)).collect();
    BlockCache {
        dual_input,
        dual_pre,
        dual_post,
        primal_pre,
        primal_post,
    }
}

/// One PDN block. Returns `(x⁺, y⁺, cache)`.
pub fn block_forward_pdn(
    block: &BlockParams,
    x: &[f64],
    y: &[f64],
    x_prev: &[f64],
    q: &[f64],
    delta: f64,
    theta: f64,
) -> Result<(Vec<f64>, Vec<f64>, BlockCache)> {
    let n = block.dim();
    for (ctx, v) in [("x", x), ("y", y), ("x_prev", x_prev), ("q", q)] {
        check_len(ctx, n, v)?;
    }
    let dual_input: Vec<f64> = x
        .iter()
        .zip(x_prev)
        .zip(q)
        .map(|((&xi, &pi), &qi)| (xi + theta * (xi - pi)) + qi)
        .collect();
    let cache = dual_then_primal(block, dual_input, y, x, delta);
    Ok((cache.primal_post.clone(), cache.dual_post.clone(), cache))
}

/// One PDRN block. Returns `(x⁺, ỹ, cache)`.
pub fn block_forward_pdrn(
    block: &BlockParams,
    x: &[f64],
    q: &[f64],
    delta: f64,
) -> Result<(Vec<f64>, Vec<f64>, BlockCache)> {
    let n = block.dim();
    check_len("x", n, x)?;
    check_len("q", n, q)?;
    let dual_input: Vec<f64> = x.iter().zip(q).map(|(a, b)| a + b).collect();
    let cache = dual_then_primal(block, dual_input, &block.b, x, delta);
    Ok((cache.primal_post.clone(), cache.dual_post.clone(), cache))
}

/// Runs all blocks from `x^[0] = y^[0] = 0` and returns `ŝ = x^[L] + q`.
pub fn forward(params: &NetworkParams, q: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let n = params.dim();
    check_len("network input", n, q)?;
    let mut x = vec![0.0; n];
    let mut x_prev = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut caches = Vec::with_capacity(params.depth());
    for block in &params.blocks {
        let (x_next, y_next, cache) = match params.variant {
            Variant::Pdn => block_forward_pdn(block, &x, &y, &x_prev, q, params.delta, params.theta)?,
            Variant::Pdrn => block_forward_pdrn(block, &x, q, params.delta)?,
        };
        x_prev = std::mem::replace(&mut x, x_next);
        y = y_next;
        caches.push(cache);
    }
    let s_hat = x.iter().zip(q).map(|(a, b)| a + b).collect();
    Ok((
        s_hat,
        ForwardCache {
            q: q.to_vec(),
            blocks: caches,
        },
    ))
}

/// `1` where `|pre| ≤ r` (boundary included), `0` where the clip saturates.
pub fn clip_grad_mask(pre_activation: &[f64], r: f64) -> Vec<bool> {
    pre_activation.iter().map(|v| v.abs() <= r).collect()
}

/// Gradients of a scalar loss with respect to every weight, given its
/// gradient with respect to `ŝ`.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, grad_shat: &[f64]) -> Result<ParamGrads> {
    let mut grads = ParamGrads::zeros_like(params);
    backward_into(params, cache, grad_shat, &mut grads)?;
    Ok(grads)
}

/// [`backward`] accumulating into `grads` instead of allocating.
pub fn backward_into(
    params: &NetworkParams,
    cache: &ForwardCache,
    grad_shat: &[f64],
    grads: &mut ParamGrads,
) -> Result<()> {
    let n = params.dim();
    if cache.blocks.len() != params.depth() {
        return Err(Error::mismatch("forward cache depth", params.depth(), cache.blocks.len()));
    }
    if grads.blocks.len() != params.depth() {
        return Err(Error::mismatch("gradient depth", params.depth(), grads.blocks.len()));
    }
    check_len("grad_shat", n, grad_shat)?;
    check_len("cached input", n, &cache.q)?;

    let theta = match params.variant {
        Variant::Pdn => params.theta,
        Variant::Pdrn => 0.0,
    };
    let r_primal = params.delta / 2.0;
    let mut g_x = grad_shat.to_vec();
    let mut g_y = vec![0.0; n];
    // gradient owed to the input two blocks back through the extrapolation
    let mut pending = vec![0.0; n];
    let mut g_dual = vec![0.0; n];
    let mut g_primal = vec![0.0; n];
    let mut g_w_input = vec![0.0; n];

    for (l, (block, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let g = &mut grads.blocks[l];

        for i in 0..n {
            g_primal[i] = if bc.primal_pre[i].abs() <= r_primal { g_x[i] } else { 0.0 };
        }
        for (i, &gc) in g_primal.iter().enumerate() {
            if gc != 0.0 {
                axpy(g.v.row_mut(i), gc, &bc.dual_post);
            }
        }

        // ∂/∂y⁺ = incoming dual gradient + Vᵀ ∂/∂(primal pre-activation)
        apply_transpose_into(&block.v, &g_primal, &mut g_dual);
        for i in 0..n {
            let total = g_dual[i] + g_y[i];
            g_dual[i] = if bc.dual_pre[i].abs() <= 1.0 { total } else { 0.0 };
        }
        for (i, &ga) in g_dual.iter().enumerate() {
            if ga != 0.0 {
                axpy(g.w.row_mut(i), ga, &bc.dual_input);
            }
        }
        if params.variant == Variant::Pdrn {
            for (gb, ga) in g.b.iter_mut().zip(&g_dual) {
                *gb += ga;
            }
        }

        apply_transpose_into(&block.w, &g_dual, &mut g_w_input);
        for i in 0..n {
            let to_x = g_primal[i] + (1.0 + theta) * g_w_input[i] + pending[i];
            pending[i] = -theta * g_w_input[i];
            g_x[i] = to_x;
        }
        match params.variant {
            Variant::Pdn => g_y.copy_from_slice(&g_dual),
            Variant::Pdrn => g_y.iter_mut().for_each(|v| *v = 0.0),
        }
    }
    Ok(())
}

/// `W = σK`, `V = −τKᵀ`, `b = 0` in every block. The negative sign on `V`
/// matches the subtraction in the primal update, so a PDN built this way
/// with `θ = 0` equals `depth` primal-dual iterations.
pub fn init_from_cp(
    k: &OrthonormalTransform,
    sigma: f64,
    tau: f64,
    depth: usize,
    delta: f64,
    variant: Variant,
) -> Result<NetworkParams> {
    if depth == 0 {
        return Err(Error::InvalidParameter("network needs at least one block".into()));
    }
    let w = k.matrix().scaled(sigma);
    let v = k.matrix().transpose().scaled(-tau);
    let block = BlockParams {
        w,
        v,
        b: vec![0.0; k.dim()],
    };
    NetworkParams::new(variant, vec![block; depth], delta, 0.0)
}

/// Weights i.i.d. uniform in `[-scale, scale]` from a seeded generator,
/// zero biases.
pub fn init_random(
    seed: u64,
    depth: usize,
    n: usize,
    delta: f64,
    scale: f64,
    variant: Variant,
) -> Result<NetworkParams> {
    if depth == 0 || n == 0 {
        return Err(Error::InvalidParameter("depth and dimension must be at least 1".into()));
    }
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid init scale {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize| -> DenseMatrix {
        let mut m = DenseMatrix::zeros(rows, rows);
        if scale > 0.0 {
            for v in m.as_mut_slice() {
                *v = rng.random_range(-scale..=scale);
            }
        }
        m
    };
    let blocks = (0..depth)
        .map(|_| {
            let w = draw(n);
            let v = draw(n);
            BlockParams { w, v, b: vec![0.0; n] }
        })
        .collect();
    NetworkParams::new(variant, blocks, delta, 0.0)
}
