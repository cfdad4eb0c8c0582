//! Mean-squared-error training of unrolled networks with ℓ2 weight decay
//! and Adam.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{backward_into, forward, NetworkParams, ParamGrads};
use crate::par;
use crate::pipeline::{evaluate_estimator, squared_error, Dataset, Metrics, WindowPair};

/// Examples per gradient work unit. Units are summed in order, so results
/// do not depend on how many threads process them.
const GRAD_CHUNK: usize = 16;

/// A `(q, s)` training pair.
pub trait Example {
    fn quantized(&self) -> &[f64];
    fn clean(&self) -> &[f64];
}

impl Example for WindowPair {
    fn quantized(&self) -> &[f64] {
        &self.q
    }
    fn clean(&self) -> &[f64] {
        &self.s
    }
}

impl Example for (Vec<f64>, Vec<f64>) {
    fn quantized(&self) -> &[f64] {
        &self.0
    }
    fn clean(&self) -> &[f64] {
        &self.1
    }
}

impl<E: Example + ?Sized> Example for &E {
    fn quantized(&self) -> &[f64] {
        (**self).quantized()
    }
    fn clean(&self) -> &[f64] {
        (**self).clean()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 1000,
            batch_size: 128,
            lambda: 0.0,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        // lr = 0 is allowed: it freezes the parameters
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be nonnegative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!(
                "Adam betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            ));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("Adam epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        Ok(())
    }
}

/// Adam moment estimates, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One Adam update with bias correction:
/// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// `p ← p − lr · m̂ / (√v̂ + ε)`.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut NetworkParams,
    grads: &ParamGrads,
    config: &TrainConfig,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    let mut param_tensors = params.tensors_mut();
    if grad_tensors.len() != param_tensors.len()
        || state.m.len() != param_tensors.len()
        || state.v.len() != param_tensors.len()
    {
        return Err(Error::mismatch("Adam tensor count", param_tensors.len(), grad_tensors.len()));
    }
    for (i, (p, g)) in param_tensors.iter().zip(&grad_tensors).enumerate() {
        if p.len() != g.len() || state.m[i].len() != p.len() || state.v[i].len() != p.len() {
            return Err(Error::mismatch("Adam tensor shape", p.len(), g.len()));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in param_tensors.iter_mut().zip(&grad_tensors).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            p[j] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

/// Sum of squared errors and unnormalized data gradients
/// `Σ ∂‖h(q) − s‖² / ∂Θ · scale` over `batch`.
fn batch_gradients<E: Example + Sync>(
    params: &NetworkParams,
    batch: &[E],
    scale: f64,
) -> Result<(f64, ParamGrads)> {
    let n = params.dim();
    let chunks: Vec<&[E]> = batch.chunks(GRAD_CHUNK).collect();
    let partials = par::map_ordered(&chunks, |chunk| -> Result<(f64, ParamGrads)> {
        let mut grads = ParamGrads::zeros_like(params);
        let mut sq = 0.0;
        let mut grad_shat = vec![0.0; n];
        for ex in chunk.iter() {
            let (q, s) = (ex.quantized(), ex.clean());
            if s.len() != n {
                return Err(Error::mismatch("training target", n, s.len()));
            }
            let (s_hat, cache) = forward(params, q)?;
            sq += squared_error(&s_hat, s);
            for j in 0..n {
                grad_shat[j] = 2.0 * scale * (s_hat[j] - s[j]);
            }
            backward_into(params, &cache, &grad_shat, &mut grads)?;
        }
        Ok((sq, grads))
    });
    let mut partials = partials.into_iter();
    let (mut sq, mut grads) = partials.next().ok_or(Error::Empty("batch"))??;
    for part in partials {
        let (s, g) = part?;
        sq += s;
        grads.add_assign(&g);
    }
    Ok((sq, grads))
}

/// Regularized objective `(1/(m·n)) Σ ‖h(qⁱ) − sⁱ‖² + λ R(Θ)` and its
/// gradient, with `R` the squared Frobenius norm of all `W` and `V`.
pub fn loss<E: Example + Sync>(
    params: &NetworkParams,
    batch: &[E],
    lambda: f64,
) -> Result<(f64, ParamGrads)> {
    let (data, grads) = data_loss(params, batch, lambda)?;
    Ok((data + lambda * params.regularizer(), grads))
}

/// Returns the data term alone plus the full regularized gradient.
fn data_loss<E: Example + Sync>(
    params: &NetworkParams,
    batch: &[E],
    lambda: f64,
) -> Result<(f64, ParamGrads)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let norm = 1.0 / (batch.len() * params.dim()) as f64;
    let (sq, mut grads) = batch_gradients(params, batch, norm)?;
    if lambda > 0.0 {
        for (g, p) in grads.blocks.iter_mut().zip(params.blocks()) {
            for (gi, pi) in g.w.as_mut_slice().iter_mut().zip(p.w.as_slice()) {
                *gi += 2.0 * lambda * pi;
            }
            for (gi, pi) in g.v.as_mut_slice().iter_mut().zip(p.v.as_slice()) {
                *gi += 2.0 * lambda * pi;
            }
        }
    }
    Ok((sq * norm, grads))
}

/// `(1/(m·n)) Σ ‖h(qⁱ) − sⁱ‖²` without the regularizer.
pub fn window_mse<E: Example + Sync>(params: &NetworkParams, examples: &[E]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("examples"));
    }
    let errors = par::map_ordered(examples, |ex| -> Result<f64> {
        let (s_hat, _) = forward(params, ex.quantized())?;
        if ex.clean().len() != s_hat.len() {
            return Err(Error::mismatch("target", s_hat.len(), ex.clean().len()));
        }
        Ok(squared_error(&s_hat, ex.clean()))
    });
    let mut total = 0.0;
    for e in errors {
        total += e?;
    }
    Ok(total / (examples.len() * params.dim()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch MSEs seen during the epoch.
    pub train_mse: f64,
    /// Development MSE with the parameters at the end of the epoch.
    pub dev_mse: f64,
    /// Sample-weighted mean of the regularized batch losses.
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Epoch record with the lowest development MSE (earliest on ties).
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.dev_mse <= r.dev_mse => Some(b),
                _ => Some(r),
            })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: TrainHistory,
    /// Snapshot with the lowest development MSE; `net0` if no epoch ran.
    pub best_params: NetworkParams,
}

/// Mini-batch Adam on the regularized MSE. Each epoch reshuffles the
/// training examples (when enabled), takes one step per batch including the
/// final short one, and evaluates the development MSE afterwards.
pub fn train<E: Example + Sync>(
    train_set: &[E],
    dev_set: &[E],
    net0: NetworkParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if dev_set.is_empty() {
        return Err(Error::Empty("development set"));
    }
    let mut params = net0;
    let mut best_params = params.clone();
    let mut best_dev = f64::INFINITY;
    let mut history = TrainHistory::default();
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let total = train_set.len() as f64;

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut mse_acc = 0.0;
        let mut loss_acc = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&E> = idx.iter().map(|&i| &train_set[i]).collect();
            let reg = params.regularizer();
            let (data, grads) = data_loss(&params, &batch, config.lambda)?;
            let weight = batch.len() as f64 / total;
            mse_acc += weight * data;
            loss_acc += weight * (data + config.lambda * reg);
            adam_step(&mut adam, &mut params, &grads, config)?;
        }
        let dev_mse = window_mse(&params, dev_set)?;
        if !dev_mse.is_finite() {
            return Err(Error::NonFinite("development MSE"));
        }
        if dev_mse < best_dev {
            best_dev = dev_mse;
            best_params = params.clone();
        }
        debug!("epoch {epoch}: train {mse_acc:.6e} dev {dev_mse:.6e} loss {loss_acc:.6e}");
        history.epochs.push(EpochRecord {
            epoch,
            train_mse: mse_acc,
            dev_mse,
            loss: loss_acc,
        });
    }
    Ok(TrainOutcome {
        params,
        history,
        best_params,
    })
}

/// Window MSE and full-signal SNR of the network on `dataset`.
pub fn evaluate(params: &NetworkParams, dataset: &Dataset) -> Result<Metrics> {
    if dataset.dim() != params.dim() {
        return Err(Error::mismatch("dataset window size", params.dim(), dataset.dim()));
    }
    evaluate_estimator(dataset, |q| Ok(forward(params, q)?.0))
}
