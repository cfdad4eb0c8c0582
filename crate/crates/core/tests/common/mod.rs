//! Independent reference computations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use pdrn::network::{forward, init_random, NetworkParams, Variant};
use pdrn::pipeline::quantize_samples;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use pdrn::training::loss;
use pdrn::transforms::DenseMatrix;

const EPS: f64 = 1e-11;

/// Minimizes `cᵀz` subject to `A z = b`, `z ≥ 0` with a dense two-phase
/// tableau simplex and Bland's rule. Returns the optimum and a minimizer, or
/// `None` when the problem is infeasible or unbounded.
pub fn simplex(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Option<(f64, Vec<f64>)> {
    let m = a.len();
    let n = c.len();
    let cols = n + m;
    // rows flipped so that b ≥ 0, artificial variable per row
    let mut t = vec![vec![0.0; cols + 1]; m];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[i][j];
        }
        t[i][n + i] = 1.0;
        t[i][cols] = sign * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let phase1: Vec<f64> = (0..cols).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
    run_simplex(&mut t, &mut basis, &phase1, cols)?;
    let infeasibility: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= n)
        .map(|(i, _)| t[i][cols])
        .sum();
    if infeasibility > 1e-9 {
        return None;
    }
    // pivot remaining (zero-valued) artificials out of the basis
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > EPS) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }
    let mut phase2: Vec<f64> = c.to_vec();
    phase2.extend(std::iter::repeat_n(f64::INFINITY, m));
    run_simplex(&mut t, &mut basis, &phase2, n)?;

    let mut z = vec![0.0; n];
    for (i, &j) in basis.iter().enumerate() {
        if j < n {
            z[j] = t[i][cols];
        }
    }
    let value = z.iter().zip(c).map(|(zi, ci)| zi * ci).sum();
    Some((value, z))
}

/// Pivots until no column below `allowed` has negative reduced cost.
fn run_simplex(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) -> Option<()> {
    let m = t.len();
    let rhs = t[0].len() - 1;
    for _ in 0..100_000 {
        let basic_cost = |i: usize| {
            let c = cost[basis[i]];
            if c.is_finite() {
                c
            } else {
                0.0
            }
        };
        let entering = (0..allowed).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let reduced = cost[j] - (0..m).map(|i| basic_cost(i) * t[i][j]).sum::<f64>();
            reduced < -1e-12
        });
        let Some(j) = entering else {
            return Some(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[i][j] > EPS {
                let ratio = t[i][rhs] / t[i][j];
                let better = match leave {
                    None => true,
                    Some((k, r)) => ratio < r - 1e-14 || (ratio <= r + 1e-14 && basis[i] < basis[k]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let (i, _) = leave?;
        pivot(t, basis, i, j);
    }
    None
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[row].clone();
    for (i, r) in t.iter_mut().enumerate() {
        if i != row {
            let f = r[col];
            if f != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    basis[row] = col;
}

/// `min ‖K(x + q)‖₁` over `‖x‖∞ ≤ Δ/2` as a linear program in
/// `u = x + Δ/2 ∈ [0, Δ]` and `t ≥ |K(x + q)|`. Returns the optimal value
/// and minimizer `x`.
pub fn dequant_lp(k: &DenseMatrix, q: &[f64], delta: f64) -> (f64, Vec<f64>) {
    let n = q.len();
    let half = delta / 2.0;
    // K(x + q) = K u + K(q − Δ/2·1)
    let shift: Vec<f64> = q.iter().map(|v| v - half).collect();
    let offset: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k.get(i, j) * shift[j]).sum()).collect();
    let vars = 2 * n;
    let rows = 3 * n;
    let mut a = vec![vec![0.0; vars + rows]; rows];
    let mut b = vec![0.0; rows];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = k.get(i, j);
            a[n + i][j] = -k.get(i, j);
        }
        a[i][n + i] = -1.0;
        a[n + i][n + i] = -1.0;
        b[i] = -offset[i];
        b[n + i] = offset[i];
        a[2 * n + i][i] = 1.0;
        b[2 * n + i] = delta;
    }
    for r in 0..rows {
        a[r][vars + r] = 1.0;
    }
    let mut c = vec![0.0; vars + rows];
    for ci in &mut c[n..vars] {
        *ci = 1.0;
    }
    let (value, z) = simplex(&a, &b, &c).expect("dequantization LP is feasible and bounded");
    (value, z[..n].iter().map(|u| u - half).collect())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let n = m.rows();
    let mut a = m.to_rows();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Largest singular value as the square root of the top eigenvalue of `MᵀM`.
pub fn spectral_norm(m: &DenseMatrix) -> f64 {
    let gram = m.transpose().matmul(m).unwrap();
    jacobi_eigenvalues(&gram).into_iter().fold(0.0, f64::max).max(0.0).sqrt()
}

/// Smallest distance of any pre-activation to its clip boundary over the
/// given inputs.
pub fn boundary_margin(params: &NetworkParams, inputs: &[Vec<f64>]) -> f64 {
    let r = params.delta() / 2.0;
    let mut margin = f64::INFINITY;
    for q in inputs {
        let (_, cache) = forward(params, q).unwrap();
        for b in &cache.blocks {
            for v in &b.dual_pre {
                margin = margin.min((v.abs() - 1.0).abs());
            }
            for v in &b.primal_pre {
                margin = margin.min((v.abs() - r).abs());
            }
        }
    }
    margin
}

/// Worst relative error between the analytic gradient of the regularized
/// loss and central differences with step `h`. The denominator is floored
/// at `floor` so that entries whose true gradient is zero are compared
/// absolutely.
pub fn gradient_check(
    params: &NetworkParams,
    batch: &[(Vec<f64>, Vec<f64>)],
    lambda: f64,
    h: f64,
    floor: f64,
) -> f64 {
    let (_, grads) = loss(params, batch, lambda).unwrap();
    let analytic: Vec<f64> = grads.tensors().into_iter().flatten().copied().collect();
    let count = analytic.len();
    let mut worst = 0.0_f64;
    for idx in 0..count {
        let eval = |offset: f64| {
            let mut p = params.clone();
            let mut seen = 0;
            for t in p.tensors_mut() {
                if idx < seen + t.len() {
                    t[idx - seen] += offset;
                    break;
                }
                seen += t.len();
            }
            loss(&p, batch, lambda).unwrap().0
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}

/// Random parameters and a two-example batch whose pre-activations all stay
/// at least `min_margin` away from the clip boundaries.
pub fn well_separated_case(
    variant: Variant,
    n: usize,
    depth: usize,
    min_margin: f64,
) -> (NetworkParams, Vec<(Vec<f64>, Vec<f64>)>) {
    let delta = 0.5;
    for seed in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = init_random(seed, depth, n, delta, 0.6, variant).unwrap();
        if variant == Variant::Pdn {
            params = params.with_theta(0.5).unwrap();
        }
        for block in params.blocks_mut() {
            for b in &mut block.b {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..2)
            .map(|_| {
                let s: Vec<f64> = (0..n).map(|_| rng.random_range(-0.9..0.9)).collect();
                (quantize_samples(&s, delta).unwrap(), s)
            })
            .collect();
        let inputs: Vec<Vec<f64>> = batch.iter().map(|(q, _)| q.clone()).collect();
        if boundary_margin(&params, &inputs) >= min_margin {
            return (params, batch);
        }
    }
    panic!("no well-separated case found");
}

