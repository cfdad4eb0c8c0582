//! Signal handling for dequantization experiments: uniform quantization,
//! rectangular windowing, error metrics, and whole-signal dataset splits.

mod dataset;
mod synth;
mod wav;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{evaluate_estimator, read_manifest, Dataset, SourceSignal, WindowPair};
pub use synth::{synth_signal, SynthSpec};
pub use wav::{load_wav, write_wav};

/// SNR reported when the reconstruction error is numerically zero.
pub const SNR_CAP_DB: f64 = 300.0;

/// Samples normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal samples"));
        }
        if let Some(v) = samples.iter().find(|v| v.abs() > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "signal sample {v} lies outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Samples on the midtread grid `Δ·ℤ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedSignal {
    pub samples: Vec<f64>,
    pub delta: f64,
}

/// Rectangular window size `n` and shift `s`, `1 ≤ s ≤ n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub size: usize,
    pub shift: usize,
}

impl WindowSpec {
    pub fn new(size: usize, shift: usize) -> Result<Self> {
        if size == 0 || shift == 0 || shift > size {
            return Err(Error::InvalidParameter(format!(
                "window spec needs 1 <= shift <= size, got size={size}, shift={shift}"
            )));
        }
        Ok(Self { size, shift })
    }

    /// Non-overlapping windows of `size` samples.
    pub fn contiguous(size: usize) -> Result<Self> {
        Self::new(size, size)
    }

    /// `⌊(N − n)/s⌋ + 1` for `N ≥ n`, zero otherwise.
    pub fn count(&self, total_len: usize) -> usize {
        if total_len < self.size {
            0
        } else {
            (total_len - self.size) / self.shift + 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub snr_db: f64,
}

/// Midtread uniform quantizer `q = Δ·round(s/Δ)`, rounding half away from
/// zero, so `‖s − q‖∞ ≤ Δ/2`.
pub fn quantize_uniform(sig: &Signal, delta: f64) -> Result<QuantizedSignal> {
    Ok(QuantizedSignal {
        samples: quantize_samples(&sig.samples, delta)?,
        delta,
    })
}

pub fn quantize_samples(samples: &[f64], delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "quantization step must be positive, got {delta}"
        )));
    }
    Ok(samples.iter().map(|&s| delta * (s / delta).round()).collect())
}

/// Step size of a `bits`-bit midtread quantizer over `[-1, 1]`:
/// `Δ = 2 / (2^bits − 1)`.
pub fn delta_from_bits(bits: u32) -> Result<f64> {
    if bits == 0 || bits > 52 {
        return Err(Error::InvalidParameter(format!(
            "bit depth must lie in 1..=52, got {bits}"
        )));
    }
    Ok(2.0 / ((1u64 << bits) - 1) as f64)
}

/// Windows `x[j·s .. j·s + n]` for `j = 0..=⌊(N − n)/s⌋`; trailing samples
/// past the last full window are dropped.
pub fn split_windows(x: &[f64], spec: WindowSpec) -> Result<Vec<Vec<f64>>> {
    if x.len() < spec.size {
        return Err(Error::InvalidDimension(format!(
            "signal of length {} is shorter than the window size {}",
            x.len(),
            spec.size
        )));
    }
    Ok((0..spec.count(x.len()))
        .map(|j| x[j * spec.shift..j * spec.shift + spec.size].to_vec())
        .collect())
}

/// Inverse of [`split_windows`] for a signal of length `fill.len()`.
/// Overlapping samples are averaged; samples past the last window are taken
/// from `fill`.
pub fn reassemble(windows: &[Vec<f64>], spec: WindowSpec, fill: &[f64]) -> Result<Vec<f64>> {
    let total = fill.len();
    let expected = spec.count(total);
    if windows.len() != expected {
        return Err(Error::mismatch("reassemble window count", expected, windows.len()));
    }
    if let Some(w) = windows.iter().find(|w| w.len() != spec.size) {
        return Err(Error::mismatch("reassemble window length", spec.size, w.len()));
    }
    let mut out = fill.to_vec();
    if windows.is_empty() {
        return Ok(out);
    }
    if spec.shift == spec.size {
        for (j, w) in windows.iter().enumerate() {
            out[j * spec.size..(j + 1) * spec.size].copy_from_slice(w);
        }
        return Ok(out);
    }
    let covered = (windows.len() - 1) * spec.shift + spec.size;
    let mut sums = vec![0.0; covered];
    let mut counts = vec![0u32; covered];
    for (j, w) in windows.iter().enumerate() {
        let start = j * spec.shift;
        for (t, &v) in w.iter().enumerate() {
            sums[start + t] += v;
            counts[start + t] += 1;
        }
    }
    for t in 0..covered {
        out[t] = sums[t] / f64::from(counts[t]);
    }
    Ok(out)
}

/// Mean squared difference.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::mismatch("mse", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Empty("mse inputs"));
    }
    Ok(squared_error(a, b) / a.len() as f64)
}

pub(crate) fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `10·log10(‖ref‖² / ‖ref − est‖²)`, capped at [`SNR_CAP_DB`] once the
/// error norm drops below `1e-15·‖ref‖`.
pub fn snr_db(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::mismatch("snr", reference.len(), estimate.len()));
    }
    let signal: f64 = reference.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::InvalidParameter("SNR reference signal is zero".into()));
    }
    let noise = squared_error(reference, estimate);
    if noise.sqrt() < 1e-15 * signal.sqrt() {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

/// Index partition written to the split sidecar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub seed: u64,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded permutation of `0..count` cut into train/dev/test. Dev and test
/// receive `⌊count·ratio⌋` items each; train receives the remainder.
pub fn split_indices(count: usize, ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if count == 0 {
        return Err(Error::Empty("signals to split"));
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split ratios must be nonnegative and sum to 1, got {ratios:?}"
        )));
    }
    // slack keeps exact products such as 720·0.15 from flooring down
    let portion = |r: f64| ((count as f64 * r) + 1e-9).floor() as usize;
    let dev_len = portion(ratios[1]);
    let test_len = portion(ratios[2]);
    let train_len = count - dev_len - test_len;

    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(train_len + dev_len);
    let dev = order.split_off(train_len);
    Ok(SplitIndices {
        seed,
        train: order,
        dev,
        test,
    })
}

/// Splits whole signals (never windows) into train/dev/test.
pub fn split_dataset<T: Clone>(
    signals: &[T],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let idx = split_indices(signals.len(), ratios, seed)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| signals[i].clone()).collect();
    Ok((pick(&idx.train), pick(&idx.dev), pick(&idx.test)))
}
