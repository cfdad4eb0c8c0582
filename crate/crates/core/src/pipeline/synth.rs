use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Signal;

/// Parameters of the synthetic test-signal generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Number of cosine components.
    pub components: usize,
    /// Lowest and highest component frequency as a fraction of the signal
    /// length, in DCT-II bins (`k / N`).
    pub band: (f64, f64),
    /// Peak of the uniform noise relative to the clean peak.
    pub noise: f64,
    /// Output peak after normalization.
    pub peak: f64,
    pub sample_rate: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            components: 8,
            band: (1.0 / 256.0, 1.0 / 4.0),
            noise: 1e-3,
            peak: 0.9,
            sample_rate: 16_000,
        }
    }
}

/// Sum of `components` cosines with random signs and `1/f` amplitudes,
/// plus seeded uniform noise, scaled to peak `spec.peak`.
///
/// Each component is a full-length DCT-II atom `cos(π k (2t+1) / (2N))`, so
/// the DCT of the whole signal is `components`-sparse up to the noise floor.
/// Shorter windows cut these atoms off-grid and see leaky, compressible
/// spectra instead.
pub fn synth_signal(seed: u64, length: usize, spec: &SynthSpec) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![0.0; length];
    if length == 0 {
        return Signal {
            samples,
            sample_rate: spec.sample_rate,
        };
    }
    let lo = ((length as f64 * spec.band.0).round() as usize).max(1);
    let hi = ((length as f64 * spec.band.1).round() as usize).max(lo + 1);
    let period = 4 * length;
    for _ in 0..spec.components {
        let bin = rng.random_range(lo..hi);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let amplitude = sign * lo as f64 / bin as f64;
        for (t, s) in samples.iter_mut().enumerate() {
            let phase = ((2 * t + 1) * bin) % period;
            *s += amplitude * (PI * phase as f64 / (2 * length) as f64).cos();
        }
    }
    let clean_peak = samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let noise_amp = spec.noise * if clean_peak > 0.0 { clean_peak } else { 1.0 };
    for s in &mut samples {
        *s += noise_amp * rng.random_range(-1.0..=1.0);
    }
    let peak = samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = spec.peak / peak;
        samples.iter_mut().for_each(|v| *v *= scale);
    }
    Signal {
        samples,
        sample_rate: spec.sample_rate,
    }
}
