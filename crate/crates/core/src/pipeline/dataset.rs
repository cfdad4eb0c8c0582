use std::ops::Range;
use std::path::{Path, PathBuf};

use log::warn;

use super::{quantize_samples, reassemble, snr_db, squared_error, Metrics, Signal, WindowSpec};
use crate::error::{Error, Result};
use crate::par;

/// A full-length signal together with its quantized version and the range
/// of its windows in [`Dataset::pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSignal {
    pub name: String,
    pub clean: Vec<f64>,
    pub quantized: Vec<f64>,
    pub windows: Range<usize>,
}

/// One training example: a quantized window and its clean counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub q: Vec<f64>,
    pub s: Vec<f64>,
    pub source: usize,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: WindowSpec,
    pub delta: f64,
    pub sources: Vec<SourceSignal>,
    pub pairs: Vec<WindowPair>,
}

impl Dataset {
    /// Quantizes each signal with step `delta` and cuts both versions into
    /// windows. Signals shorter than one window are skipped.
    pub fn from_signals<I>(signals: I, delta: f64, spec: WindowSpec) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Signal)>,
    {
        let mut sources = Vec::new();
        let mut pairs = Vec::new();
        for (name, signal) in signals {
            if signal.len() < spec.size {
                warn!(
                    "{name}: {} samples is shorter than the window size {}; skipped",
                    signal.len(),
                    spec.size
                );
                continue;
            }
            let quantized = quantize_samples(&signal.samples, delta)?;
            let source = sources.len();
            let start = pairs.len();
            for j in 0..spec.count(signal.len()) {
                let range = j * spec.shift..j * spec.shift + spec.size;
                let q = quantized[range.clone()].to_vec();
                let s = signal.samples[range].to_vec();
                let gap = q.iter().zip(&s).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                if gap > delta / 2.0 + 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "{name}: window {j} violates |q - s| <= delta/2 ({gap} > {})",
                        delta / 2.0
                    )));
                }
                pairs.push(WindowPair {
                    q,
                    s,
                    source,
                    window: j,
                });
            }
            sources.push(SourceSignal {
                name,
                clean: signal.samples,
                quantized,
                windows: start..pairs.len(),
            });
        }
        Ok(Self {
            spec,
            delta,
            sources,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Window size `n`.
    pub fn dim(&self) -> usize {
        self.spec.size
    }

    /// Metrics for per-window estimates given in pair order: MSE over all
    /// windows (normalized by `m·n`) and SNR averaged over reassembled full
    /// signals, with trailing samples filled from the quantized signal.
    pub fn metrics_from_estimates(&self, estimates: &[Vec<f64>]) -> Result<Metrics> {
        if self.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if estimates.len() != self.pairs.len() {
            return Err(Error::mismatch("estimates", self.pairs.len(), estimates.len()));
        }
        let mut total = 0.0;
        for (est, pair) in estimates.iter().zip(&self.pairs) {
            if est.len() != pair.s.len() {
                return Err(Error::mismatch("estimate length", pair.s.len(), est.len()));
            }
            total += squared_error(est, &pair.s);
        }
        let mse = total / (self.pairs.len() * self.dim()) as f64;

        let mut snr_sum = 0.0;
        for src in &self.sources {
            let full = reassemble(&estimates[src.windows.clone()], self.spec, &src.quantized)?;
            snr_sum += snr_db(&src.clean, &full)?;
        }
        Ok(Metrics {
            mse,
            snr_db: snr_sum / self.sources.len() as f64,
        })
    }
}

/// Applies `estimator` to every quantized window (in parallel when enabled)
/// and scores the results with [`Dataset::metrics_from_estimates`].
pub fn evaluate_estimator<F>(dataset: &Dataset, estimator: F) -> Result<Metrics>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync + Send,
{
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let estimates = par::map_ordered(&dataset.pairs, |p| estimator(&p.q))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    dataset.metrics_from_estimates(&estimates)
}

/// Reads a manifest of WAV paths, one per line. Blank lines and lines
/// starting with `#` are ignored; relative paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = Path::new(l);
            if p.is_absolute() {
                p.to_owned()
            } else {
                base.join(p)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{synth_signal, SynthSpec};

    fn small_dataset() -> Dataset {
        let spec = SynthSpec::default();
        let signals = (0..3).map(|i| (format!("s{i}"), synth_signal(i, 70, &spec)));
        Dataset::from_signals(signals, 0.25, WindowSpec::contiguous(16).unwrap()).unwrap()
    }

    #[test]
    fn builds_windows_per_source() {
        let ds = small_dataset();
        assert_eq!(ds.sources.len(), 3);
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.sources[1].windows, 4..8);
        for p in &ds.pairs {
            assert_eq!(p.q.len(), 16);
            let src = &ds.sources[p.source];
            assert_eq!(p.s, src.clean[p.window * 16..p.window * 16 + 16]);
        }
    }

    #[test]
    fn short_signals_are_skipped() {
        let spec = SynthSpec::default();
        let signals = vec![
            ("short".to_string(), synth_signal(1, 8, &spec)),
            ("long".to_string(), synth_signal(2, 32, &spec)),
        ];
        let ds = Dataset::from_signals(signals, 0.25, WindowSpec::contiguous(16).unwrap()).unwrap();
        assert_eq!(ds.sources.len(), 1);
        assert_eq!(ds.sources[0].name, "long");
    }

    #[test]
    fn identity_estimator_scores_quantization_error() {
        let ds = small_dataset();
        let m = evaluate_estimator(&ds, |q| Ok(q.to_vec())).unwrap();
        let direct: f64 = ds
            .pairs
            .iter()
            .map(|p| squared_error(&p.q, &p.s))
            .sum::<f64>()
            / (ds.len() * 16) as f64;
        assert_eq!(m.mse, direct);
        let perfect: Vec<Vec<f64>> = ds.pairs.iter().map(|p| p.s.clone()).collect();
        let m = ds.metrics_from_estimates(&perfect).unwrap();
        assert_eq!(m.mse, 0.0);
        // trailing samples come from q, so the SNR is finite but large
        assert!(m.snr_db > 10.0);
    }

    #[test]
    fn manifest_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("list.txt");
        std::fs::write(&path, "a.wav\n\n# comment\n/abs/b.wav\n").unwrap();
        let paths = read_manifest(&path).unwrap();
        assert_eq!(paths, vec![dir.path().join("a.wav"), PathBuf::from("/abs/b.wav")]);
    }
}
